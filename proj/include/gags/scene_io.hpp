// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "gags/oracle.hpp"

namespace gags {

/// On-disk scene bundle layout:
///   field.ply, cameras.json, codebook.json, labels.json,
///   gt/view###_{s,p,w}.pgm   (per-view instance-id maps)
///   gt.json                  (per label/level/view boxes + map references)
void save_scene_bundle(const Scene& scene, const std::string& dir, int threads = 1);

struct SceneBundle {
    GaussianFieldd field;
    std::vector<Camerad> cameras;
    SceneLabels labels;
    Codebook codebook;
};

SceneBundle load_scene_bundle(const std::string& dir);

std::string view_stem(int view);  // "view007"

}  // namespace gags
