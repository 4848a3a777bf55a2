// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include "gags/scene_io.hpp"

#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "gags/image_io.hpp"
#include "gags/manifest.hpp"
#include "gags/ply_io.hpp"
#include "gags/query.hpp"

namespace gags {

std::string view_stem(int view) {
    char buffer[32];
    std::snprintf(buffer, sizeof buffer, "view%03d", view);
    return buffer;
}

void save_scene_bundle(const Scene& scene, const std::string& dir, int threads) {
    std::filesystem::create_directories(dir + "/gt");
    save_field(scene.field, dir + "/field.ply");
    write_json_file(dir + "/cameras.json", cameras_to_json(scene.cameras));
    write_json_file(dir + "/codebook.json", scene.codebook.to_json());
    write_json_file(dir + "/labels.json", scene.labels.to_json());

    // distinct labels per level with their instance ids
    std::array<std::map<std::string, std::vector<std::uint32_t>>, 3> by_label;
    for (int l = 0; l < 3; ++l)
        for (std::size_t i = 0; i < scene.labels.region_labels[l].size(); ++i)
            by_label[l][scene.labels.region_labels[l][i]].push_back(
                static_cast<std::uint32_t>(i + 1));

    nlohmann::json entries = nlohmann::json::array();
    for (int v = 0; v < static_cast<int>(scene.cameras.size()); ++v) {
        auto gt = render_gt_labels(scene.field, scene.cameras[v], scene.labels, threads);
        for (int l = 0; l < 3; ++l) {
            std::string map_path = "gt/" + view_stem(v) + "_" + kLevelNames[l] + ".pgm";
            write_mask(dir + "/" + map_path, gt[l]);
            for (const auto& [label, ids] : by_label[l]) {
                Image<std::uint8_t> mask(gt[l].width(), gt[l].height(), 0);
                std::set<std::uint32_t> wanted(ids.begin(), ids.end());
                for (int y = 0; y < gt[l].height(); ++y)
                    for (int x = 0; x < gt[l].width(); ++x)
                        if (wanted.count(gt[l](x, y))) mask(x, y) = 1;
                GtBox box = mask_bbox(mask);
                entries.push_back({{"label", label},
                                   {"level", kLevelNames[l]},
                                   {"view", v},
                                   {"region_ids", ids},
                                   {"gt_map", map_path},
                                   {"box", {box.x0, box.y0, box.x1, box.y1}},
                                   {"empty", box.empty()}});
            }
        }
    }
    write_json_file(dir + "/gt.json",
                    {{"schema_version", 1},
                     {"views", static_cast<int>(scene.cameras.size())},
                     {"entries", entries}});
}

SceneBundle load_scene_bundle(const std::string& dir) {
    SceneBundle bundle;
    bundle.field = load_field<double>(dir + "/field.ply");
    bundle.cameras = cameras_from_json(load_json_file(dir + "/cameras.json"));
    bundle.codebook = Codebook::from_json(load_json_file(dir + "/codebook.json"));
    bundle.labels = SceneLabels::from_json(load_json_file(dir + "/labels.json"));
    if (bundle.labels.gaussian_regions.size() != bundle.field.size())
        throw DataError("scene bundle labels do not match the field");
    return bundle;
}

}  // namespace gags
