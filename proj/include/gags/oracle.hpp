// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gags/camera.hpp"
#include "gags/gaussian.hpp"
#include "gags/image.hpp"
#include "gags/prompt.hpp"
#include "gags/splat.hpp"

namespace gags {

// Granularity levels, indexed consistently everywhere.
enum Level : int { kSub = 0, kPart = 1, kWhole = 2 };
inline constexpr std::array<const char*, 3> kLevelNames = {"s", "p", "w"};

/// Unit-norm embedding table: per-label features, the four canonical
/// phrases, and a text-query table.
struct Codebook {
    static const std::array<std::string, 4> kCanonicalNames;  // object, things, stuff, texture

    int dim = 32;
    std::map<std::string, Eigen::VectorXd> features;
    std::array<Eigen::VectorXd, 4> canonical;
    std::map<std::string, Eigen::VectorXd> text;

    /// Orthonormal vectors when they fit in `dim`, random unit vectors
    /// otherwise (with a warning).
    static Codebook generate(const std::vector<std::string>& labels, int dim,
                             std::uint64_t seed);

    const Eigen::VectorXd& feature(const std::string& label) const;
    const Eigen::VectorXd& text_embedding(const std::string& label) const;
    void validate() const;

    nlohmann::json to_json() const;
    static Codebook from_json(const nlohmann::json& j);
};

struct SceneNode {
    std::string label;
    enum class Shape { Box, Sphere, Disk } shape = Shape::Sphere;
    Vec3<double> center = Vec3<double>::Zero();
    Vec3<double> extent = Vec3<double>::Ones();  // half-extents / radii
    std::vector<SceneNode> parts;
};

struct CameraRing {
    int count = 20;
    double radius_min = 2.0, radius_max = 3.0;
    double height = 1.5;
    Vec3<double> look_at = Vec3<double>::Zero();
    int image_width = 128, image_height = 128;
    double fov_y_deg = 55.0;
    double near_clip = 0.1, far_clip = 100.0;
};

struct SceneSpec {
    std::uint64_t seed = 1;
    double gaussians_per_unit_area = 400.0;
    int feature_dim = 16;
    int codebook_dim = 32;
    // cosine between a node's embedding and its parent's; 0 keeps all labels
    // mutually orthogonal, larger values mimic the correlated embeddings of
    // related concepts
    double codebook_parent_mix = 0.0;
    // declared near-synonym label pairs (a, b, cosine): b is remixed toward a,
    // modeling confusable concepts whose text embeddings almost coincide
    struct Synonym {
        std::string a, b;
        double cosine = 0.9;
    };
    std::vector<Synonym> codebook_synonyms;
    CameraRing ring;
    std::vector<SceneNode> objects;

    nlohmann::json to_json() const;
    static SceneSpec from_json(const nlohmann::json& j);
};

/// Ground-truth region structure of a generated scene: per-level instance
/// labels and the (sub, part, whole) instance triple of every Gaussian.
struct SceneLabels {
    std::array<std::vector<std::string>, 3> region_labels;       // index id-1
    std::vector<std::array<std::uint32_t, 3>> gaussian_regions;  // 1-based ids

    nlohmann::json to_json() const;
    static SceneLabels from_json(const nlohmann::json& j);
};

struct Scene {
    GaussianFieldd field;
    std::vector<Camerad> cameras;
    SceneLabels labels;
    Codebook codebook;
};

/// Samples Gaussians on the surfaces of the spec's primitives, tags each
/// with its three-level instance ids, and places a camera ring whose radius
/// sweeps [radius_min, radius_max].
Scene gen_scene(const SceneSpec& spec);

/// Per-pixel ground-truth instance ids at the three levels, via the
/// dominant contributor of a label render pass. 0 = no coverage.
std::array<Image<std::uint32_t>, 3> render_gt_labels(const GaussianFieldd& field,
                                                     const Camerad& camera,
                                                     const SceneLabels& labels,
                                                     int threads = 1);

struct RegionEntry {
    std::uint32_t id = 0;
    long pixels = 0;
    std::string label;  // empty for ingested data
};

struct GranularityMasks {
    std::array<Image<std::uint32_t>, 3> level;          // 0 = unassigned
    std::array<std::vector<RegionEntry>, 3> regions;    // ascending id

    const RegionEntry* find_region(int lvl, std::uint32_t id) const;
};

struct GranularityFeatures {
    int dim = 0;
    // feats[level][id] is the unit feature of region id; index 0 unused.
    // A zero-sized vector marks a missing entry.
    std::array<std::vector<Eigen::VectorXd>, 3> feats;

    bool has(int lvl, std::uint32_t id) const {
        return id < feats[lvl].size() && feats[lvl][id].size() > 0;
    }
};

struct SegmentNoise {
    std::array<double, 3> p_drop = {0.0, 0.0, 0.0};
    std::array<double, 3> p_merge = {0.0, 0.0, 0.0};
    // regions with fewer prompt points than this may merge into a neighbor
    int merge_prompt_threshold = 3;
};

/// Synthetic segmenter: every prompted ground-truth region appears at all
/// three levels; unprompted regions stay unassigned. Noise models the
/// view-inconsistency failure modes: random region drops and density-driven
/// merges of under-prompted regions into their strongest neighbor.
GranularityMasks synth_segment(const std::array<Image<std::uint32_t>, 3>& gt,
                               const std::vector<PromptPoint>& prompts,
                               const SceneLabels& labels,
                               const SegmentNoise& noise, std::uint64_t seed);

/// Synthetic embedder: each region's codebook vector rotated by exactly
/// level_noise[level] radians in a random direction (fresh per region and
/// per call), then renormalized. Zero noise reproduces the codebook.
GranularityFeatures synth_embed(const GranularityMasks& masks,
                                const Codebook& codebook,
                                const std::array<double, 3>& level_noise,
                                std::uint64_t seed);

/// Bridge to real segmenter/embedder outputs: per-level mask images and
/// per-level (num_regions+1, C) feature tables. Features are renormalized;
/// drift beyond 1e-3 is reported via warning.
std::pair<GranularityMasks, GranularityFeatures> ingest(
    const std::array<std::string, 3>& mask_paths,
    const std::array<std::string, 3>& feature_paths);

// JSON round trip for camera lists.
nlohmann::json cameras_to_json(const std::vector<Camerad>& cams);
std::vector<Camerad> cameras_from_json(const nlohmann::json& j);

}  // namespace gags
