// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>

#include "gags/image_io.hpp"
#include "gags/oracle.hpp"
#include "gags/tensor_file.hpp"
#include "testutil.hpp"

using namespace gags;

namespace {

SceneNode sphere(const std::string& label, const Vec3<double>& center, double r) {
    SceneNode n;
    n.label = label;
    n.shape = SceneNode::Shape::Sphere;
    n.center = center;
    n.extent = Vec3<double>::Constant(r);
    return n;
}

SceneNode box(const std::string& label, const Vec3<double>& center,
              const Vec3<double>& half) {
    SceneNode n;
    n.label = label;
    n.shape = SceneNode::Shape::Box;
    n.center = center;
    n.extent = half;
    return n;
}

SceneSpec tiny_spec() {
    SceneSpec spec;
    spec.seed = 5;
    spec.gaussians_per_unit_area = 200.0;
    spec.feature_dim = 4;
    spec.codebook_dim = 16;
    spec.ring.count = 4;
    spec.ring.radius_min = 2.0;
    spec.ring.radius_max = 3.0;
    spec.ring.height = 1.0;
    spec.ring.image_width = 64;
    spec.ring.image_height = 64;
    spec.objects.push_back(sphere("ball", {0, 0, 0}, 0.4));
    return spec;
}

std::vector<PromptPoint> dense_grid_prompts(int w, int h, int step) {
    std::vector<PromptPoint> pts;
    for (int y = step / 2; y < h; y += step)
        for (int x = step / 2; x < w; x += step) pts.push_back({x, y, 0});
    return pts;
}

}  // namespace

TEST_CASE("single-primitive scenes share one whole label") {
    Scene scene = gen_scene(tiny_spec());
    CHECK(scene.field.size() > 50);
    scene.field.validate();
    std::set<std::uint32_t> whole_ids;
    for (const auto& ids : scene.labels.gaussian_regions) whole_ids.insert(ids[kWhole]);
    CHECK(whole_ids.size() == 1);
    // flat object: mirror instances exist at part and sub level
    CHECK(scene.labels.region_labels[kPart].size() == 1);
    CHECK(scene.labels.region_labels[kSub].size() == 1);
    CHECK(scene.labels.region_labels[kSub][0] == "ball");
}

TEST_CASE("disjoint objects never share gaussians") {
    SceneSpec spec = tiny_spec();
    spec.objects.clear();
    spec.objects.push_back(box("left", {-1, 0, 0}, {0.3, 0.3, 0.3}));
    spec.objects.push_back(box("right", {1, 0, 0}, {0.3, 0.3, 0.3}));
    Scene scene = gen_scene(spec);
    std::set<std::uint32_t> ids;
    for (std::size_t i = 0; i < scene.field.size(); ++i) {
        std::uint32_t whole = scene.labels.gaussian_regions[i][kWhole];
        ids.insert(whole);
        // box surfaces are disjoint: a gaussian's position identifies its object
        bool on_left = scene.field.gaussians[i].position.x() < 0;
        CHECK(whole == (on_left ? 1u : 2u));
    }
    CHECK(ids.size() == 2);
}

TEST_CASE("degenerate primitives are rejected") {
    SceneSpec spec = tiny_spec();
    spec.objects[0].extent.setZero();
    CHECK_THROWS_AS(gen_scene(spec), DataError);
}

TEST_CASE("ring radii produce matching apparent sizes") {
    SceneSpec spec = tiny_spec();
    spec.ring.count = 2;
    spec.ring.radius_min = 2.0;
    spec.ring.radius_max = 6.0;
    spec.ring.height = 0.0;  // distances are exactly the radii
    spec.ring.image_width = spec.ring.image_height = 128;
    Scene scene = gen_scene(spec);

    auto apparent_width = [&](const Camerad& cam) {
        RenderOptions<double> opts;
        opts.skip_features = true;
        RenderOutput<double> ro = render(scene.field, cam, opts);
        int lo = 128, hi = -1;
        for (int y = 0; y < 128; ++y)
            for (int x = 0; x < 128; ++x)
                if (ro.covered(x, y)) {
                    lo = std::min(lo, x);
                    hi = std::max(hi, x);
                }
        return hi - lo + 1;
    };
    double near_w = apparent_width(scene.cameras[0]);
    double far_w = apparent_width(scene.cameras[1]);
    CHECK(near_w / far_w == doctest::Approx(3.0).epsilon(0.2));
}

TEST_CASE("expected depth stays above min depth on surface scenes") {
    // the spread-scale version of the md <= D sweep, on an opaque surface
    // with enough views that every gaussian gets a frontal look
    SceneSpec spec = tiny_spec();
    spec.ring.count = 12;
    Scene scene = gen_scene(spec);
    compute_min_depth(scene.field, scene.cameras);
    double spread = 0.0;
    for (const auto& g : scene.field.gaussians)
        spread = std::max(spread, 6.0 * g.scale.maxCoeff());
    for (const auto& cam : scene.cameras) {
        RenderOutput<double> ro = render(scene.field, cam);
        MinDepthMap<double> md = min_depth_map(ro, scene.field);
        for (int y = 0; y < ro.height; ++y)
            for (int x = 0; x < ro.width; ++x) {
                if (!md.valid(x, y)) continue;
                CHECK(md.md(x, y) <= ro.depth(x, y) + spread);
            }
    }
}

TEST_CASE("faithful oracle: full prompting reproduces the GT decomposition") {
    SceneSpec spec = tiny_spec();
    spec.objects.push_back(box("crate", {1.0, 0, 0}, {0.3, 0.3, 0.3}));
    Scene scene = gen_scene(spec);
    auto gt = render_gt_labels(scene.field, scene.cameras[0], scene.labels);

    auto prompts = dense_grid_prompts(64, 64, 2);
    GranularityMasks masks =
        synth_segment(gt, prompts, scene.labels, SegmentNoise{}, 3);
    for (int l = 0; l < 3; ++l) {
        // every pixel equal up to the contiguous renumbering (identity here,
        // since activation follows ascending gt ids)
        std::map<std::uint32_t, std::uint32_t> mapping;
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                std::uint32_t want = gt[l](x, y);
                std::uint32_t got = masks.level[l](x, y);
                CHECK((want == 0) == (got == 0));
                if (want == 0) continue;
                auto it = mapping.find(want);
                if (it == mapping.end())
                    mapping[want] = got;
                else
                    CHECK(it->second == got);
            }
    }
    // region table pixel counts match the maps
    for (int l = 0; l < 3; ++l) {
        std::map<std::uint32_t, long> counts;
        for (std::size_t i = 0; i < masks.level[l].size(); ++i)
            if (masks.level[l][i]) ++counts[masks.level[l][i]];
        for (const auto& r : masks.regions[l]) {
            CHECK(counts[r.id] == r.pixels);
            CHECK(!r.label.empty());
        }
    }
}

TEST_CASE("drop noise with p=1 empties the chosen level") {
    Scene scene = gen_scene(tiny_spec());
    auto gt = render_gt_labels(scene.field, scene.cameras[0], scene.labels);
    SegmentNoise noise;
    noise.p_drop[kSub] = 1.0;
    GranularityMasks masks = synth_segment(gt, dense_grid_prompts(64, 64, 4),
                                           scene.labels, noise, 3);
    CHECK(masks.regions[kSub].empty());
    for (std::size_t i = 0; i < masks.level[kSub].size(); ++i)
        CHECK(masks.level[kSub][i] == 0);
    CHECK(!masks.regions[kWhole].empty());
}

TEST_CASE("no prompts yields empty masks") {
    Scene scene = gen_scene(tiny_spec());
    auto gt = render_gt_labels(scene.field, scene.cameras[0], scene.labels);
    GranularityMasks masks = synth_segment(gt, {}, scene.labels, SegmentNoise{}, 3);
    for (int l = 0; l < 3; ++l) CHECK(masks.regions[l].empty());
}

TEST_CASE("merge noise increases region-count variance across seeds") {
    // two touching parts of one object; sparse prompts trigger merges
    SceneSpec spec = tiny_spec();
    spec.objects.clear();
    SceneNode obj = box("thing", {0, 0, 0}, {0.5, 0.3, 0.3});
    obj.parts.push_back(box("thing left", {-0.25, 0, 0}, {0.25, 0.3, 0.3}));
    obj.parts.push_back(box("thing right", {0.25, 0, 0}, {0.25, 0.3, 0.3}));
    spec.objects.push_back(obj);
    Scene scene = gen_scene(spec);
    auto gt = render_gt_labels(scene.field, scene.cameras[0], scene.labels);

    auto count_part_regions = [&](const SegmentNoise& noise, std::uint64_t seed) {
        GranularityMasks masks = synth_segment(gt, dense_grid_prompts(64, 64, 4),
                                               scene.labels, noise, seed);
        return static_cast<double>(masks.regions[kPart].size());
    };

    auto variance = [&](const SegmentNoise& noise) {
        std::vector<double> counts;
        for (std::uint64_t s = 0; s < 20; ++s)
            counts.push_back(count_part_regions(noise, s));
        double mean = 0;
        for (double c : counts) mean += c;
        mean /= counts.size();
        double var = 0;
        for (double c : counts) var += (c - mean) * (c - mean);
        return var / counts.size();
    };

    SegmentNoise merge_noise;
    merge_noise.p_merge[kPart] = 0.5;
    merge_noise.merge_prompt_threshold = 1000;  // every region under-prompted
    CHECK(variance(merge_noise) > variance(SegmentNoise{}));
}

TEST_CASE("zero embed noise reproduces the codebook exactly") {
    Scene scene = gen_scene(tiny_spec());
    auto gt = render_gt_labels(scene.field, scene.cameras[0], scene.labels);
    GranularityMasks masks = synth_segment(gt, dense_grid_prompts(64, 64, 4),
                                           scene.labels, SegmentNoise{}, 3);
    GranularityFeatures feats = synth_embed(masks, scene.codebook, {0, 0, 0}, 3);
    for (int l = 0; l < 3; ++l)
        for (const auto& r : masks.regions[l]) {
            REQUIRE(feats.has(l, r.id));
            CHECK((feats.feats[l][r.id] - scene.codebook.feature(r.label)).norm() <
                  1e-12);
        }
}

TEST_CASE("quarter-turn embed noise is orthogonal to the codebook") {
    Scene scene = gen_scene(tiny_spec());
    auto gt = render_gt_labels(scene.field, scene.cameras[0], scene.labels);
    GranularityMasks masks = synth_segment(gt, dense_grid_prompts(64, 64, 4),
                                           scene.labels, SegmentNoise{}, 3);
    double half_pi = 1.57079632679489662;
    GranularityFeatures feats =
        synth_embed(masks, scene.codebook, {half_pi, half_pi, half_pi}, 3);
    for (int l = 0; l < 3; ++l)
        for (const auto& r : masks.regions[l]) {
            double cos = feats.feats[l][r.id].dot(scene.codebook.feature(r.label));
            CHECK(std::abs(cos) < 1e-9);
            CHECK(feats.feats[l][r.id].norm() == doctest::Approx(1.0).epsilon(1e-9));
        }
}

TEST_CASE("per-level noise controls cross-view feature consistency") {
    Scene scene = gen_scene(tiny_spec());
    std::array<double, 3> level_noise = {0.5, 0.0, 0.5};
    // gather the whole-object feature per view at each level
    std::array<std::vector<Eigen::VectorXd>, 3> per_view;
    for (int v = 0; v < 10; ++v) {
        auto gt = render_gt_labels(scene.field, scene.cameras[v % 4], scene.labels);
        GranularityMasks masks = synth_segment(gt, dense_grid_prompts(64, 64, 4),
                                               scene.labels, SegmentNoise{}, 3);
        GranularityFeatures feats = synth_embed(masks, scene.codebook, level_noise,
                                                mix_seed(99, v));
        for (int l = 0; l < 3; ++l)
            if (!masks.regions[l].empty())
                per_view[l].push_back(feats.feats[l][masks.regions[l][0].id]);
    }
    auto min_pairwise_cos = [](const std::vector<Eigen::VectorXd>& vs) {
        double mn = 1.0;
        for (std::size_t i = 0; i < vs.size(); ++i)
            for (std::size_t j = i + 1; j < vs.size(); ++j)
                mn = std::min(mn, vs[i].dot(vs[j]));
        return mn;
    };
    CHECK(min_pairwise_cos(per_view[kPart]) >= 0.999);
    CHECK(min_pairwise_cos(per_view[kSub]) < 0.95);
    CHECK(min_pairwise_cos(per_view[kWhole]) < 0.95);
}

TEST_CASE("embedding unlabeled regions is rejected") {
    GranularityMasks masks;
    for (int l = 0; l < 3; ++l) {
        masks.level[l] = Image<std::uint32_t>(4, 4, 1);
        masks.regions[l].push_back({1, 16, ""});  // ingested: no label
    }
    Codebook cb = Codebook::generate({"a"}, 8, 1);
    CHECK_THROWS_AS(synth_embed(masks, cb, {0, 0, 0}, 1), DataError);
}

TEST_CASE("ingest validates and round-trips oracle exports") {
    auto dir = test::temp_dir("ingest");
    Scene scene = gen_scene(tiny_spec());
    auto gt = render_gt_labels(scene.field, scene.cameras[0], scene.labels);
    GranularityMasks masks = synth_segment(gt, dense_grid_prompts(64, 64, 4),
                                           scene.labels, SegmentNoise{}, 3);
    GranularityFeatures feats = synth_embed(masks, scene.codebook, {0.1, 0.2, 0.3}, 3);

    std::array<std::string, 3> mask_paths, feat_paths;
    for (int l = 0; l < 3; ++l) {
        mask_paths[l] = (dir / ("m" + std::to_string(l) + ".pgm")).string();
        feat_paths[l] = (dir / ("f" + std::to_string(l) + ".tnsr")).string();
        write_mask(mask_paths[l], masks.level[l]);
        std::uint32_t max_id = 0;
        for (const auto& r : masks.regions[l]) max_id = std::max(max_id, r.id);
        Eigen::MatrixXd table = Eigen::MatrixXd::Zero(max_id + 1, scene.codebook.dim);
        for (const auto& r : masks.regions[l])
            table.row(r.id) = feats.feats[l][r.id].transpose();
        write_tensor(feat_paths[l], TensorFile::from_matrix(table));
    }

    auto [masks2, feats2] = ingest(mask_paths, feat_paths);
    for (int l = 0; l < 3; ++l) {
        CHECK(masks2.level[l].data() == masks.level[l].data());
        for (const auto& r : masks.regions[l]) {
            REQUIRE(feats2.has(l, r.id));
            // through f32 storage and renormalization
            CHECK((feats2.feats[l][r.id] - feats.feats[l][r.id]).norm() < 1e-6);
        }
        for (const auto& r : masks2.regions[l]) CHECK(r.label.empty());
    }

    SUBCASE("missing feature row is an ingestion error") {
        // shrink the whole-level table below the max region id
        std::uint32_t max_id = 0;
        for (const auto& r : masks.regions[kWhole]) max_id = std::max(max_id, r.id);
        Eigen::MatrixXd short_table = Eigen::MatrixXd::Zero(max_id, scene.codebook.dim);
        for (std::uint32_t r = 0; r + 1 < max_id + 1; ++r) short_table.row(r).setOnes();
        write_tensor(feat_paths[kWhole], TensorFile::from_matrix(short_table));
        CHECK_THROWS_AS(ingest(mask_paths, feat_paths), DataError);
    }
    SUBCASE("mask shape mismatch is an error") {
        Image<std::uint32_t> small(8, 8, 0);
        write_mask(mask_paths[kSub], small);
        CHECK_THROWS_AS(ingest(mask_paths, feat_paths), DataError);
    }
}

TEST_CASE("every oracle feature leaves unit-norm") {
    Scene scene = gen_scene(tiny_spec());
    scene.codebook.validate();
    auto gt = render_gt_labels(scene.field, scene.cameras[1], scene.labels);
    GranularityMasks masks = synth_segment(gt, dense_grid_prompts(64, 64, 4),
                                           scene.labels, SegmentNoise{}, 3);
    GranularityFeatures feats = synth_embed(masks, scene.codebook, {0.7, 0.7, 0.7}, 9);
    for (int l = 0; l < 3; ++l)
        for (const auto& r : masks.regions[l])
            CHECK(feats.feats[l][r.id].norm() == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("oracle generation is seed deterministic end to end") {
    Scene a = gen_scene(tiny_spec());
    Scene b = gen_scene(tiny_spec());
    REQUIRE(a.field.size() == b.field.size());
    for (std::size_t i = 0; i < a.field.size(); ++i) {
        CHECK(a.field.gaussians[i].position == b.field.gaussians[i].position);
        CHECK(a.field.gaussians[i].scale == b.field.gaussians[i].scale);
    }
    auto gta = render_gt_labels(a.field, a.cameras[2], a.labels);
    auto gtb = render_gt_labels(b.field, b.cameras[2], b.labels);
    for (int l = 0; l < 3; ++l) CHECK(gta[l].data() == gtb[l].data());
}

TEST_CASE("codebook generation, lookup, and JSON round trip") {
    Codebook cb = Codebook::generate({"mug", "desk"}, 16, 4);
    cb.validate();
    // orthonormal when they fit
    CHECK(std::abs(cb.feature("mug").dot(cb.feature("desk"))) < 1e-9);
    CHECK(std::abs(cb.feature("mug").dot(cb.canonical[0])) < 1e-9);
    CHECK_THROWS_AS(cb.feature("nope"), DataError);

    nlohmann::json j = cb.to_json();
    Codebook back = Codebook::from_json(j);
    CHECK((back.feature("mug") - cb.feature("mug")).norm() < 1e-12);
    CHECK((back.canonical[3] - cb.canonical[3]).norm() < 1e-12);

    j["canonical"].erase("stuff");
    CHECK_THROWS_AS(Codebook::from_json(j), DataError);
}

TEST_CASE("scene spec and cameras JSON round trip") {
    SceneSpec spec = tiny_spec();
    spec.objects[0].parts.push_back(sphere("ball top", {0, 0, 0.3}, 0.15));
    nlohmann::json j = spec.to_json();
    SceneSpec back = SceneSpec::from_json(j);
    CHECK(back.objects[0].parts.size() == 1);
    CHECK(back.ring.count == spec.ring.count);
    CHECK(back.to_json() == j);

    Scene scene = gen_scene(spec);
    nlohmann::json cj = cameras_to_json(scene.cameras);
    auto cams = cameras_from_json(cj);
    REQUIRE(cams.size() == scene.cameras.size());
    CHECK(cams[1].rotation.isApprox(scene.cameras[1].rotation));
    CHECK(cams[1].translation.isApprox(scene.cameras[1].translation));
}
