// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "gags/checkpoint.hpp"
#include "gags/distill.hpp"
#include "gags/image_io.hpp"
#include "gags/manifest.hpp"
#include "gags/oracle.hpp"
#include "gags/ply_io.hpp"
#include "gags/prompt.hpp"
#include "gags/query.hpp"
#include "gags/scene_io.hpp"
#include "gags/splat.hpp"
#include "gags/tensor_file.hpp"

namespace fs = std::filesystem;

namespace gags::cli {

namespace {

std::string require_string(const nlohmann::json& cfg, const char* key) {
    if (!cfg.contains(key))
        throw ConfigError(std::string("missing required config key '") + key + "'");
    return cfg.at(key).get<std::string>();
}

std::string out_dir(const nlohmann::json& cfg) {
    std::string dir = require_string(cfg, "output_dir");
    fs::create_directories(dir);
    return dir;
}

int threads_of(const nlohmann::json& cfg) {
    return cfg.contains("threads") ? cfg.at("threads").get<int>() : 1;
}

std::uint64_t require_seed(const nlohmann::json& cfg) {
    if (!cfg.contains("seed"))
        throw ConfigError("seed is mandatory for stochastic commands");
    return cfg.at("seed").get<std::uint64_t>();
}

std::vector<int> resolve_views(const nlohmann::json& cfg, int count) {
    std::vector<int> views;
    if (cfg.contains("views")) {
        for (const auto& v : cfg.at("views")) {
            int idx = v.get<int>();
            if (idx < 0 || idx >= count)
                throw DataError("view index out of range: " + std::to_string(idx));
            views.push_back(idx);
        }
    } else {
        for (int v = 0; v < count; ++v) views.push_back(v);
    }
    return views;
}

Image<std::uint16_t> to_u16_minmax(const Image<double>& map,
                                   const Image<std::uint8_t>& valid) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < map.size(); ++i)
        if (valid[i]) {
            lo = std::min(lo, map[i]);
            hi = std::max(hi, map[i]);
        }
    Image<std::uint16_t> out(map.width(), map.height(), 0);
    if (hi <= lo) return out;
    for (std::size_t i = 0; i < map.size(); ++i)
        if (valid[i])
            out[i] = static_cast<std::uint16_t>(65535.0 * (map[i] - lo) / (hi - lo));
    return out;
}

Image<std::uint16_t> to_u16_unit(const Image<double>& map) {
    Image<std::uint16_t> out(map.width(), map.height(), 0);
    for (std::size_t i = 0; i < map.size(); ++i)
        out[i] = static_cast<std::uint16_t>(
            65535.0 * std::clamp(map[i], 0.0, 1.0));
    return out;
}

std::vector<std::uint8_t> color_preview(const RenderOutput<double>& ro) {
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(ro.width) * ro.height * 3, 0);
    for (int y = 0; y < ro.height; ++y)
        for (int x = 0; x < ro.width; ++x) {
            Eigen::Index p = static_cast<Eigen::Index>(y) * ro.width + x;
            for (int c = 0; c < 3; ++c)
                rgb[(static_cast<std::size_t>(y) * ro.width + x) * 3 + c] =
                    static_cast<std::uint8_t>(
                        255.0 * std::clamp(ro.colors(c, p), 0.0, 1.0));
        }
    return rgb;
}

void draw_point(std::vector<std::uint8_t>& rgb, int width, int height, int px,
                int py, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
            int x = px + dx, y = py + dy;
            if (x < 0 || x >= width || y < 0 || y >= height) continue;
            std::size_t at = (static_cast<std::size_t>(y) * width + x) * 3;
            rgb[at] = r;
            rgb[at + 1] = g;
            rgb[at + 2] = b;
        }
}

// blue -> cyan -> yellow -> red ramp for heatmaps
void heat_color(double v, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b) {
    v = std::clamp(v, 0.0, 1.0);
    double rr = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
    double gg = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
    double bb = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
    r = static_cast<std::uint8_t>(255 * rr);
    g = static_cast<std::uint8_t>(255 * gg);
    b = static_cast<std::uint8_t>(255 * bb);
}

void write_heatmap(const std::string& path, const Image<double>& map,
                   const Image<std::uint8_t>& valid) {
    std::vector<std::uint8_t> rgb(map.size() * 3, 0);
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (!valid[i]) continue;
        heat_color(map[i], rgb[i * 3], rgb[i * 3 + 1], rgb[i * 3 + 2]);
    }
    write_png_rgb8(path, map.width(), map.height(), rgb);
}

std::array<std::string, 3> mask_paths_for(const std::string& dir, int view) {
    std::array<std::string, 3> out;
    for (int l = 0; l < 3; ++l)
        out[l] = dir + "/" + view_stem(view) + "_" + kLevelNames[l] + ".pgm";
    return out;
}

std::array<std::string, 3> feature_paths_for(const std::string& dir, int view) {
    std::array<std::string, 3> out;
    for (int l = 0; l < 3; ++l)
        out[l] = dir + "/" + view_stem(view) + "_" + kLevelNames[l] + "_feat.tnsr";
    return out;
}

std::vector<std::string> bundle_inputs(const std::string& scene_dir) {
    return {scene_dir + "/field.ply", scene_dir + "/cameras.json",
            scene_dir + "/codebook.json", scene_dir + "/labels.json"};
}

}  // namespace

// ---------------------------------------------------------------------------

void cmd_gen_scene(const nlohmann::json& cfg) {
    check_config_keys(cfg, {"schema_version", "scene_spec", "scene_spec_path",
                            "output_dir", "threads"}, "gen-scene");
    require_schema_version(cfg);
    std::string dir = out_dir(cfg);

    Manifest manifest{"gen-scene", cfg, {}};
    nlohmann::json spec_json;
    if (cfg.contains("scene_spec_path")) {
        std::string path = cfg.at("scene_spec_path").get<std::string>();
        spec_json = load_json_file(path);
        manifest.inputs.push_back(path);
    } else if (cfg.contains("scene_spec")) {
        spec_json = cfg.at("scene_spec");
    } else {
        throw ConfigError("gen-scene needs scene_spec or scene_spec_path");
    }

    SceneSpec spec = SceneSpec::from_json(spec_json);
    Scene scene = gen_scene(spec);
    save_scene_bundle(scene, dir, threads_of(cfg));
    write_json_file(dir + "/scene_spec.json", spec.to_json());
    manifest.write(dir);
    std::printf("gen-scene: %zu gaussians, %zu views -> %s\n", scene.field.size(),
                scene.cameras.size(), dir.c_str());
}

void cmd_render(const nlohmann::json& cfg) {
    check_config_keys(cfg, {"schema_version", "scene_dir", "field", "views",
                            "output_dir", "threads", "export_features"}, "render");
    require_schema_version(cfg);
    std::string scene_dir = require_string(cfg, "scene_dir");
    std::string dir = out_dir(cfg);

    SceneBundle bundle = load_scene_bundle(scene_dir);
    Manifest manifest{"render", cfg, bundle_inputs(scene_dir)};
    if (cfg.contains("field")) {
        std::string override_path = cfg.at("field").get<std::string>();
        bundle.field = load_field<double>(override_path);
        manifest.inputs.push_back(override_path);
    }
    bool export_features =
        !cfg.contains("export_features") || cfg.at("export_features").get<bool>();

    RenderOptions<double> opts;
    opts.threads = threads_of(cfg);
    for (int v : resolve_views(cfg, static_cast<int>(bundle.cameras.size()))) {
        RenderOutput<double> ro = render(bundle.field, bundle.cameras[v], opts);
        std::string stem = dir + "/" + view_stem(v);
        if (export_features) {
            TensorFile t;
            t.dtype = TensorFile::DType::F32;
            t.shape = {static_cast<std::uint32_t>(ro.height),
                       static_cast<std::uint32_t>(ro.width),
                       static_cast<std::uint32_t>(ro.feature_dim)};
            t.f32.resize(ro.features.size());
            std::size_t k = 0;
            for (Eigen::Index p = 0; p < ro.features.cols(); ++p)
                for (int c = 0; c < ro.feature_dim; ++c)
                    t.f32[k++] = static_cast<float>(ro.features(c, p));
            write_tensor(stem + "_features.tnsr", t);
        }
        write_pgm16(stem + "_depth.pgm", to_u16_minmax(ro.depth, ro.depth_valid));
        Image<double> tmap(ro.width, ro.height, 0.0);
        for (int y = 0; y < ro.height; ++y)
            for (int x = 0; x < ro.width; ++x) tmap(x, y) = ro.transmittance(x, y);
        write_pgm16(stem + "_transmittance.pgm", to_u16_unit(tmap));
        write_png_rgb8(stem + "_color.png", ro.width, ro.height, color_preview(ro));
    }
    manifest.write(dir);
    std::printf("render: wrote views to %s\n", dir.c_str());
}

void cmd_prompt(const nlohmann::json& cfg) {
    check_config_keys(cfg,
                      {"schema_version", "scene_dir", "output_dir", "seed", "mode",
                       "patch_size", "base_count", "ratio_cap", "subpatch_grid",
                       "uniform_total", "match_eq1_budget", "visibility_threshold",
                       "jitter_frac", "threads"},
                      "prompt");
    require_schema_version(cfg);
    std::string scene_dir = require_string(cfg, "scene_dir");
    std::string dir = out_dir(cfg);
    std::uint64_t seed = require_seed(cfg);
    std::string mode = cfg.contains("mode") ? cfg.at("mode").get<std::string>() : "eq1";
    if (mode != "eq1" && mode != "uniform")
        throw ConfigError("prompt mode must be 'eq1' or 'uniform'");

    SceneBundle bundle = load_scene_bundle(scene_dir);
    Manifest manifest{"prompt", cfg, bundle_inputs(scene_dir)};
    int threads = threads_of(cfg);

    PromptParams params;
    params.seed = seed;
    if (cfg.contains("patch_size")) params.patch_size = cfg.at("patch_size").get<int>();
    if (cfg.contains("base_count")) params.base_count = cfg.at("base_count").get<int>();
    if (cfg.contains("ratio_cap")) params.ratio_cap = cfg.at("ratio_cap").get<double>();
    if (cfg.contains("subpatch_grid"))
        params.subpatch_grid = cfg.at("subpatch_grid").get<int>();
    double visibility = cfg.contains("visibility_threshold")
                            ? cfg.at("visibility_threshold").get<double>()
                            : 0.05;
    double jitter = cfg.contains("jitter_frac") ? cfg.at("jitter_frac").get<double>() : 0.5;
    bool match_budget =
        cfg.contains("match_eq1_budget") && cfg.at("match_eq1_budget").get<bool>();

    std::size_t fallbacks =
        compute_min_depth(bundle.field, bundle.cameras, visibility, threads);
    if (fallbacks > 0)
        std::fprintf(stderr,
                     "[gags] warning: %zu gaussians visible nowhere, min depth "
                     "from frustum fallback\n",
                     fallbacks);

    RenderOptions<double> opts;
    opts.threads = threads;
    for (int v = 0; v < static_cast<int>(bundle.cameras.size()); ++v) {
        RenderOutput<double> ro = render(bundle.field, bundle.cameras[v], opts);
        PromptPlan plan;
        if (mode == "eq1" && !match_budget) {
            MinDepthMap<double> md = min_depth_map(ro, bundle.field);
            PromptParams view_params = params;
            view_params.seed = mix_seed(seed, static_cast<std::uint64_t>(v));
            plan = patch_prompt_counts(ro.depth, ro.depth_valid, md, view_params);
            auto hists = density_histograms(ro, plan, params.subpatch_grid);
            sample_prompts(plan, hists, view_params.seed);
        } else {
            int total = 0;
            if (match_budget) {
                MinDepthMap<double> md = min_depth_map(ro, bundle.field);
                PromptParams view_params = params;
                view_params.seed = mix_seed(seed, static_cast<std::uint64_t>(v));
                total = patch_prompt_counts(ro.depth, ro.depth_valid, md, view_params)
                            .total_count();
            } else if (cfg.contains("uniform_total")) {
                total = cfg.at("uniform_total").get<int>();
            } else {
                throw ConfigError("uniform mode needs uniform_total or match_eq1_budget");
            }
            plan = uniform_prompts(ro.width, ro.height, total,
                                   mix_seed(seed, static_cast<std::uint64_t>(v)), jitter);
        }
        write_json_file(dir + "/plan_" + view_stem(v) + ".json",
                        prompt_plan_to_json(plan));
        std::vector<std::uint8_t> rgb = color_preview(ro);
        for (const auto& pt : plan.points)
            draw_point(rgb, ro.width, ro.height, pt.x, pt.y, 255, 32, 32);
        write_png_rgb8(dir + "/overlay_" + view_stem(v) + ".png", ro.width,
                       ro.height, rgb);
    }
    manifest.write(dir);
    std::printf("prompt: %s plans for %zu views -> %s\n", mode.c_str(),
                bundle.cameras.size(), dir.c_str());
}

void cmd_segment(const nlohmann::json& cfg) {
    check_config_keys(cfg,
                      {"schema_version", "scene_dir", "plans_dir", "output_dir",
                       "seed", "p_drop", "p_merge", "merge_prompt_threshold",
                       "level_noise", "ingest_dir", "threads"},
                      "segment");
    require_schema_version(cfg);
    std::string scene_dir = require_string(cfg, "scene_dir");
    std::string dir = out_dir(cfg);

    SceneBundle bundle = load_scene_bundle(scene_dir);
    Manifest manifest{"segment", cfg, bundle_inputs(scene_dir)};
    const int views = static_cast<int>(bundle.cameras.size());

    if (cfg.contains("ingest_dir")) {
        // validation + renormalization pass over real segmenter/embedder output
        std::string ingest_dir = cfg.at("ingest_dir").get<std::string>();
        for (int v = 0; v < views; ++v) {
            auto [masks, feats] =
                ingest(mask_paths_for(ingest_dir, v), feature_paths_for(ingest_dir, v));
            auto out_masks = mask_paths_for(dir, v);
            auto out_feats = feature_paths_for(dir, v);
            for (int l = 0; l < 3; ++l) {
                write_mask(out_masks[l], masks.level[l]);
                Eigen::MatrixXd table = Eigen::MatrixXd::Zero(
                    static_cast<Eigen::Index>(feats.feats[l].size()), feats.dim);
                for (std::size_t id = 0; id < feats.feats[l].size(); ++id)
                    if (feats.feats[l][id].size() > 0)
                        table.row(static_cast<Eigen::Index>(id)) =
                            feats.feats[l][id].transpose();
                write_tensor(out_feats[l], TensorFile::from_matrix(table));
            }
        }
        manifest.write(dir);
        std::printf("segment: ingested %d views -> %s\n", views, dir.c_str());
        return;
    }

    std::string plans_dir = require_string(cfg, "plans_dir");
    std::uint64_t seed = require_seed(cfg);
    SegmentNoise noise;
    if (cfg.contains("p_drop"))
        for (int l = 0; l < 3; ++l) noise.p_drop[l] = cfg.at("p_drop")[l].get<double>();
    if (cfg.contains("p_merge"))
        for (int l = 0; l < 3; ++l) noise.p_merge[l] = cfg.at("p_merge")[l].get<double>();
    if (cfg.contains("merge_prompt_threshold"))
        noise.merge_prompt_threshold = cfg.at("merge_prompt_threshold").get<int>();
    std::array<double, 3> level_noise = {0, 0, 0};
    if (cfg.contains("level_noise"))
        for (int l = 0; l < 3; ++l) level_noise[l] = cfg.at("level_noise")[l].get<double>();

    int threads = threads_of(cfg);
    for (int v = 0; v < views; ++v) {
        std::string plan_path = plans_dir + "/plan_" + view_stem(v) + ".json";
        PromptPlan plan = prompt_plan_from_json(load_json_file(plan_path));
        manifest.inputs.push_back(plan_path);

        auto gt = render_gt_labels(bundle.field, bundle.cameras[v], bundle.labels,
                                   threads);
        GranularityMasks masks =
            synth_segment(gt, plan.points, bundle.labels, noise,
                          mix_seed(seed, 0x100u + static_cast<std::uint64_t>(v)));
        GranularityFeatures feats =
            synth_embed(masks, bundle.codebook, level_noise,
                        mix_seed(seed, 0x200u + static_cast<std::uint64_t>(v)));

        auto out_masks = mask_paths_for(dir, v);
        auto out_feats = feature_paths_for(dir, v);
        nlohmann::json regions = nlohmann::json::array();
        for (int l = 0; l < 3; ++l) {
            write_mask(out_masks[l], masks.level[l]);
            std::uint32_t max_id = 0;
            for (const auto& r : masks.regions[l]) max_id = std::max(max_id, r.id);
            Eigen::MatrixXd table =
                Eigen::MatrixXd::Zero(max_id + 1, bundle.codebook.dim);
            for (const auto& r : masks.regions[l]) {
                table.row(r.id) = feats.feats[l][r.id].transpose();
                regions.push_back({{"level", kLevelNames[l]},
                                   {"id", r.id},
                                   {"pixels", r.pixels},
                                   {"label", r.label}});
            }
            write_tensor(out_feats[l], TensorFile::from_matrix(table));
        }
        write_json_file(dir + "/" + view_stem(v) + "_regions.json", regions);
    }
    manifest.write(dir);
    std::printf("segment: oracle masks/features for %d views -> %s\n", views,
                dir.c_str());
}

void cmd_distill(const nlohmann::json& cfg) {
    check_config_keys(cfg, {"schema_version", "scene_dir", "targets_dir",
                            "output_dir", "train"}, "distill");
    require_schema_version(cfg);
    std::string scene_dir = require_string(cfg, "scene_dir");
    std::string targets_dir = require_string(cfg, "targets_dir");
    std::string dir = out_dir(cfg);

    TrainConfig train_cfg = TrainConfig::from_json(
        cfg.contains("train") ? cfg.at("train") : nlohmann::json::object());
    if (!cfg.contains("train") || !cfg.at("train").contains("seed"))
        throw ConfigError("seed is mandatory for stochastic commands");

    SceneBundle bundle = load_scene_bundle(scene_dir);
    Manifest manifest{"distill", cfg, bundle_inputs(scene_dir)};

    std::vector<ViewTargets> targets;
    int clip_dim = 0;
    for (int v = 0; v < static_cast<int>(bundle.cameras.size()); ++v) {
        auto mask_paths = mask_paths_for(targets_dir, v);
        auto feat_paths = feature_paths_for(targets_dir, v);
        for (const auto& p : mask_paths) manifest.inputs.push_back(p);
        for (const auto& p : feat_paths) manifest.inputs.push_back(p);
        auto [masks, feats] = ingest(mask_paths, feat_paths);
        clip_dim = feats.dim;
        targets.push_back({std::move(masks), std::move(feats)});
    }

    Decoderd decoder = Decoderd::random(bundle.field.feature_dim, clip_dim,
                                        train_cfg.hidden, train_cfg.seed);
    std::ofstream log(dir + "/log.jsonl");
    TrainResult result =
        train(bundle.field, decoder, bundle.cameras, targets, train_cfg, &log);
    save_field(bundle.field, dir + "/field.ply");
    save_decoder(decoder, dir + "/decoder");
    manifest.write(dir);
    double final_loss =
        result.log.empty() ? 0.0 : result.log.back().terms.r_distill;
    std::printf("distill: %ld iterations, final r-distill %.6f -> %s\n",
                train_cfg.iterations, final_loss, dir.c_str());
}

void cmd_query(const nlohmann::json& cfg) {
    check_config_keys(cfg,
                      {"schema_version", "scene_dir", "field", "decoder_dir",
                       "queries", "views", "tau", "smooth_kernel",
                       "smooth_features", "output_dir", "threads"},
                      "query");
    require_schema_version(cfg);
    std::string scene_dir = require_string(cfg, "scene_dir");
    std::string field_path = require_string(cfg, "field");
    std::string decoder_dir = require_string(cfg, "decoder_dir");
    std::string dir = out_dir(cfg);

    SceneBundle bundle = load_scene_bundle(scene_dir);
    bundle.field = load_field<double>(field_path);
    Decoderd decoder = load_decoder(decoder_dir);
    Manifest manifest{"query", cfg, bundle_inputs(scene_dir)};
    manifest.inputs.push_back(field_path);
    manifest.inputs.push_back(decoder_dir + "/decoder.json");

    double tau = cfg.contains("tau") ? cfg.at("tau").get<double>() : 0.4;
    int kernel = cfg.contains("smooth_kernel") ? cfg.at("smooth_kernel").get<int>() : 5;
    bool smooth_features =
        cfg.contains("smooth_features") && cfg.at("smooth_features").get<bool>();
    if (!cfg.contains("queries")) throw ConfigError("query needs a queries list");

    struct QuerySpec {
        std::string label;
        std::string level;
    };
    std::vector<QuerySpec> queries;
    for (const auto& q : cfg.at("queries"))
        queries.push_back({q.at("label").get<std::string>(),
                           q.contains("level") ? q.at("level").get<std::string>() : "w"});

    RenderOptions<double> opts;
    opts.threads = threads_of(cfg);
    nlohmann::json results = nlohmann::json::array();
    for (int v : resolve_views(cfg, static_cast<int>(bundle.cameras.size()))) {
        RenderOutput<double> ro = render(bundle.field, bundle.cameras[v], opts);
        // decode covered pixels once per view, reuse across queries
        std::vector<Eigen::Index> covered;
        Image<std::uint8_t> valid(ro.width, ro.height, 0);
        for (int y = 0; y < ro.height; ++y)
            for (int x = 0; x < ro.width; ++x)
                if (ro.covered(x, y)) {
                    valid(x, y) = 1;
                    covered.push_back(static_cast<Eigen::Index>(y) * ro.width + x);
                }
        if (covered.empty()) throw DataError("query view has no coverage");
        Eigen::MatrixXd x_in(bundle.field.feature_dim,
                             static_cast<Eigen::Index>(covered.size()));
        for (std::size_t i = 0; i < covered.size(); ++i)
            x_in.col(static_cast<Eigen::Index>(i)) = ro.features.col(covered[i]);
        auto decoded = decoder.decode(x_in);
        Eigen::MatrixXd f_clip = Eigen::MatrixXd::Zero(
            decoder.clip_dim, static_cast<Eigen::Index>(ro.width) * ro.height);
        for (std::size_t i = 0; i < covered.size(); ++i)
            f_clip.col(covered[i]) = decoded.f_clip.col(static_cast<Eigen::Index>(i));

        for (std::size_t qi = 0; qi < queries.size(); ++qi) {
            const Eigen::VectorXd& text =
                bundle.codebook.text_embedding(queries[qi].label);
            RelevancyMap map =
                relevancy_map(f_clip, ro.width, ro.height, valid, text,
                              bundle.codebook.canonical, kernel, smooth_features);
            auto [lx, ly] = localize(map);
            Image<std::uint8_t> mask = segment(map, tau);

            std::string stem = view_stem(v) + "_q" + std::to_string(qi);
            Image<std::uint32_t> mask32(mask.width(), mask.height(), 0);
            for (std::size_t i = 0; i < mask.size(); ++i) mask32[i] = mask[i];
            write_mask(dir + "/" + stem + "_mask.pgm", mask32);
            write_heatmap(dir + "/" + stem + "_heat.png", map.normalized, valid);
            results.push_back({{"query", queries[qi].label},
                               {"level", queries[qi].level},
                               {"view", v},
                               {"loc", {lx, ly}},
                               {"peak", map.smoothed(lx, ly)},
                               {"mask", stem + "_mask.pgm"},
                               {"heatmap", stem + "_heat.png"},
                               {"degenerate", map.degenerate}});
        }
    }
    write_json_file(dir + "/results.json",
                    {{"schema_version", 1}, {"results", results}});
    manifest.write(dir);
    std::printf("query: %zu queries -> %s\n", queries.size(), dir.c_str());
}

void cmd_eval(const nlohmann::json& cfg) {
    check_config_keys(cfg, {"schema_version", "results", "gt", "output_dir"},
                      "eval");
    require_schema_version(cfg);
    std::string results_path = require_string(cfg, "results");
    std::string gt_path = require_string(cfg, "gt");
    std::string dir = out_dir(cfg);

    Manifest manifest{"eval", cfg, {results_path, gt_path}};
    nlohmann::json results = load_json_file(results_path);
    nlohmann::json gt = load_json_file(gt_path);
    fs::path results_base = fs::path(results_path).parent_path();
    fs::path gt_base = fs::path(gt_path).parent_path();

    // index GT entries by (label, level, view)
    std::map<std::tuple<std::string, std::string, int>, const nlohmann::json*> gt_index;
    for (const auto& e : gt.at("entries"))
        gt_index[{e.at("label").get<std::string>(), e.at("level").get<std::string>(),
                  e.at("view").get<int>()}] = &e;

    std::vector<EvalInput> entries;
    nlohmann::json skipped = nlohmann::json::array();
    for (const auto& r : results.at("results")) {
        std::string label = r.at("query").get<std::string>();
        std::string level = r.at("level").get<std::string>();
        int view = r.at("view").get<int>();
        auto it = gt_index.find({label, level, view});
        if (it == gt_index.end())
            throw DataError("missing GT for query '" + label + "' view " +
                            std::to_string(view));
        const nlohmann::json& g = *it->second;
        if (g.at("empty").get<bool>()) {
            skipped.push_back({{"query", label}, {"view", view}, {"reason", "empty gt"}});
            continue;
        }

        EvalInput input;
        input.query = label;
        input.view = view;
        input.loc_x = r.at("loc")[0].get<int>();
        input.loc_y = r.at("loc")[1].get<int>();
        const auto& box = g.at("box");
        input.box = {box[0].get<int>(), box[1].get<int>(), box[2].get<int>(),
                     box[3].get<int>()};

        Image<std::uint32_t> pred =
            read_mask((results_base / r.at("mask").get<std::string>()).string());
        input.pred_mask = Image<std::uint8_t>(pred.width(), pred.height(), 0);
        for (std::size_t i = 0; i < pred.size(); ++i)
            input.pred_mask[i] = pred[i] ? 1 : 0;

        if (g.contains("mask")) {
            Image<std::uint32_t> gt_mask =
                read_mask((gt_base / g.at("mask").get<std::string>()).string());
            input.gt_mask = Image<std::uint8_t>(gt_mask.width(), gt_mask.height(), 0);
            for (std::size_t i = 0; i < gt_mask.size(); ++i)
                input.gt_mask[i] = gt_mask[i] ? 1 : 0;
        } else {
            Image<std::uint32_t> idmap =
                read_mask((gt_base / g.at("gt_map").get<std::string>()).string());
            std::set<std::uint32_t> wanted;
            for (const auto& id : g.at("region_ids"))
                wanted.insert(id.get<std::uint32_t>());
            input.gt_mask = Image<std::uint8_t>(idmap.width(), idmap.height(), 0);
            for (std::size_t i = 0; i < idmap.size(); ++i)
                input.gt_mask[i] = wanted.count(idmap[i]) ? 1 : 0;
        }
        entries.push_back(std::move(input));
    }

    EvalRecord record = eval_metrics(entries);
    nlohmann::json per_query = nlohmann::json::array();
    for (const auto& item : record.items)
        per_query.push_back({{"query", item.query},
                             {"view", item.view},
                             {"hit", item.hit},
                             {"iou", item.iou},
                             {"both_empty", item.both_empty}});
    write_json_file(dir + "/metrics.json", {{"schema_version", 1},
                                            {"mAcc", record.mAcc},
                                            {"mIoU", record.mIoU},
                                            {"per_query", per_query},
                                            {"skipped", skipped}});
    manifest.write(dir);

    std::printf("query                     mAcc    mIoU   n\n");
    std::map<std::string, std::array<double, 3>> by_query;
    for (const auto& item : record.items) {
        auto& acc = by_query[item.query];
        acc[0] += item.hit ? 1 : 0;
        acc[1] += item.iou;
        acc[2] += 1;
    }
    for (const auto& [label, acc] : by_query)
        std::printf("%-24s %6.2f%% %6.3f %3d\n", label.c_str(),
                    100.0 * acc[0] / acc[2], acc[1] / acc[2],
                    static_cast<int>(acc[2]));
    std::printf("overall                  %6.2f%% %6.3f %3zu\n", 100.0 * record.mAcc,
                record.mIoU, record.items.size());
}

}  // namespace gags::cli
