// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
//
// Pipeline driver: gen-scene -> render/prompt -> segment -> distill ->
// query -> eval. Every subcommand takes a JSON config; a handful of flags
// (each mirrored by a GAGS_* environment variable) override config fields.
#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "commands.hpp"
#include "gags/errors.hpp"
#include "gags/manifest.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    int threads = -1;
    long long seed = -1;
    std::string output_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("-c,--config", flags.config_path, "JSON config file")
        ->required()
        ->envname("GAGS_CONFIG");
    cmd->add_option("-t,--threads", flags.threads, "override config threads")
        ->envname("GAGS_THREADS");
    cmd->add_option("-s,--seed", flags.seed, "override config seed")
        ->envname("GAGS_SEED");
    cmd->add_option("-o,--output-dir", flags.output_dir, "override output dir")
        ->envname("GAGS_OUTPUT_DIR");
}

nlohmann::json load_config(const CommonFlags& flags) {
    nlohmann::json cfg = gags::load_json_file(flags.config_path);
    if (flags.threads >= 0) cfg["threads"] = flags.threads;
    if (flags.seed >= 0) cfg["seed"] = static_cast<std::uint64_t>(flags.seed);
    if (!flags.output_dir.empty()) cfg["output_dir"] = flags.output_dir;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"granularity-aware gaussian-splatting feature distillation"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        void (*run)(const nlohmann::json&);
        CommonFlags flags;
    };
    Sub subs[] = {
        {"gen-scene", "generate a synthetic scene bundle", gags::cli::cmd_gen_scene, {}},
        {"render", "render feature/depth maps and previews", gags::cli::cmd_render, {}},
        {"prompt", "plan prompt points (depth-aware or uniform)", gags::cli::cmd_prompt, {}},
        {"segment", "run the oracle segmenter/embedder or ingest real outputs",
         gags::cli::cmd_segment, {}},
        {"distill", "train per-gaussian features and the decoder", gags::cli::cmd_distill, {}},
        {"query", "open-vocabulary relevancy queries on a trained field",
         gags::cli::cmd_query, {}},
        {"eval", "localization/segmentation metrics against GT", gags::cli::cmd_eval, {}},
    };
    for (auto& sub : subs) {
        CLI::App* cmd = app.add_subcommand(sub.name, sub.help);
        add_common(cmd, sub.flags);
    }

    CLI11_PARSE(app, argc, argv);

    for (auto& sub : subs) {
        CLI::App* cmd = app.get_subcommand(sub.name);
        if (!cmd->parsed()) continue;
        try {
            sub.run(load_config(sub.flags));
            return 0;
        } catch (const gags::ConfigError& e) {
            std::fprintf(stderr, "config error: %s\n", e.what());
            return 2;
        } catch (const gags::DataError& e) {
            std::fprintf(stderr, "data error: %s\n", e.what());
            return 3;
        } catch (const gags::NumericError& e) {
            std::fprintf(stderr, "numeric failure: %s\n", e.what());
            return 4;
        } catch (const std::exception& e) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 1;
        }
    }
    return 0;
}
