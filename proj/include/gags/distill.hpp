// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gags/decoder.hpp"
#include "gags/errors.hpp"
#include "gags/oracle.hpp"
#include "gags/splat.hpp"

namespace gags {

enum class DistillMode { Gad, SingleS, SingleP, SingleW, Average };

DistillMode distill_mode_from_string(const std::string& s);
std::string distill_mode_to_string(DistillMode m);

struct TrainConfig {
    double lambda_entropy = 0.01;
    double lambda_cons = 0.1;
    double lr_features = 2.5e-3;
    double lr_decoder = 1e-3;
    AdamParams<double> adam;
    long iterations = 2000;
    int views_per_iteration = 1;
    std::uint64_t seed = 0;
    DistillMode distill_mode = DistillMode::Gad;
    bool gas_on = true;
    int hidden = 64;
    int threads = 1;

    void validate() const {
        if (lambda_entropy < 0 || lambda_cons < 0)
            throw ConfigError("loss weights must be >= 0");
        if (!(lr_features > 0) || !(lr_decoder > 0))
            throw ConfigError("learning rates must be > 0");
        if (iterations < 0) throw ConfigError("iterations must be >= 0");
        if (views_per_iteration < 1)
            throw ConfigError("views_per_iteration must be >= 1");
    }

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// Per-view distillation targets.
struct ViewTargets {
    GranularityMasks masks;
    GranularityFeatures features;
};

// ---------------------------------------------------------------------------
// Loss building blocks (see the formula unit tests for frozen values)

/// Weighted squared-distance distillation loss at one pixel. Missing levels
/// (null targets) are skipped and alpha is renormalized over present levels.
/// All levels missing is an error; callers exclude such pixels.
double distill_loss(const Eigen::VectorXd& f_clip,
                    const std::array<const Eigen::VectorXd*, 3>& targets,
                    const Eigen::Vector3d& alpha);

/// Entropy of the granularity weights, in [0, ln 3]; 0*log(0) counts as 0.
double entropy_loss(const Eigen::Vector3d& alpha);

struct FusedRegion {
    int level = 0;
    std::uint32_t id = 0;
    long pixels = 0;
};

/// Per-pixel fused region keys: key = (argmax-alpha level, region id at that
/// level). Ties pick the coarser level; a pixel unassigned at its selected
/// level falls back to the next-highest-alpha assigned level. Pixels
/// unassigned everywhere (or excluded by `include`) get index -1.
struct FusedMask {
    Image<std::int32_t> region;        // index into table, -1 = excluded
    std::vector<FusedRegion> table;    // ordered by (level, id)

    int n_r() const { return static_cast<int>(table.size()); }
    long covered_pixels() const {
        long s = 0;
        for (const auto& r : table) s += r.pixels;
        return s;
    }
};

FusedMask fuse_masks(const GranularityMasks& masks,
                     const Eigen::Matrix3Xd& alpha,
                     const Image<std::uint8_t>& include);

/// Region-aware weight at one pixel: sum of all fused region areas over
/// (n_r times the pixel's own region area).
double region_factor(const FusedMask& fused, int x, int y);

/// Sum over regions of the mean-centered squared feature deviation divided
/// by the region area (no n_r normalization here; the total loss adds it).
double consistency_loss(const Eigen::MatrixXd& f_clip, const FusedMask& fused);

// ---------------------------------------------------------------------------
// Full training pass

struct LossTerms {
    double r_distill = 0.0;
    double entropy = 0.0;
    double cons = 0.0;
    double total = 0.0;
    Eigen::Vector3d mean_alpha = Eigen::Vector3d::Zero();
    long active_pixels = 0;
};

struct DistillPass {
    LossTerms terms;
    Eigen::MatrixXd grad_features;   // d x N, when gradients requested
    Decoderd::Grads decoder_grads;
    // introspection
    std::vector<Eigen::Index> active;  // active pixel indices
    Eigen::Matrix3Xd alpha_full;       // 3 x P, zero columns when inactive
    FusedMask fused;
};

/// Reusable buffers for repeated passes (the trainer holds one).
struct DistillScratch {
    Decoderd::Result decoded;
    Decoderd::BackwardScratch backward;
    Eigen::MatrixXd x_in;
    Eigen::MatrixXd d_fclip;
    Eigen::Matrix3Xd d_eta;
    Eigen::Matrix3Xd alpha;
};

/// One forward (and optionally backward) pass of the total loss
/// l_r-distill + lambda_e * l_entropy + lambda_c * l_cons over one view.
/// The fused mask is recomputed from the current alpha and detached: alpha
/// gradients flow only through the weighted distillation and entropy terms.
/// Rendering runs through the view's frozen blend cache.
DistillPass distill_pass(const GaussianFieldd& field,
                         const BlendCache<double>& cache,
                         const ViewTargets& targets, const Decoderd& decoder,
                         const TrainConfig& cfg, bool want_grads,
                         DistillScratch* scratch = nullptr);

// ---------------------------------------------------------------------------
// Trainer

struct TrainLogEntry {
    long iteration = 0;
    int view = 0;
    LossTerms terms;
};

struct TrainResult {
    std::vector<TrainLogEntry> log;
    std::size_t nan_aborts = 0;
};

class Trainer {
  public:
    Trainer(GaussianFieldd& field, Decoderd& decoder,
            const std::vector<Camerad>& cameras,
            const std::vector<ViewTargets>& targets, const TrainConfig& cfg);

    /// One optimizer iteration; returns the loss of the sampled view(s).
    TrainLogEntry step();

    /// Runs cfg.iterations steps, optionally streaming a JSON line per
    /// iteration. Throws NumericError on non-finite loss after dumping a
    /// diagnostic to stderr.
    TrainResult run(std::ostream* log_stream = nullptr);

    const BlendCache<double>& cache(int view) const { return caches_[view]; }

  private:
    GaussianFieldd& field_;
    Decoderd& decoder_;
    const std::vector<Camerad>& cameras_;
    const std::vector<ViewTargets>& targets_;
    TrainConfig cfg_;
    std::vector<BlendCache<double>> caches_;
    Rng view_rng_;
    long iteration_ = 0;
    long adam_steps_ = 0;
    Eigen::MatrixXd features_;  // working d x N parameter block
    AdamState<double> feat_state_;
    AdamState<double> w1_, w2_, w3_, b1_, b2_, b3_;
    DistillScratch scratch_;
};

/// Convenience wrapper: trains in place and returns the log.
TrainResult train(GaussianFieldd& field, Decoderd& decoder,
                  const std::vector<Camerad>& cameras,
                  const std::vector<ViewTargets>& targets,
                  const TrainConfig& cfg, std::ostream* log_stream = nullptr);

nlohmann::json loss_terms_to_json(const TrainLogEntry& e);

}  // namespace gags
