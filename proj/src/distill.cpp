// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include "gags/distill.hpp"

#include <malloc.h>

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <tuple>

namespace gags {

DistillMode distill_mode_from_string(const std::string& s) {
    if (s == "gad") return DistillMode::Gad;
    if (s == "single_s") return DistillMode::SingleS;
    if (s == "single_p") return DistillMode::SingleP;
    if (s == "single_w") return DistillMode::SingleW;
    if (s == "average") return DistillMode::Average;
    throw ConfigError("unknown distill_mode: " + s);
}

std::string distill_mode_to_string(DistillMode m) {
    switch (m) {
        case DistillMode::Gad: return "gad";
        case DistillMode::SingleS: return "single_s";
        case DistillMode::SingleP: return "single_p";
        case DistillMode::SingleW: return "single_w";
        case DistillMode::Average: return "average";
    }
    return "gad";
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lambda_entropy", lambda_entropy},
            {"lambda_cons", lambda_cons},
            {"lr_features", lr_features},
            {"lr_decoder", lr_decoder},
            {"adam_beta1", adam.beta1},
            {"adam_beta2", adam.beta2},
            {"adam_eps", adam.eps},
            {"iterations", iterations},
            {"views_per_iteration", views_per_iteration},
            {"seed", seed},
            {"distill_mode", distill_mode_to_string(distill_mode)},
            {"gas_on", gas_on},
            {"hidden", hidden},
            {"threads", threads}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig cfg;
    auto get = [&](const char* key, auto& out) {
        if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
    };
    get("lambda_entropy", cfg.lambda_entropy);
    get("lambda_cons", cfg.lambda_cons);
    get("lr_features", cfg.lr_features);
    get("lr_decoder", cfg.lr_decoder);
    get("adam_beta1", cfg.adam.beta1);
    get("adam_beta2", cfg.adam.beta2);
    get("adam_eps", cfg.adam.eps);
    get("iterations", cfg.iterations);
    get("views_per_iteration", cfg.views_per_iteration);
    get("seed", cfg.seed);
    if (j.contains("distill_mode"))
        cfg.distill_mode = distill_mode_from_string(j.at("distill_mode").get<std::string>());
    get("gas_on", cfg.gas_on);
    get("hidden", cfg.hidden);
    get("threads", cfg.threads);
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------

double distill_loss(const Eigen::VectorXd& f_clip,
                    const std::array<const Eigen::VectorXd*, 3>& targets,
                    const Eigen::Vector3d& alpha) {
    double weight_sum = 0.0;
    for (int l = 0; l < 3; ++l)
        if (targets[l]) weight_sum += alpha[l];
    if (weight_sum <= 0.0) {
        bool any = targets[0] || targets[1] || targets[2];
        if (!any) throw DataError("distill_loss: all target levels missing");
        return 0.0;  // alpha mass entirely on missing levels
    }
    double loss = 0.0;
    for (int l = 0; l < 3; ++l) {
        if (!targets[l]) continue;
        loss += alpha[l] / weight_sum * (f_clip - *targets[l]).squaredNorm();
    }
    return loss;
}

double entropy_loss(const Eigen::Vector3d& alpha) {
    double h = 0.0;
    for (int l = 0; l < 3; ++l) {
        double a = alpha[l];
        if (a > 0.0) h -= a * std::log(a);
    }
    return h;
}

FusedMask fuse_masks(const GranularityMasks& masks,
                     const Eigen::Matrix3Xd& alpha,
                     const Image<std::uint8_t>& include) {
    const int w = include.width(), h = include.height();
    for (int l = 0; l < 3; ++l)
        if (!masks.level[l].same_shape(w, h))
            throw DataError("fuse_masks: mask / alpha shape mismatch");
    if (alpha.cols() != static_cast<Eigen::Index>(include.size()))
        throw DataError("fuse_masks: alpha map size mismatch");

    FusedMask out;
    out.region = Image<std::int32_t>(w, h, -1);
    std::map<std::pair<int, std::uint32_t>, int> key_to_index;

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!include(x, y)) continue;
            Eigen::Index p = static_cast<Eigen::Index>(y) * w + x;
            // levels ordered by (alpha desc, coarser first on ties);
            // stable insertion sort of three elements
            std::array<int, 3> order = {kWhole, kPart, kSub};
            if (alpha(order[1], p) > alpha(order[0], p)) std::swap(order[0], order[1]);
            if (alpha(order[2], p) > alpha(order[1], p)) {
                std::swap(order[1], order[2]);
                if (alpha(order[1], p) > alpha(order[0], p))
                    std::swap(order[0], order[1]);
            }
            int level = -1;
            std::uint32_t id = 0;
            for (int l : order) {
                std::uint32_t candidate = masks.level[l](x, y);
                if (candidate != 0) {
                    level = l;
                    id = candidate;
                    break;
                }
            }
            if (level < 0) continue;  // unassigned at every level
            auto key = std::make_pair(level, id);
            auto it = key_to_index.find(key);
            int index;
            if (it == key_to_index.end()) {
                index = static_cast<int>(out.table.size());
                key_to_index.emplace(key, index);
                out.table.push_back({level, id, 0});
            } else {
                index = it->second;
            }
            ++out.table[index].pixels;
            out.region(x, y) = index;
        }
    }

    // canonical (level, id) order for the table
    std::vector<int> perm(out.table.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::sort(perm.begin(), perm.end(), [&](int a, int b) {
        const auto& ra = out.table[a];
        const auto& rb = out.table[b];
        return std::tie(ra.level, ra.id) < std::tie(rb.level, rb.id);
    });
    std::vector<int> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = static_cast<int>(i);
    std::vector<FusedRegion> sorted(out.table.size());
    for (std::size_t i = 0; i < perm.size(); ++i) sorted[i] = out.table[perm[i]];
    out.table = std::move(sorted);
    for (std::size_t i = 0; i < out.region.size(); ++i)
        if (out.region[i] >= 0) out.region[i] = inverse[out.region[i]];
    return out;
}

double region_factor(const FusedMask& fused, int x, int y) {
    std::int32_t idx = fused.region(x, y);
    if (idx < 0) throw DataError("region_factor: pixel not covered by fusion");
    long total = fused.covered_pixels();
    return static_cast<double>(total) /
           (static_cast<double>(fused.n_r()) * static_cast<double>(fused.table[idx].pixels));
}

double consistency_loss(const Eigen::MatrixXd& f_clip, const FusedMask& fused) {
    const int w = fused.region.width(), h = fused.region.height();
    if (f_clip.cols() != static_cast<Eigen::Index>(fused.region.size()))
        throw DataError("consistency_loss: feature map size mismatch");
    const int n = fused.n_r();
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(f_clip.rows(), n);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::int32_t idx = fused.region(x, y);
            if (idx < 0) continue;
            means.col(idx) += f_clip.col(static_cast<Eigen::Index>(y) * w + x);
        }
    for (int i = 0; i < n; ++i)
        means.col(i) /= static_cast<double>(fused.table[i].pixels);
    double loss = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::int32_t idx = fused.region(x, y);
            if (idx < 0) continue;
            loss += (f_clip.col(static_cast<Eigen::Index>(y) * w + x) - means.col(idx))
                        .squaredNorm() /
                    static_cast<double>(fused.table[idx].pixels);
        }
    return loss;
}

// ---------------------------------------------------------------------------

DistillPass distill_pass(const GaussianFieldd& field,
                         const BlendCache<double>& cache,
                         const ViewTargets& targets, const Decoderd& decoder,
                         const TrainConfig& cfg, bool want_grads,
                         DistillScratch* scratch) {
    DistillScratch local;
    DistillScratch& ws = scratch ? *scratch : local;
    const int w = cache.width, h = cache.height;
    const std::size_t pixels = static_cast<std::size_t>(w) * h;
    const int clip_dim = decoder.clip_dim;

    auto level_present = [&](int l, int x, int y) {
        std::uint32_t id = targets.masks.level[l](x, y);
        return id != 0 && targets.features.has(l, id);
    };
    auto target_of = [&](int l, int x, int y) -> const Eigen::VectorXd& {
        return targets.features.feats[l][targets.masks.level[l](x, y)];
    };

    const DistillMode mode = cfg.distill_mode;
    auto pixel_active = [&](int x, int y) {
        if (!cache.covered(x, y)) return false;
        switch (mode) {
            case DistillMode::SingleS: return level_present(kSub, x, y);
            case DistillMode::SingleP: return level_present(kPart, x, y);
            case DistillMode::SingleW: return level_present(kWhole, x, y);
            default:
                return level_present(kSub, x, y) || level_present(kPart, x, y) ||
                       level_present(kWhole, x, y);
        }
    };

    DistillPass pass;
    Image<std::uint8_t> active_mask(w, h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (pixel_active(x, y)) {
                active_mask(x, y) = 1;
                pass.active.push_back(static_cast<Eigen::Index>(y) * w + x);
            }
    const Eigen::Index a_count = static_cast<Eigen::Index>(pass.active.size());
    if (a_count == 0)
        throw DataError("distill_pass: no covered pixels with targets");

    // f_render gathered only at active pixels, through the frozen weights
    ws.x_in.setZero(field.feature_dim, a_count);
    for (Eigen::Index a = 0; a < a_count; ++a) {
        std::size_t p = static_cast<std::size_t>(pass.active[a]);
        auto col = ws.x_in.col(a);
        for (std::uint32_t k = cache.offsets[p]; k < cache.offsets[p + 1]; ++k)
            col += cache.weights[k] * field.gaussians[cache.sources[k]].feature;
    }
    decoder.decode_into(ws.x_in, ws.decoded);
    const Decoderd::Result& dec = ws.decoded;
    ws.alpha.resize(3, a_count);
    for (Eigen::Index a = 0; a < a_count; ++a)
        ws.alpha.col(a) = granularity_weights<double>(Eigen::Vector3d(dec.eta.col(a)));
    const Eigen::Matrix3Xd& alpha = ws.alpha;

    pass.alpha_full = Eigen::Matrix3Xd::Zero(3, static_cast<Eigen::Index>(pixels));
    for (Eigen::Index a = 0; a < a_count; ++a)
        pass.alpha_full.col(pass.active[a]) = alpha.col(a);
    pass.terms.active_pixels = a_count;
    pass.terms.mean_alpha = alpha.rowwise().mean();

    ws.d_fclip.setZero(clip_dim, a_count);
    ws.d_eta.setZero(3, a_count);
    Eigen::MatrixXd& d_fclip = ws.d_fclip;
    Eigen::Matrix3Xd& d_eta = ws.d_eta;
    const double inv_a = 1.0 / static_cast<double>(a_count);

    if (mode == DistillMode::Gad) {
        pass.fused = fuse_masks(targets.masks, pass.alpha_full, active_mask);
        const int n_r = pass.fused.n_r();
        const double total_area = static_cast<double>(pass.fused.covered_pixels());
        std::vector<double> beta(n_r);
        for (int i = 0; i < n_r; ++i)
            beta[i] = total_area /
                      (static_cast<double>(n_r) * static_cast<double>(pass.fused.table[i].pixels));

        // region means of f_clip for the consistency term
        Eigen::MatrixXd means = Eigen::MatrixXd::Zero(clip_dim, n_r);
        std::vector<std::int32_t> region_of(a_count);
        for (Eigen::Index a = 0; a < a_count; ++a) {
            int px = static_cast<int>(pass.active[a] % w);
            int py = static_cast<int>(pass.active[a] / w);
            std::int32_t idx = pass.fused.region(px, py);
            region_of[a] = idx;
            if (idx >= 0) means.col(idx) += dec.f_clip.col(a);
        }
        for (int i = 0; i < n_r; ++i)
            means.col(i) /= static_cast<double>(pass.fused.table[i].pixels);

        double r_distill_sum = 0.0, entropy_sum = 0.0, cons_sum = 0.0;
        for (Eigen::Index a = 0; a < a_count; ++a) {
            int px = static_cast<int>(pass.active[a] % w);
            int py = static_cast<int>(pass.active[a] / w);
            auto f = dec.f_clip.col(a);

            bool present[3];
            double weight_sum = 0.0;
            for (int l = 0; l < 3; ++l) {
                present[l] = level_present(l, px, py);
                if (present[l]) weight_sum += alpha(l, a);
            }

            std::int32_t ridx = region_of[a];
            double b = ridx >= 0 ? beta[ridx] : 1.0;

            double dist2[3] = {0, 0, 0};
            double q = 0.0;  // sum over present of alpha_l * dist2_l
            for (int l = 0; l < 3; ++l) {
                if (!present[l]) continue;
                dist2[l] = (f - target_of(l, px, py)).squaredNorm();
                q += alpha(l, a) * dist2[l];
            }
            double pixel_distill = weight_sum > 0.0 ? q / weight_sum : 0.0;
            r_distill_sum += b * pixel_distill;

            double ent = 0.0;
            Eigen::Vector3d d_alpha = Eigen::Vector3d::Zero();
            for (int l = 0; l < 3; ++l) {
                double al = alpha(l, a);
                if (al > 0.0) ent -= al * std::log(al);
                if (cfg.lambda_entropy > 0.0 && al > 0.0)
                    d_alpha[l] += cfg.lambda_entropy * inv_a * (-(std::log(al) + 1.0));
            }
            entropy_sum += ent;

            if (ridx >= 0) {
                double s_r = static_cast<double>(pass.fused.table[ridx].pixels);
                cons_sum += (f - means.col(ridx)).squaredNorm() / s_r;
            }

            if (want_grads) {
                if (weight_sum > 0.0) {
                    for (int l = 0; l < 3; ++l) {
                        if (!present[l]) continue;
                        double wl = alpha(l, a) / weight_sum;
                        d_fclip.col(a) +=
                            (b * inv_a) * wl * 2.0 * (f - target_of(l, px, py));
                        d_alpha[l] += (b * inv_a) *
                                      (dist2[l] / weight_sum - q / (weight_sum * weight_sum));
                    }
                }
                if (cfg.lambda_cons > 0.0 && ridx >= 0) {
                    double s_r = static_cast<double>(pass.fused.table[ridx].pixels);
                    d_fclip.col(a) += cfg.lambda_cons / static_cast<double>(n_r) *
                                      (2.0 / s_r) * (f - means.col(ridx));
                }
                // softmax Jacobian: d_eta_j = a_j (g_j - sum_k a_k g_k)
                double dot = 0.0;
                for (int l = 0; l < 3; ++l) dot += alpha(l, a) * d_alpha[l];
                for (int l = 0; l < 3; ++l)
                    d_eta(l, a) = alpha(l, a) * (d_alpha[l] - dot);
            }
        }

        pass.terms.r_distill = r_distill_sum * inv_a;
        pass.terms.entropy = entropy_sum * inv_a;
        pass.terms.cons = n_r > 0 ? cons_sum / static_cast<double>(n_r) : 0.0;
        pass.terms.total = pass.terms.r_distill +
                           cfg.lambda_entropy * pass.terms.entropy +
                           cfg.lambda_cons * pass.terms.cons;
    } else {
        // single-granularity / averaged-target baselines: plain L2
        double loss_sum = 0.0;
        for (Eigen::Index a = 0; a < a_count; ++a) {
            int px = static_cast<int>(pass.active[a] % w);
            int py = static_cast<int>(pass.active[a] / w);
            auto f = dec.f_clip.col(a);
            Eigen::VectorXd target;
            if (mode == DistillMode::Average) {
                target = Eigen::VectorXd::Zero(clip_dim);
                int present = 0;
                for (int l = 0; l < 3; ++l) {
                    if (!level_present(l, px, py)) continue;
                    target += target_of(l, px, py);
                    ++present;
                }
                target /= static_cast<double>(present);
                double n = target.norm();
                if (n > 1e-12) target /= n;
            } else {
                int l = mode == DistillMode::SingleS ? kSub
                        : mode == DistillMode::SingleP ? kPart
                                                       : kWhole;
                target = target_of(l, px, py);
            }
            loss_sum += (f - target).squaredNorm();
            if (want_grads) d_fclip.col(a) = inv_a * 2.0 * (f - target);
        }
        pass.terms.r_distill = loss_sum * inv_a;
        pass.terms.total = pass.terms.r_distill;
    }

    if (!std::isfinite(pass.terms.total))
        throw NumericError("distill_pass produced a non-finite loss");

    if (want_grads) {
        pass.decoder_grads = Decoderd::Grads(decoder);
        const Eigen::MatrixXd& d_x =
            decoder.backward(dec, d_fclip, d_eta, pass.decoder_grads, ws.backward);
        pass.grad_features = Eigen::MatrixXd::Zero(
            field.feature_dim, static_cast<Eigen::Index>(field.size()));
        for (Eigen::Index a = 0; a < a_count; ++a) {
            std::size_t p = static_cast<std::size_t>(pass.active[a]);
            auto col = d_x.col(a);
            for (std::uint32_t k = cache.offsets[p]; k < cache.offsets[p + 1]; ++k)
                pass.grad_features.col(cache.sources[k]) += cache.weights[k] * col;
        }
    }
    return pass;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(GaussianFieldd& field, Decoderd& decoder,
                 const std::vector<Camerad>& cameras,
                 const std::vector<ViewTargets>& targets, const TrainConfig& cfg)
    : field_(field), decoder_(decoder), cameras_(cameras), targets_(targets),
      cfg_(cfg), view_rng_(Rng::stream(cfg.seed, 0x76696577ull)) {
    // the per-iteration work buffers fluctuate around a few MB; keep them on
    // the heap arena instead of round-tripping through mmap
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    cfg_.validate();
    if (cameras_.empty()) throw DataError("trainer needs at least one view");
    if (targets_.size() != cameras_.size())
        throw DataError("trainer: targets present for every view required");
    caches_.reserve(cameras_.size());
    for (const auto& cam : cameras_)
        caches_.push_back(build_blend_cache(field_, cam, cfg_.threads));
    features_ = field_.feature_matrix();
}

TrainLogEntry Trainer::step() {
    Eigen::MatrixXd feat_grad =
        Eigen::MatrixXd::Zero(field_.feature_dim, static_cast<Eigen::Index>(field_.size()));
    Decoderd::Grads dec_grad(decoder_);
    TrainLogEntry entry;
    entry.iteration = iteration_;

    for (int k = 0; k < cfg_.views_per_iteration; ++k) {
        int view = static_cast<int>(view_rng_.uniform_index(cameras_.size()));
        entry.view = view;
        DistillPass pass;
        try {
            pass = distill_pass(field_, caches_[view], targets_[view], decoder_,
                                cfg_, true, &scratch_);
        } catch (const NumericError&) {
            std::fprintf(stderr,
                         "[gags] NaN diagnostic: iteration=%ld view=%d "
                         "feature_norm=%.6e\n",
                         iteration_, view, features_.norm());
            throw;
        }
        double scale = 1.0 / cfg_.views_per_iteration;
        feat_grad += scale * pass.grad_features;
        dec_grad.w1 += scale * pass.decoder_grads.w1;
        dec_grad.w2 += scale * pass.decoder_grads.w2;
        dec_grad.w3 += scale * pass.decoder_grads.w3;
        dec_grad.b1 += scale * pass.decoder_grads.b1;
        dec_grad.b2 += scale * pass.decoder_grads.b2;
        dec_grad.b3 += scale * pass.decoder_grads.b3;
        entry.terms = pass.terms;
    }

    ++adam_steps_;
    adam_step<double>(features_, feat_grad, feat_state_, cfg_.lr_features,
                      adam_steps_, cfg_.adam);
    adam_step<double>(decoder_.w1, dec_grad.w1, w1_, cfg_.lr_decoder, adam_steps_, cfg_.adam);
    adam_step<double>(decoder_.w2, dec_grad.w2, w2_, cfg_.lr_decoder, adam_steps_, cfg_.adam);
    adam_step<double>(decoder_.w3, dec_grad.w3, w3_, cfg_.lr_decoder, adam_steps_, cfg_.adam);
    adam_step<double>(decoder_.b1, dec_grad.b1, b1_, cfg_.lr_decoder, adam_steps_, cfg_.adam);
    adam_step<double>(decoder_.b2, dec_grad.b2, b2_, cfg_.lr_decoder, adam_steps_, cfg_.adam);
    adam_step<double>(decoder_.b3, dec_grad.b3, b3_, cfg_.lr_decoder, adam_steps_, cfg_.adam);
    field_.set_features(features_);
    ++iteration_;
    return entry;
}

TrainResult Trainer::run(std::ostream* log_stream) {
    TrainResult result;
    result.log.reserve(static_cast<std::size_t>(cfg_.iterations));
    for (long it = 0; it < cfg_.iterations; ++it) {
        TrainLogEntry entry = step();
        if (log_stream) *log_stream << loss_terms_to_json(entry).dump() << "\n";
        result.log.push_back(entry);
    }
    return result;
}

TrainResult train(GaussianFieldd& field, Decoderd& decoder,
                  const std::vector<Camerad>& cameras,
                  const std::vector<ViewTargets>& targets,
                  const TrainConfig& cfg, std::ostream* log_stream) {
    Trainer trainer(field, decoder, cameras, targets, cfg);
    return trainer.run(log_stream);
}

nlohmann::json loss_terms_to_json(const TrainLogEntry& e) {
    return {{"iteration", e.iteration},
            {"view", e.view},
            {"r_distill", e.terms.r_distill},
            {"entropy", e.terms.entropy},
            {"cons", e.terms.cons},
            {"total", e.terms.total},
            {"mean_alpha",
             {e.terms.mean_alpha[0], e.terms.mean_alpha[1], e.terms.mean_alpha[2]}},
            {"active_pixels", e.terms.active_pixels}};
}

}  // namespace gags
