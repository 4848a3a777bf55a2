// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "gags/errors.hpp"
#include "gags/image.hpp"
#include "gags/rng.hpp"
#include "gags/splat.hpp"

namespace gags {

struct PromptParams {
    int patch_size = 64;
    int base_count = 4;        // n in the budget formula
    double ratio_cap = 25.0;   // clamp on D^2/MD^2
    int subpatch_grid = 4;     // S: each patch split into S x S bins
    std::uint64_t seed = 0;
};

struct PromptPatch {
    int id = 0;
    int x0 = 0, y0 = 0;
    int width = 0, height = 0;
    double n_real = 0.0;  // n_P before rounding
    int count = 0;        // stochastically rounded budget
    bool partial = false; // remainder patch at the image edge
};

struct PromptPoint {
    int x = 0, y = 0;
    int patch = 0;
};

struct PromptPlan {
    int width = 0, height = 0;
    int patch_size = 0;
    int base_count = 0;
    std::uint64_t seed = 0;
    std::vector<PromptPatch> patches;
    std::vector<PromptPoint> points;

    int total_count() const {
        int t = 0;
        for (const auto& p : patches) t += p.count;
        return t;
    }
};

/// Normalized S x S histogram of covered pixels inside one patch; uniform
/// when the patch has no coverage at all.
struct DensityHistogram {
    int grid = 0;
    std::vector<double> prob;  // grid*grid, row-major, sums to 1
    bool uniform_fallback = false;
};

/// Per-patch prompt budgets: n_P = mean over valid pixels of
/// clamp(D^2/MD^2, 1, cap) * n. Patches without any valid pixel get zero.
/// Fractional budgets are rounded stochastically under (seed, patch id).
template <class S>
PromptPlan patch_prompt_counts(const Image<S>& depth,
                               const Image<std::uint8_t>& depth_valid,
                               const MinDepthMap<S>& md,
                               const PromptParams& params) {
    if (!depth.same_shape(depth_valid) || !depth.same_shape(md.md) ||
        !depth.same_shape(md.valid))
        throw DataError("depth / min-depth map shape mismatch");
    if (params.base_count < 1) throw DataError("base prompt count must be >= 1");
    if (params.patch_size < 1) throw DataError("patch size must be >= 1");

    PromptPlan plan;
    plan.width = depth.width();
    plan.height = depth.height();
    plan.patch_size = params.patch_size;
    plan.base_count = params.base_count;
    plan.seed = params.seed;

    const int ps = params.patch_size;
    int id = 0;
    for (int y0 = 0; y0 < plan.height; y0 += ps) {
        for (int x0 = 0; x0 < plan.width; x0 += ps) {
            PromptPatch patch;
            patch.id = id++;
            patch.x0 = x0;
            patch.y0 = y0;
            patch.width = std::min(ps, plan.width - x0);
            patch.height = std::min(ps, plan.height - y0);
            patch.partial = patch.width != ps || patch.height != ps;

            double ratio_sum = 0.0;
            long valid = 0;
            for (int y = y0; y < y0 + patch.height; ++y) {
                for (int x = x0; x < x0 + patch.width; ++x) {
                    if (!depth_valid(x, y) || !md.valid(x, y)) continue;
                    double dd = static_cast<double>(depth(x, y));
                    double mm = std::max(1e-12, static_cast<double>(md.md(x, y)));
                    double ratio = (dd * dd) / (mm * mm);
                    ratio_sum += std::clamp(ratio, 1.0, params.ratio_cap);
                    ++valid;
                }
            }
            if (valid > 0) {
                patch.n_real = ratio_sum / static_cast<double>(valid) *
                               static_cast<double>(params.base_count);
                double floor_part = std::floor(patch.n_real);
                double frac = patch.n_real - floor_part;
                Rng rng = Rng::stream(params.seed, 0x70617463ull ^ static_cast<std::uint64_t>(patch.id));
                patch.count = static_cast<int>(floor_part) + (rng.bernoulli(frac) ? 1 : 0);
            }
            plan.patches.push_back(patch);
        }
    }
    return plan;
}

/// Counts covered pixels (non-sentinel dominant contributor) per sub-patch
/// bin and normalizes; falls back to uniform when the patch is empty.
template <class S>
DensityHistogram visible_gaussian_density(const RenderOutput<S>& ro,
                                          const PromptPatch& patch, int grid) {
    DensityHistogram h;
    h.grid = grid;
    h.prob.assign(static_cast<std::size_t>(grid) * grid, 0.0);
    double total = 0.0;
    for (int y = patch.y0; y < patch.y0 + patch.height; ++y) {
        for (int x = patch.x0; x < patch.x0 + patch.width; ++x) {
            if (ro.dominant(x, y) == kNoGaussian) continue;
            int bx = std::min(grid - 1, (x - patch.x0) * grid / patch.width);
            int by = std::min(grid - 1, (y - patch.y0) * grid / patch.height);
            h.prob[static_cast<std::size_t>(by) * grid + bx] += 1.0;
            total += 1.0;
        }
    }
    if (total > 0.0) {
        for (double& p : h.prob) p /= total;
    } else {
        h.uniform_fallback = true;
        std::fill(h.prob.begin(), h.prob.end(), 1.0 / static_cast<double>(grid * grid));
    }
    return h;
}

template <class S>
std::vector<DensityHistogram> density_histograms(const RenderOutput<S>& ro,
                                                 const PromptPlan& plan,
                                                 int grid) {
    std::vector<DensityHistogram> out;
    out.reserve(plan.patches.size());
    for (const auto& patch : plan.patches)
        out.push_back(visible_gaussian_density(ro, patch, grid));
    return out;
}

namespace detail {

// Pixel range of one sub-patch bin, mirroring the binning in
// visible_gaussian_density.
inline void bin_extent(const PromptPatch& patch, int grid, int bx, int by,
                       int& x0, int& x1, int& y0, int& y1) {
    auto lo = [](int origin, int extent, int g, int b) {
        // first pixel whose bin index is b
        int v = (b * extent + g - 1) / g;
        return origin + v;
    };
    x0 = lo(patch.x0, patch.width, grid, bx);
    x1 = bx + 1 < grid ? lo(patch.x0, patch.width, grid, bx + 1) : patch.x0 + patch.width;
    y0 = lo(patch.y0, patch.height, grid, by);
    y1 = by + 1 < grid ? lo(patch.y0, patch.height, grid, by + 1) : patch.y0 + patch.height;
}

}  // namespace detail

/// Draws each patch's budget: the sub-patch bin comes from the density
/// histogram, the pixel uniformly from the unused pixels of that bin.
/// Sampling is without replacement at pixel granularity; budgets beyond the
/// patch pixel count are clamped with a warning. Each patch uses its own
/// RNG stream derived from (seed, patch id).
inline void sample_prompts(PromptPlan& plan,
                           const std::vector<DensityHistogram>& histograms,
                           std::uint64_t seed) {
    if (histograms.size() != plan.patches.size())
        throw DataError("one histogram per patch required");
    plan.points.clear();
    for (std::size_t pi = 0; pi < plan.patches.size(); ++pi) {
        PromptPatch& patch = plan.patches[pi];
        if (patch.count <= 0) continue;
        const DensityHistogram& hist = histograms[pi];
        const int grid = hist.grid;
        const long patch_pixels = static_cast<long>(patch.width) * patch.height;
        if (patch.count > patch_pixels) {
            std::fprintf(stderr,
                         "[gags] warning: patch %d budget %d exceeds %ld pixels, clamping\n",
                         patch.id, patch.count, patch_pixels);
            patch.count = static_cast<int>(patch_pixels);
        }

        Rng rng = Rng::stream(seed, 0x73616d70ull ^ static_cast<std::uint64_t>(patch.id));
        Image<std::uint8_t> used(patch.width, patch.height, 0);
        std::vector<long> bin_free(static_cast<std::size_t>(grid) * grid, 0);
        for (int b = 0; b < grid * grid; ++b) {
            int x0, x1, y0, y1;
            detail::bin_extent(patch, grid, b % grid, b / grid, x0, x1, y0, y1);
            bin_free[b] = static_cast<long>(x1 - x0) * (y1 - y0);
        }

        for (int k = 0; k < patch.count; ++k) {
            // pick a bin by the histogram, falling back to the fullest
            // remaining probability when the chosen bin is exhausted
            int bin = -1;
            double u = rng.uniform();
            double acc = 0.0;
            for (int b = 0; b < grid * grid; ++b) {
                acc += hist.prob[b];
                if (u < acc) {
                    bin = b;
                    break;
                }
            }
            if (bin < 0) bin = grid * grid - 1;
            if (bin_free[bin] == 0) {
                double best = -1.0;
                int replacement = -1;
                for (int b = 0; b < grid * grid; ++b) {
                    if (bin_free[b] > 0 && hist.prob[b] > best) {
                        best = hist.prob[b];
                        replacement = b;
                    }
                }
                bin = replacement;
            }
            if (bin < 0) break;  // patch exhausted (count was clamped above)

            int x0, x1, y0, y1;
            detail::bin_extent(patch, grid, bin % grid, bin / grid, x0, x1, y0, y1);
            int px = -1, py = -1;
            for (int attempt = 0; attempt < 64; ++attempt) {
                int tx = x0 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(x1 - x0)));
                int ty = y0 + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(y1 - y0)));
                if (!used(tx - patch.x0, ty - patch.y0)) {
                    px = tx;
                    py = ty;
                    break;
                }
            }
            if (px < 0) {
                // bin nearly full: pick uniformly among the remaining pixels
                long target = static_cast<long>(rng.uniform_index(
                    static_cast<std::uint64_t>(bin_free[bin])));
                for (int ty = y0; ty < y1 && px < 0; ++ty)
                    for (int tx = x0; tx < x1; ++tx) {
                        if (used(tx - patch.x0, ty - patch.y0)) continue;
                        if (target-- == 0) {
                            px = tx;
                            py = ty;
                            break;
                        }
                    }
            }
            used(px - patch.x0, py - patch.y0) = 1;
            --bin_free[bin];
            plan.points.push_back({px, py, patch.id});
        }
    }
}

/// Evenly spread prompt points: a near-square grid of cells, one point per
/// selected cell, jittered around the cell center by up to
/// jitter_frac * cell/2. The n_total = 1 case with zero jitter is the image
/// center.
inline PromptPlan uniform_prompts(int width, int height, int n_total,
                                  std::uint64_t seed, double jitter_frac = 0.5) {
    PromptPlan plan;
    plan.width = width;
    plan.height = height;
    plan.patch_size = std::max(width, height);
    plan.base_count = n_total;
    plan.seed = seed;
    PromptPatch whole;
    whole.id = 0;
    whole.x0 = 0;
    whole.y0 = 0;
    whole.width = width;
    whole.height = height;
    whole.n_real = n_total;
    whole.count = n_total;
    plan.patches.push_back(whole);
    if (n_total <= 0) return plan;

    double aspect = static_cast<double>(width) / static_cast<double>(height);
    int gx = std::max(1, static_cast<int>(std::ceil(std::sqrt(n_total * aspect))));
    int gy = std::max(1, static_cast<int>(std::ceil(static_cast<double>(n_total) / gx)));
    int cells = gx * gy;

    // choose n_total cell indices spread evenly over the grid
    std::vector<int> chosen;
    chosen.reserve(n_total);
    if (cells == n_total) {
        for (int i = 0; i < cells; ++i) chosen.push_back(i);
    } else {
        for (int i = 0; i < n_total; ++i)
            chosen.push_back(static_cast<int>(
                (static_cast<long long>(i) * cells + cells / 2) / n_total));
    }

    Rng rng = Rng::stream(seed, 0x756e6966ull);
    double cw = static_cast<double>(width) / gx;
    double ch = static_cast<double>(height) / gy;
    for (int cell : chosen) {
        int cxi = cell % gx;
        int cyi = cell / gx;
        double cx = (cxi + 0.5) * cw;
        double cy = (cyi + 0.5) * ch;
        double jx = jitter_frac > 0 ? rng.uniform(-1.0, 1.0) * jitter_frac * cw * 0.5 : 0.0;
        double jy = jitter_frac > 0 ? rng.uniform(-1.0, 1.0) * jitter_frac * ch * 0.5 : 0.0;
        int px = std::clamp(static_cast<int>(std::floor(cx + jx)), 0, width - 1);
        int py = std::clamp(static_cast<int>(std::floor(cy + jy)), 0, height - 1);
        plan.points.push_back({px, py, 0});
    }
    return plan;
}

inline nlohmann::json prompt_plan_to_json(const PromptPlan& plan) {
    nlohmann::json patches = nlohmann::json::array();
    for (const auto& p : plan.patches)
        patches.push_back({{"id", p.id},
                           {"origin", {p.x0, p.y0}},
                           {"extent", {p.width, p.height}},
                           {"n_real", p.n_real},
                           {"count", p.count},
                           {"partial", p.partial}});
    nlohmann::json points = nlohmann::json::array();
    for (const auto& pt : plan.points)
        points.push_back({{"xy", {pt.x, pt.y}}, {"patch", pt.patch}});
    return {{"width", plan.width},
            {"height", plan.height},
            {"patch_size", plan.patch_size},
            {"base_count", plan.base_count},
            {"seed", plan.seed},
            {"patches", patches},
            {"points", points}};
}

inline PromptPlan prompt_plan_from_json(const nlohmann::json& j) {
    PromptPlan plan;
    plan.width = j.at("width").get<int>();
    plan.height = j.at("height").get<int>();
    plan.patch_size = j.at("patch_size").get<int>();
    plan.base_count = j.at("base_count").get<int>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& p : j.at("patches")) {
        PromptPatch patch;
        patch.id = p.at("id").get<int>();
        patch.x0 = p.at("origin")[0].get<int>();
        patch.y0 = p.at("origin")[1].get<int>();
        patch.width = p.at("extent")[0].get<int>();
        patch.height = p.at("extent")[1].get<int>();
        patch.n_real = p.at("n_real").get<double>();
        patch.count = p.at("count").get<int>();
        patch.partial = p.at("partial").get<bool>();
        plan.patches.push_back(patch);
    }
    for (const auto& p : j.at("points"))
        plan.points.push_back({p.at("xy")[0].get<int>(), p.at("xy")[1].get<int>(),
                               p.at("patch").get<int>()});
    return plan;
}

}  // namespace gags
