// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gags/camera.hpp"
#include "gags/errors.hpp"
#include "gags/gaussian.hpp"
#include "gags/image.hpp"
#include "gags/parallel.hpp"

namespace gags {

inline constexpr int kTileSize = 16;
inline constexpr double kLowPassDilation = 0.3;   // px^2 added to cov2d diagonal
inline constexpr double kAlphaMax = 0.99;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr double kAlphaSkip = 1e-4;  // below this a splat contributes nothing visible

/// A Gaussian projected into one view: 2D mean in pixel coordinates and the
/// Jacobian-propagated 2D covariance after low-pass dilation.
template <class S>
struct Projected2D {
    Vec2<S> mean2d = Vec2<S>::Zero();
    Mat2<S> cov2d = Mat2<S>::Identity();
    Mat2<S> cov2d_inv = Mat2<S>::Identity();
    S depth = S(0);          // camera-space z
    S radius = S(0);         // 3 sigma, pixels
    S opacity = S(0);
    std::uint32_t source = 0;  // index into the field
};

/// View-constant raster state: projected splats sorted by depth plus the
/// per-tile splat lists. Geometry is frozen during training, so this can be
/// built once per view and reused across iterations.
template <class S>
struct SplatContext {
    int width = 0, height = 0;
    int tiles_x = 0, tiles_y = 0;
    std::vector<Projected2D<S>> splats;           // ascending depth
    std::vector<std::vector<std::uint32_t>> tile_splats;  // indices into splats
};

template <class S>
struct RenderOptions {
    bool allow_empty = false;
    bool track_max_weight = false;  // per-gaussian max blend weight
    bool skip_features = false;     // geometry-only pass
    int threads = 1;
};

template <class S>
struct RenderOutput {
    int width = 0, height = 0;
    int feature_dim = 0;
    MatX<S> features;            // d x (W*H), f_render
    Eigen::Matrix<S, 3, Eigen::Dynamic> colors;  // 3 x (W*H)
    Image<S> depth;              // alpha-weighted expected depth, renormalized
    Image<std::uint8_t> depth_valid;
    Image<S> transmittance;      // T after the last blended splat
    Image<std::uint32_t> dominant;     // largest-weight contributor, kNoGaussian if none
    Image<std::uint32_t> blend_count;
    std::vector<S> max_blend_weight;   // per gaussian, when tracked

    bool covered(int x, int y) const { return blend_count(x, y) > 0; }
};

template <class S>
struct MinDepthMap {
    Image<S> md;
    Image<std::uint8_t> valid;
};

/// Projects every Gaussian into the view. Splats behind the near plane,
/// beyond the far plane, or whose 3-sigma ellipse misses the viewport are
/// culled. Result is sorted by ascending depth (stable in field order).
template <class S>
std::vector<Projected2D<S>> project(const GaussianField<S>& field,
                                    const Camera<S>& camera) {
    std::vector<Projected2D<S>> out;
    out.reserve(field.size());
    const Mat3<S>& rot = camera.rotation;
    for (std::size_t i = 0; i < field.size(); ++i) {
        const Gaussian<S>& g = field.gaussians[i];
        Vec3<S> pc = camera.to_camera(g.position);
        S z = pc.z();
        if (!(z > camera.near_clip && z < camera.far_clip)) continue;

        Projected2D<S> s;
        s.mean2d = camera.project(pc);
        s.depth = z;
        s.opacity = g.opacity;
        s.source = static_cast<std::uint32_t>(i);

        Eigen::Matrix<S, 2, 3> jac;
        S iz = S(1) / z;
        jac << camera.fx * iz, S(0), -camera.fx * pc.x() * iz * iz,
               S(0), camera.fy * iz, -camera.fy * pc.y() * iz * iz;
        Eigen::Matrix<S, 2, 3> m = jac * rot;
        s.cov2d = m * g.covariance() * m.transpose();
        s.cov2d(0, 0) += S(kLowPassDilation);
        s.cov2d(1, 1) += S(kLowPassDilation);

        S a = s.cov2d(0, 0), b = s.cov2d(0, 1), c = s.cov2d(1, 1);
        S det = a * c - b * b;
        if (!(det > S(0))) continue;
        S idet = S(1) / det;
        s.cov2d_inv << c * idet, -b * idet, -b * idet, a * idet;

        S mid = S(0.5) * (a + c);
        S lambda_max = mid + std::sqrt(std::max(S(1e-12), mid * mid - det));
        s.radius = S(3) * std::sqrt(lambda_max);

        if (s.mean2d.x() + s.radius < S(0) ||
            s.mean2d.x() - s.radius > S(camera.width - 1) ||
            s.mean2d.y() + s.radius < S(0) ||
            s.mean2d.y() - s.radius > S(camera.height - 1))
            continue;
        out.push_back(s);
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const Projected2D<S>& lhs, const Projected2D<S>& rhs) {
                         return lhs.depth < rhs.depth;
                     });
    return out;
}

template <class S>
SplatContext<S> build_context(const GaussianField<S>& field,
                              const Camera<S>& camera) {
    camera.validate();
    SplatContext<S> ctx;
    ctx.width = camera.width;
    ctx.height = camera.height;
    ctx.tiles_x = (camera.width + kTileSize - 1) / kTileSize;
    ctx.tiles_y = (camera.height + kTileSize - 1) / kTileSize;
    ctx.splats = project(field, camera);
    ctx.tile_splats.assign(static_cast<std::size_t>(ctx.tiles_x) * ctx.tiles_y, {});
    for (std::uint32_t si = 0; si < ctx.splats.size(); ++si) {
        const Projected2D<S>& s = ctx.splats[si];
        int x0 = std::max(0, static_cast<int>(std::floor(s.mean2d.x() - s.radius)) / kTileSize);
        int y0 = std::max(0, static_cast<int>(std::floor(s.mean2d.y() - s.radius)) / kTileSize);
        int x1 = std::min(ctx.tiles_x - 1,
                          static_cast<int>(std::floor(s.mean2d.x() + s.radius)) / kTileSize);
        int y1 = std::min(ctx.tiles_y - 1,
                          static_cast<int>(std::floor(s.mean2d.y() + s.radius)) / kTileSize);
        for (int ty = y0; ty <= y1; ++ty)
            for (int tx = x0; tx <= x1; ++tx)
                ctx.tile_splats[static_cast<std::size_t>(ty) * ctx.tiles_x + tx].push_back(si);
    }
    return ctx;
}

namespace detail {

// Walks the depth-ordered splat list for one pixel, invoking
// contribute(list_pos, splat, alpha * T) for every blended splat.
// Returns the final transmittance.
template <class S, class PerContribution>
inline S blend_pixel(const SplatContext<S>& ctx,
                     const std::vector<std::uint32_t>& list, S px, S py,
                     PerContribution&& contribute) {
    S t = S(1);
    for (std::size_t pos = 0; pos < list.size(); ++pos) {
        const Projected2D<S>& s = ctx.splats[list[pos]];
        S dx = px - s.mean2d.x();
        S dy = py - s.mean2d.y();
        S power = S(-0.5) * (s.cov2d_inv(0, 0) * dx * dx +
                             S(2) * s.cov2d_inv(0, 1) * dx * dy +
                             s.cov2d_inv(1, 1) * dy * dy);
        S alpha = std::min(S(kAlphaMax), s.opacity * std::exp(power));
        if (!(alpha > S(kAlphaSkip))) continue;
        contribute(pos, s, alpha * t);
        t *= S(1) - alpha;
        if (t < S(kTransmittanceStop)) break;
    }
    return t;
}

}  // namespace detail

/// Alpha blending per pixel: f_render(p) = sum_i f_i * alpha_i * T_i with
/// T_i the transmittance before splat i. Blending stops once T < 1e-4.
/// The depth map is the alpha-weighted expected depth renormalized by
/// coverage; pixels with no contributor carry an invalid flag.
template <class S>
RenderOutput<S> render_with_context(const GaussianField<S>& field,
                                    const SplatContext<S>& ctx,
                                    const RenderOptions<S>& opts = {}) {
    if (field.gaussians.empty() && !opts.allow_empty)
        throw DataError("render called on an empty field");
    const int w = ctx.width, h = ctx.height, d = field.feature_dim;
    const std::size_t pixels = static_cast<std::size_t>(w) * h;

    RenderOutput<S> out;
    out.width = w;
    out.height = h;
    out.feature_dim = d;
    if (!opts.skip_features) {
        out.features = MatX<S>::Zero(d, static_cast<Eigen::Index>(pixels));
        out.colors = Eigen::Matrix<S, 3, Eigen::Dynamic>::Zero(3, static_cast<Eigen::Index>(pixels));
    }
    out.depth = Image<S>(w, h, S(0));
    out.depth_valid = Image<std::uint8_t>(w, h, 0);
    out.transmittance = Image<S>(w, h, S(1));
    out.dominant = Image<std::uint32_t>(w, h, kNoGaussian);
    out.blend_count = Image<std::uint32_t>(w, h, 0);

    const std::size_t tile_count = ctx.tile_splats.size();
    std::vector<std::vector<std::pair<std::uint32_t, S>>> tile_max;
    if (opts.track_max_weight) tile_max.resize(tile_count);

    parallel_for(tile_count, opts.threads, [&](std::size_t t0, std::size_t t1) {
        for (std::size_t tile = t0; tile < t1; ++tile) {
            const auto& list = ctx.tile_splats[tile];
            if (list.empty()) continue;
            std::vector<S> local_max;
            if (opts.track_max_weight) local_max.assign(list.size(), S(0));
            // splat index -> position in `list` for max tracking
            int tx = static_cast<int>(tile) % ctx.tiles_x;
            int ty = static_cast<int>(tile) / ctx.tiles_x;
            int x_end = std::min(w, (tx + 1) * kTileSize);
            int y_end = std::min(h, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y_end; ++y) {
                for (int x = tx * kTileSize; x < x_end; ++x) {
                    std::size_t p = static_cast<std::size_t>(y) * w + x;
                    S depth_acc = S(0);
                    S best_w = S(0);
                    std::uint32_t best = kNoGaussian;
                    std::uint32_t count = 0;
                    S t_final = detail::blend_pixel<S>(
                        ctx, list, S(x), S(y),
                        [&](std::size_t pos, const Projected2D<S>& s, S weight) {
                            if (!opts.skip_features) {
                                const Gaussian<S>& g = field.gaussians[s.source];
                                out.features.col(static_cast<Eigen::Index>(p)) +=
                                    weight * g.feature;
                                out.colors.col(static_cast<Eigen::Index>(p)) +=
                                    weight * g.color;
                            }
                            depth_acc += weight * s.depth;
                            ++count;
                            if (weight > best_w) {
                                best_w = weight;
                                best = s.source;
                            }
                            if (opts.track_max_weight)
                                local_max[pos] = std::max(local_max[pos], weight);
                        });
                    out.transmittance(x, y) = t_final;
                    out.blend_count(x, y) = count;
                    out.dominant(x, y) = best;
                    if (count > 0) {
                        S coverage = S(1) - t_final;
                        out.depth(x, y) = depth_acc / coverage;
                        out.depth_valid(x, y) = 1;
                    }
                }
            }
            if (opts.track_max_weight) tile_max[tile] = [&] {
                std::vector<std::pair<std::uint32_t, S>> v;
                v.reserve(list.size());
                for (std::size_t j = 0; j < list.size(); ++j)
                    v.emplace_back(ctx.splats[list[j]].source, local_max[j]);
                return v;
            }();
        }
    });

    if (opts.track_max_weight) {
        out.max_blend_weight.assign(field.size(), S(-1));
        for (const auto& s : ctx.splats)
            out.max_blend_weight[s.source] = S(0);  // projected but maybe unblended
        for (std::size_t tile = 0; tile < tile_count; ++tile)
            for (const auto& [source, weight] : tile_max[tile])
                out.max_blend_weight[source] =
                    std::max(out.max_blend_weight[source], weight);
    }
    return out;
}

template <class S>
RenderOutput<S> render(const GaussianField<S>& field, const Camera<S>& camera,
                       const RenderOptions<S>& opts = {}) {
    SplatContext<S> ctx = build_context(field, camera);
    return render_with_context(field, ctx, opts);
}

/// Frozen-geometry blend weights of one view in CSR form. Because only
/// features train, alpha_i * T_i per (pixel, gaussian) never changes; the
/// training loop renders and backpropagates through this cache instead of
/// re-walking the splat lists. Results are bit-identical to the walk.
template <class S>
struct BlendCache {
    int width = 0, height = 0;
    std::vector<std::uint32_t> offsets;  // pixels + 1
    std::vector<std::uint32_t> sources;
    std::vector<S> weights;
    RenderOutput<S> geometry;  // depth/transmittance/dominant/count maps

    bool covered(int x, int y) const { return geometry.covered(x, y); }
};

template <class S>
BlendCache<S> build_blend_cache(const GaussianField<S>& field,
                                const SplatContext<S>& ctx, int threads = 1) {
    BlendCache<S> cache;
    cache.width = ctx.width;
    cache.height = ctx.height;
    const std::size_t pixels = static_cast<std::size_t>(ctx.width) * ctx.height;

    RenderOptions<S> opts;
    opts.allow_empty = true;
    opts.skip_features = true;
    opts.threads = threads;
    cache.geometry = render_with_context(field, ctx, opts);

    std::vector<std::vector<std::pair<std::uint32_t, S>>> per_pixel(pixels);
    const std::size_t tile_count = ctx.tile_splats.size();
    parallel_for(tile_count, threads, [&](std::size_t t0, std::size_t t1) {
        for (std::size_t tile = t0; tile < t1; ++tile) {
            const auto& list = ctx.tile_splats[tile];
            if (list.empty()) continue;
            int tx = static_cast<int>(tile) % ctx.tiles_x;
            int ty = static_cast<int>(tile) / ctx.tiles_x;
            int x_end = std::min(ctx.width, (tx + 1) * kTileSize);
            int y_end = std::min(ctx.height, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y_end; ++y)
                for (int x = tx * kTileSize; x < x_end; ++x) {
                    auto& bucket = per_pixel[static_cast<std::size_t>(y) * ctx.width + x];
                    detail::blend_pixel<S>(
                        ctx, list, S(x), S(y),
                        [&](std::size_t, const Projected2D<S>& s, S weight) {
                            bucket.emplace_back(s.source, weight);
                        });
                }
        }
    });

    cache.offsets.resize(pixels + 1);
    cache.offsets[0] = 0;
    std::size_t total = 0;
    for (std::size_t p = 0; p < pixels; ++p) {
        total += per_pixel[p].size();
        cache.offsets[p + 1] = static_cast<std::uint32_t>(total);
    }
    cache.sources.resize(total);
    cache.weights.resize(total);
    std::size_t k = 0;
    for (std::size_t p = 0; p < pixels; ++p)
        for (const auto& [source, weight] : per_pixel[p]) {
            cache.sources[k] = source;
            cache.weights[k] = weight;
            ++k;
        }
    return cache;
}

template <class S>
BlendCache<S> build_blend_cache(const GaussianField<S>& field,
                                const Camera<S>& camera, int threads = 1) {
    SplatContext<S> ctx = build_context(field, camera);
    return build_blend_cache(field, ctx, threads);
}

/// f_render from cached blend weights; bit-identical to the forward walk.
template <class S>
MatX<S> render_cached_features(const GaussianField<S>& field,
                               const BlendCache<S>& cache) {
    const std::size_t pixels = cache.offsets.size() - 1;
    MatX<S> features = MatX<S>::Zero(field.feature_dim,
                                     static_cast<Eigen::Index>(pixels));
    for (std::size_t p = 0; p < pixels; ++p) {
        auto col = features.col(static_cast<Eigen::Index>(p));
        for (std::uint32_t k = cache.offsets[p]; k < cache.offsets[p + 1]; ++k)
            col += cache.weights[k] * field.gaussians[cache.sources[k]].feature;
    }
    return features;
}

template <class S>
MatX<S> render_backward_cached(const GaussianField<S>& field,
                               const BlendCache<S>& cache, const MatX<S>& grad) {
    const std::size_t pixels = cache.offsets.size() - 1;
    if (grad.rows() != field.feature_dim ||
        grad.cols() != static_cast<Eigen::Index>(pixels))
        throw DataError("grad_feature_map shape mismatch");
    MatX<S> out = MatX<S>::Zero(field.feature_dim,
                                static_cast<Eigen::Index>(field.size()));
    for (std::size_t p = 0; p < pixels; ++p) {
        auto col = grad.col(static_cast<Eigen::Index>(p));
        if (cache.offsets[p] == cache.offsets[p + 1] || col.isZero(S(0))) continue;
        for (std::uint32_t k = cache.offsets[p]; k < cache.offsets[p + 1]; ++k)
            out.col(cache.sources[k]) += cache.weights[k] * col;
    }
    return out;
}

/// Gradient of a scalar loss with respect to every Gaussian feature, given
/// the loss gradient over the rendered feature map:
/// dL/df_i = sum_p alpha_i(p) T_i(p) grad(p). Per-tile partial sums are
/// reduced in fixed tile order, so results do not depend on thread count.
template <class S>
MatX<S> render_backward_with_context(const GaussianField<S>& field,
                                     const SplatContext<S>& ctx,
                                     const MatX<S>& grad_feature_map,
                                     int threads = 1) {
    const int w = ctx.width, h = ctx.height, d = field.feature_dim;
    const std::size_t pixels = static_cast<std::size_t>(w) * h;
    if (grad_feature_map.rows() != d ||
        grad_feature_map.cols() != static_cast<Eigen::Index>(pixels))
        throw DataError("grad_feature_map shape mismatch");

    const std::size_t tile_count = ctx.tile_splats.size();
    std::vector<MatX<S>> tile_grads(tile_count);

    parallel_for(tile_count, threads, [&](std::size_t t0, std::size_t t1) {
        for (std::size_t tile = t0; tile < t1; ++tile) {
            const auto& list = ctx.tile_splats[tile];
            if (list.empty()) continue;
            MatX<S> local = MatX<S>::Zero(d, static_cast<Eigen::Index>(list.size()));
            int tx = static_cast<int>(tile) % ctx.tiles_x;
            int ty = static_cast<int>(tile) / ctx.tiles_x;
            int x_end = std::min(w, (tx + 1) * kTileSize);
            int y_end = std::min(h, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y_end; ++y) {
                for (int x = tx * kTileSize; x < x_end; ++x) {
                    std::size_t p = static_cast<std::size_t>(y) * w + x;
                    auto grad_col = grad_feature_map.col(static_cast<Eigen::Index>(p));
                    if (grad_col.isZero(S(0))) continue;
                    detail::blend_pixel<S>(
                        ctx, list, S(x), S(y),
                        [&](std::size_t pos, const Projected2D<S>&, S weight) {
                            local.col(static_cast<Eigen::Index>(pos)) +=
                                weight * grad_col;
                        });
                }
            }
            tile_grads[tile] = std::move(local);
        }
    });

    MatX<S> grads = MatX<S>::Zero(d, static_cast<Eigen::Index>(field.size()));
    for (std::size_t tile = 0; tile < tile_count; ++tile) {
        if (tile_grads[tile].size() == 0) continue;
        const auto& list = ctx.tile_splats[tile];
        for (std::size_t j = 0; j < list.size(); ++j)
            grads.col(static_cast<Eigen::Index>(ctx.splats[list[j]].source)) +=
                tile_grads[tile].col(static_cast<Eigen::Index>(j));
    }
    return grads;
}

template <class S>
MatX<S> render_backward(const GaussianField<S>& field, const Camera<S>& camera,
                        const MatX<S>& grad_feature_map, int threads = 1) {
    SplatContext<S> ctx = build_context(field, camera);
    return render_backward_with_context(field, ctx, grad_feature_map, threads);
}

/// Fills Gaussian.min_depth with MD_g: the minimum camera-space depth over
/// all views where the Gaussian is visible (max per-pixel blend weight in
/// that view >= visibility_threshold). Gaussians visible nowhere fall back
/// to their minimum in-frustum depth; the return value counts them.
template <class S>
std::size_t compute_min_depth(GaussianField<S>& field,
                              const std::vector<Camera<S>>& cameras,
                              S visibility_threshold = S(0.05), int threads = 1) {
    if (cameras.empty()) throw DataError("compute_min_depth requires >= 1 camera");
    const std::size_t n = field.size();
    std::vector<S> visible_min(n, S(-1));
    std::vector<S> frustum_min(n, S(-1));

    for (const Camera<S>& cam : cameras) {
        SplatContext<S> ctx = build_context(field, cam);
        RenderOptions<S> opts;
        opts.allow_empty = true;
        opts.skip_features = true;
        opts.track_max_weight = true;
        opts.threads = threads;
        RenderOutput<S> ro = render_with_context(field, ctx, opts);
        for (const auto& s : ctx.splats) {
            S& fmin = frustum_min[s.source];
            if (fmin < S(0) || s.depth < fmin) fmin = s.depth;
            if (ro.max_blend_weight[s.source] >= visibility_threshold) {
                S& vmin = visible_min[s.source];
                if (vmin < S(0) || s.depth < vmin) vmin = s.depth;
            }
        }
    }

    std::size_t fallbacks = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (visible_min[i] >= S(0)) {
            field.gaussians[i].min_depth = visible_min[i];
        } else if (frustum_min[i] >= S(0)) {
            field.gaussians[i].min_depth = frustum_min[i];
            ++fallbacks;
        } else {
            field.gaussians[i].min_depth = S(-1);  // never enters any frustum
            ++fallbacks;
        }
    }
    return fallbacks;
}

/// Lifts per-Gaussian MD_g to pixels through the dominant contributor.
template <class S>
MinDepthMap<S> min_depth_map(const RenderOutput<S>& ro,
                             const GaussianField<S>& field) {
    MinDepthMap<S> out;
    out.md = Image<S>(ro.width, ro.height, S(0));
    out.valid = Image<std::uint8_t>(ro.width, ro.height, 0);
    for (int y = 0; y < ro.height; ++y) {
        for (int x = 0; x < ro.width; ++x) {
            std::uint32_t g = ro.dominant(x, y);
            if (g == kNoGaussian) continue;
            const Gaussian<S>& gauss = field.gaussians[g];
            if (!gauss.has_min_depth())
                throw DataError("min_depth_map: referenced gaussian has unset min_depth");
            out.md(x, y) = gauss.min_depth;
            out.valid(x, y) = 1;
        }
    }
    return out;
}

}  // namespace gags
