// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "gags/errors.hpp"
#include "gags/gaussian.hpp"
#include "gags/rng.hpp"

namespace gags {

/// Softmax over the rows of a 3 x P granularity factor map, columnwise with
/// max subtraction.
template <class S>
Eigen::Matrix<S, 3, Eigen::Dynamic> granularity_weights(
    const Eigen::Matrix<S, 3, Eigen::Dynamic>& eta) {
    Eigen::Matrix<S, 3, Eigen::Dynamic> alpha(3, eta.cols());
    for (Eigen::Index p = 0; p < eta.cols(); ++p) {
        Eigen::Matrix<S, 3, 1> e = eta.col(p);
        S m = e.maxCoeff();
        Eigen::Matrix<S, 3, 1> ex = (e.array() - m).exp();
        alpha.col(p) = ex / ex.sum();
    }
    return alpha;
}

template <class S>
Eigen::Matrix<S, 3, 1> granularity_weights(const Eigen::Matrix<S, 3, 1>& eta) {
    S m = eta.maxCoeff();
    Eigen::Matrix<S, 3, 1> ex = (eta.array() - m).exp();
    return ex / ex.sum();
}

/// Shared pointwise decoder: d -> h -> h -> (C + 3) with ReLU between the
/// hidden layers. The first C outputs are L2-normalized into the predicted
/// full-dim feature, the last 3 are the granularity factor.
template <class S>
struct Decoder {
    int feature_dim = 16;  // d
    int clip_dim = 32;     // C
    int hidden = 64;       // h

    MatX<S> w1, w2, w3;
    VecX<S> b1, b2, b3;

    struct Activations {
        MatX<S> x;         // d x P input
        MatX<S> z1, a1;    // h x P
        MatX<S> z2, a2;    // h x P
        MatX<S> y;         // (C+3) x P raw output
        VecX<S> norms;     // P, norms of the raw clip block
    };

    struct Result {
        MatX<S> f_clip;                          // C x P, unit columns
        Eigen::Matrix<S, 3, Eigen::Dynamic> eta; // 3 x P
        Activations acts;
    };

    struct Grads {
        MatX<S> w1, w2, w3;
        VecX<S> b1, b2, b3;

        Grads() = default;
        explicit Grads(const Decoder& d)
            : w1(MatX<S>::Zero(d.hidden, d.feature_dim)),
              w2(MatX<S>::Zero(d.hidden, d.hidden)),
              w3(MatX<S>::Zero(d.clip_dim + 3, d.hidden)),
              b1(VecX<S>::Zero(d.hidden)),
              b2(VecX<S>::Zero(d.hidden)),
              b3(VecX<S>::Zero(d.clip_dim + 3)) {}
    };

    static Decoder random(int feature_dim, int clip_dim, int hidden,
                          std::uint64_t seed) {
        Decoder dec;
        dec.feature_dim = feature_dim;
        dec.clip_dim = clip_dim;
        dec.hidden = hidden;
        Rng rng = Rng::stream(seed, 0x6465636full);
        // weights and biases both uniform fan-in scaled; nonzero biases keep
        // the ReLU stack alive under the zero feature initialization
        auto init = [&rng](auto& w, int rows, int cols, int fan_in) {
            S bound = S(1) / std::sqrt(S(fan_in));
            w.resize(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c)
                    w(r, c) = S(rng.uniform(-1.0, 1.0)) * bound;
        };
        init(dec.w1, hidden, feature_dim, feature_dim);
        init(dec.w2, hidden, hidden, hidden);
        init(dec.w3, clip_dim + 3, hidden, hidden);
        init(dec.b1, hidden, 1, feature_dim);
        init(dec.b2, hidden, 1, hidden);
        init(dec.b3, clip_dim + 3, 1, hidden);
        return dec;
    }

    static Decoder zero(int feature_dim, int clip_dim, int hidden) {
        Decoder dec;
        dec.feature_dim = feature_dim;
        dec.clip_dim = clip_dim;
        dec.hidden = hidden;
        dec.w1 = MatX<S>::Zero(hidden, feature_dim);
        dec.w2 = MatX<S>::Zero(hidden, hidden);
        dec.w3 = MatX<S>::Zero(clip_dim + 3, hidden);
        dec.b1 = VecX<S>::Zero(hidden);
        dec.b2 = VecX<S>::Zero(hidden);
        dec.b3 = VecX<S>::Zero(clip_dim + 3);
        return dec;
    }

    Result decode(const MatX<S>& f_render) const {
        Result r;
        decode_into(f_render, r);
        return r;
    }

    /// In-place variant: reuses the buffers of `r` across calls, so steady
    /// training iterations run allocation-free.
    void decode_into(const MatX<S>& f_render, Result& r) const {
        if (f_render.rows() != feature_dim)
            throw DataError("decoder input dim mismatch");
        r.acts.x = f_render;
        r.acts.z1.noalias() = w1 * f_render;
        r.acts.z1.colwise() += b1;
        r.acts.a1 = r.acts.z1.cwiseMax(S(0));
        r.acts.z2.noalias() = w2 * r.acts.a1;
        r.acts.z2.colwise() += b2;
        r.acts.a2 = r.acts.z2.cwiseMax(S(0));
        r.acts.y.noalias() = w3 * r.acts.a2;
        r.acts.y.colwise() += b3;

        r.eta = r.acts.y.bottomRows(3);
        r.acts.norms =
            r.acts.y.topRows(clip_dim).colwise().norm().transpose().cwiseMax(S(1e-8));
        r.f_clip = r.acts.y.topRows(clip_dim);
        r.f_clip.array().rowwise() /= r.acts.norms.transpose().array();
    }

    struct BackwardScratch {
        MatX<S> dy, dz1, dz2, dx;
    };

    /// Backprop: d_f_clip is the loss gradient w.r.t. the NORMALIZED clip
    /// output, d_eta w.r.t. the granularity factor. Fills `grads` and
    /// returns the gradient w.r.t. the rendered-feature input (a reference
    /// into the scratch buffers).
    const MatX<S>& backward(const Result& r, const MatX<S>& d_f_clip,
                            const Eigen::Matrix<S, 3, Eigen::Dynamic>& d_eta,
                            Grads& grads, BackwardScratch& scratch) const {
        const Eigen::Index p = r.acts.x.cols();
        if (d_f_clip.rows() != clip_dim || d_f_clip.cols() != p ||
            d_eta.cols() != p)
            throw DataError("decoder backward gradient shape mismatch");

        // through y_hat = y / ||y||: (I - y_hat y_hat^T) / ||y|| * g
        MatX<S>& dy = scratch.dy;
        dy.resize(clip_dim + 3, p);
        Eigen::Matrix<S, 1, Eigen::Dynamic> dots =
            (r.f_clip.array() * d_f_clip.array()).colwise().sum();
        dy.topRows(clip_dim) =
            d_f_clip - (r.f_clip.array().rowwise() * dots.array()).matrix();
        dy.topRows(clip_dim).array().rowwise() /= r.acts.norms.transpose().array();
        dy.bottomRows(3) = d_eta;

        grads.w3.noalias() = dy * r.acts.a2.transpose();
        grads.b3 = dy.rowwise().sum();
        MatX<S>& dz2 = scratch.dz2;
        dz2.resize(hidden, p);
        dz2.noalias() = w3.transpose() * dy;
        dz2 = (r.acts.z2.array() > S(0)).select(dz2, S(0));
        grads.w2.noalias() = dz2 * r.acts.a1.transpose();
        grads.b2 = dz2.rowwise().sum();
        MatX<S>& dz1 = scratch.dz1;
        dz1.resize(hidden, p);
        dz1.noalias() = w2.transpose() * dz2;
        dz1 = (r.acts.z1.array() > S(0)).select(dz1, S(0));
        grads.w1.noalias() = dz1 * r.acts.x.transpose();
        grads.b1 = dz1.rowwise().sum();
        scratch.dx.resize(feature_dim, p);
        scratch.dx.noalias() = w1.transpose() * dz1;
        return scratch.dx;
    }

    MatX<S> backward(const Result& r, const MatX<S>& d_f_clip,
                     const Eigen::Matrix<S, 3, Eigen::Dynamic>& d_eta,
                     Grads& grads) const {
        BackwardScratch scratch;
        backward(r, d_f_clip, d_eta, grads, scratch);
        return std::move(scratch.dx);
    }
};

using Decoderd = Decoder<double>;

/// Adam state for one parameter tensor.
template <class S>
struct AdamState {
    MatX<S> m, v;
    void init(Eigen::Index rows, Eigen::Index cols) {
        m = MatX<S>::Zero(rows, cols);
        v = MatX<S>::Zero(rows, cols);
    }
};

template <class S>
struct AdamParams {
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
};

/// One Adam update; `step` is the 1-based global step count.
template <class S, class ParamLike, class GradLike>
void adam_step(ParamLike&& param, const GradLike& grad, AdamState<S>& state,
               S lr, long step, const AdamParams<S>& ap = {}) {
    if (state.m.rows() != param.rows() || state.m.cols() != param.cols())
        state.init(param.rows(), param.cols());
    state.m = ap.beta1 * state.m + (S(1) - ap.beta1) * grad;
    state.v = ap.beta2 * state.v.array().matrix() +
              (S(1) - ap.beta2) * grad.array().square().matrix();
    S c1 = S(1) - std::pow(ap.beta1, S(step));
    S c2 = S(1) - std::pow(ap.beta2, S(step));
    param.array() -= lr * (state.m.array() / c1) /
                     ((state.v.array() / c2).sqrt() + ap.eps);
}

}  // namespace gags
