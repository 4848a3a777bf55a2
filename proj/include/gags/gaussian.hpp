// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <limits>
#include <vector>

#include "gags/errors.hpp"

namespace gags {

template <class S>
using Vec3 = Eigen::Matrix<S, 3, 1>;
template <class S>
using Vec2 = Eigen::Matrix<S, 2, 1>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using Mat3 = Eigen::Matrix<S, 3, 3>;
template <class S>
using Mat2 = Eigen::Matrix<S, 2, 2>;
template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr std::uint32_t kNoGaussian = 0xffffffffu;

/// One anisotropic 3D Gaussian. Geometry is frozen after load/generation;
/// only `feature` is trainable.
template <class S>
struct Gaussian {
    Vec3<S> position = Vec3<S>::Zero();
    Vec3<S> scale = Vec3<S>::Ones();          // positive axis lengths
    Eigen::Quaternion<S> rotation = Eigen::Quaternion<S>::Identity();
    S opacity = S(0.5);                       // in (0, 1)
    VecX<S> feature;                          // length d, trainable
    Vec3<S> color = Vec3<S>::Constant(S(0.5));  // visualization only
    S min_depth = S(-1);                      // cached MD_g, < 0 means unset

    bool has_min_depth() const { return min_depth >= S(0); }

    /// Normalizes the quaternion only when it is off unit by more than tol,
    /// so values already unit at float precision round-trip bitwise.
    void normalize_rotation(S tol = S(1e-6)) {
        S n = rotation.norm();
        if (n <= S(0))
            throw DataError("gaussian rotation has zero norm");
        if (std::abs(n - S(1)) > tol) rotation.coeffs() /= n;
    }

    Mat3<S> covariance() const {
        Mat3<S> r = rotation.toRotationMatrix();
        return r * scale.array().square().matrix().asDiagonal() * r.transpose();
    }
};

template <class S>
struct Aabb {
    Vec3<S> min = Vec3<S>::Constant(std::numeric_limits<S>::max());
    Vec3<S> max = Vec3<S>::Constant(std::numeric_limits<S>::lowest());
};

/// A field of Gaussians sharing one feature dimension d.
template <class S>
struct GaussianField {
    std::vector<Gaussian<S>> gaussians;
    int feature_dim = 16;

    std::size_t size() const { return gaussians.size(); }

    void validate() const {
        for (std::size_t i = 0; i < gaussians.size(); ++i) {
            const auto& g = gaussians[i];
            if (g.feature.size() != feature_dim)
                throw DataError("gaussian " + std::to_string(i) +
                                " feature length does not match field dim");
            if (!(g.opacity > S(0) && g.opacity < S(1)))
                throw DataError("gaussian opacity outside (0,1)");
            if (!(g.scale.minCoeff() > S(0)))
                throw DataError("gaussian scale must be positive");
            if (std::abs(g.rotation.norm() - S(1)) > S(1e-6))
                throw DataError("gaussian quaternion not unit");
        }
    }

    Aabb<S> bounding_box() const {
        Aabb<S> box;
        for (const auto& g : gaussians) {
            box.min = box.min.cwiseMin(g.position);
            box.max = box.max.cwiseMax(g.position);
        }
        return box;
    }

    /// Features of all Gaussians as a d x N matrix (column per Gaussian).
    MatX<S> feature_matrix() const {
        MatX<S> m(feature_dim, gaussians.size());
        for (std::size_t i = 0; i < gaussians.size(); ++i)
            m.col(static_cast<Eigen::Index>(i)) = gaussians[i].feature;
        return m;
    }

    void set_features(const MatX<S>& m) {
        if (m.rows() != feature_dim ||
            m.cols() != static_cast<Eigen::Index>(gaussians.size()))
            throw DataError("feature matrix shape mismatch");
        for (std::size_t i = 0; i < gaussians.size(); ++i)
            gaussians[i].feature = m.col(static_cast<Eigen::Index>(i));
    }
};

using Gaussianf = Gaussian<float>;
using Gaussiand = Gaussian<double>;
using GaussianFieldf = GaussianField<float>;
using GaussianFieldd = GaussianField<double>;

}  // namespace gags
