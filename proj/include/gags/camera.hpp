// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>

#include "gags/errors.hpp"
#include "gags/gaussian.hpp"

namespace gags {

/// Pinhole camera. Convention: x right, y down, z forward (camera space);
/// pixel (px, py) samples the continuous image plane at exactly (px, py),
/// so a point on the optical axis projects to (cx, cy).
template <class S>
struct Camera {
    int width = 0;
    int height = 0;
    S fx = S(1), fy = S(1), cx = S(0), cy = S(0);
    Mat3<S> rotation = Mat3<S>::Identity();   // world -> camera
    Vec3<S> translation = Vec3<S>::Zero();
    S near_clip = S(0.01), far_clip = S(1000);

    Vec3<S> to_camera(const Vec3<S>& p_world) const {
        return rotation * p_world + translation;
    }

    Vec2<S> project(const Vec3<S>& p_cam) const {
        return Vec2<S>(fx * p_cam.x() / p_cam.z() + cx,
                       fy * p_cam.y() / p_cam.z() + cy);
    }

    void validate() const {
        if (width <= 0 || height <= 0) throw DataError("camera size must be positive");
        if (!(fx > S(0) && fy > S(0))) throw DataError("camera focal must be positive");
        if (!(S(0) < near_clip && near_clip < far_clip))
            throw DataError("camera requires 0 < near < far");
        Mat3<S> should_be_id = rotation * rotation.transpose() - Mat3<S>::Identity();
        if (should_be_id.template lpNorm<Eigen::Infinity>() > S(1e-6))
            throw DataError("camera rotation not orthonormal");
        if (std::abs(rotation.determinant() - S(1)) > S(1e-6))
            throw DataError("camera rotation must have determinant +1");
    }
};

/// Builds a camera at `eye` looking at `target`, world `up` mapping to image
/// up (camera -y).
template <class S>
Camera<S> look_at_camera(const Vec3<S>& eye, const Vec3<S>& target,
                         const Vec3<S>& up, int width, int height,
                         S fov_y_radians, S near_clip, S far_clip) {
    Camera<S> cam;
    cam.width = width;
    cam.height = height;
    cam.fy = S(0.5) * S(height) / std::tan(fov_y_radians / S(2));
    cam.fx = cam.fy;
    cam.cx = S(0.5) * S(width - 1);
    cam.cy = S(0.5) * S(height - 1);
    cam.near_clip = near_clip;
    cam.far_clip = far_clip;

    Vec3<S> z_axis = (target - eye).normalized();
    Vec3<S> x_axis = z_axis.cross(up).normalized();
    Vec3<S> y_axis = z_axis.cross(x_axis);  // points opposite `up`
    cam.rotation.row(0) = x_axis.transpose();
    cam.rotation.row(1) = y_axis.transpose();
    cam.rotation.row(2) = z_axis.transpose();
    cam.translation = -(cam.rotation * eye);
    return cam;
}

using Cameraf = Camera<float>;
using Camerad = Camera<double>;

}  // namespace gags
