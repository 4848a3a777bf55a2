// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gags/errors.hpp"
#include "gags/image.hpp"

namespace gags {

/// Flat binary tensor container.
/// Layout: 8-byte magic "GAGSTNSR", u8 dtype (0 = f32, 1 = u32), u8 rank
/// (1..4), u32 dims[rank], then the row-major little-endian payload.
struct TensorFile {
    enum class DType : std::uint8_t { F32 = 0, U32 = 1 };

    DType dtype = DType::F32;
    std::vector<std::uint32_t> shape;  // rank 1..4
    std::vector<float> f32;
    std::vector<std::uint32_t> u32;

    std::size_t element_count() const;

    static TensorFile from_matrix(const Eigen::MatrixXd& m);
    Eigen::MatrixXd to_matrix() const;  // requires rank 2, f32

    static TensorFile from_image_u32(const Image<std::uint32_t>& img);
    Image<std::uint32_t> to_image_u32() const;  // requires rank 2, u32
};

void write_tensor(const std::string& path, const TensorFile& t);
TensorFile read_tensor(const std::string& path);

}  // namespace gags
