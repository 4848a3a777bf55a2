// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gags/image.hpp"

namespace gags {

// 16-bit binary PGM (P5, maxval 65535, big-endian samples).
void write_pgm16(const std::string& path, const Image<std::uint16_t>& img);
Image<std::uint16_t> read_pgm16(const std::string& path);

// 8-bit RGB PNG; `rgb` is interleaved row-major, 3 bytes per pixel.
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& rgb);

// Single-channel PNG of any bit depth, widened to 16 bits.
Image<std::uint16_t> read_png_gray16(const std::string& path);

// Region-id maps move through 16-bit PGM; ids must fit.
void write_mask(const std::string& path, const Image<std::uint32_t>& mask);
Image<std::uint32_t> read_mask(const std::string& path);

}  // namespace gags
