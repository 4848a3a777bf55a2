// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace gags {

// Row-major 2D grid. Pixel (x, y) with x the column, y the row.
template <class T>
class Image {
  public:
    Image() = default;
    Image(int width, int height, T fill = T{})
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(width) * height, fill) {}

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int x, int y) {
        assert(x >= 0 && x < width_ && y >= 0 && y < height_);
        return data_[static_cast<std::size_t>(y) * width_ + x];
    }
    const T& operator()(int x, int y) const {
        assert(x >= 0 && x < width_ && y >= 0 && y < height_);
        return data_[static_cast<std::size_t>(y) * width_ + x];
    }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool same_shape(int w, int h) const { return width_ == w && height_ == h; }
    template <class U>
    bool same_shape(const Image<U>& other) const {
        return width_ == other.width() && height_ == other.height();
    }

  private:
    int width_ = 0;
    int height_ = 0;
    std::vector<T> data_;
};

}  // namespace gags
