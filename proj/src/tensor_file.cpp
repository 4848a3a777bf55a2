// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include "gags/tensor_file.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

namespace gags {

namespace {

constexpr char kMagic[8] = {'G', 'A', 'G', 'S', 'T', 'N', 'S', 'R'};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw DataError("cannot open file: " + path);
    return f;
}

}  // namespace

std::size_t TensorFile::element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

TensorFile TensorFile::from_matrix(const Eigen::MatrixXd& m) {
    TensorFile t;
    t.dtype = DType::F32;
    t.shape = {static_cast<std::uint32_t>(m.rows()),
               static_cast<std::uint32_t>(m.cols())};
    t.f32.resize(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            t.f32[k++] = static_cast<float>(m(r, c));
    return t;
}

Eigen::MatrixXd TensorFile::to_matrix() const {
    if (dtype != DType::F32 || shape.size() != 2)
        throw DataError("tensor is not a rank-2 f32 matrix");
    Eigen::MatrixXd m(shape[0], shape[1]);
    std::size_t k = 0;
    for (std::uint32_t r = 0; r < shape[0]; ++r)
        for (std::uint32_t c = 0; c < shape[1]; ++c) m(r, c) = f32[k++];
    return m;
}

TensorFile TensorFile::from_image_u32(const Image<std::uint32_t>& img) {
    TensorFile t;
    t.dtype = DType::U32;
    t.shape = {static_cast<std::uint32_t>(img.height()),
               static_cast<std::uint32_t>(img.width())};
    t.u32 = img.data();
    return t;
}

Image<std::uint32_t> TensorFile::to_image_u32() const {
    if (dtype != DType::U32 || shape.size() != 2)
        throw DataError("tensor is not a rank-2 u32 map");
    Image<std::uint32_t> img(static_cast<int>(shape[1]),
                             static_cast<int>(shape[0]));
    img.data() = u32;
    return img;
}

void write_tensor(const std::string& path, const TensorFile& t) {
    if (t.shape.empty() || t.shape.size() > 4)
        throw DataError("tensor rank must be 1..4");
    std::size_t n = t.element_count();
    if ((t.dtype == TensorFile::DType::F32 && t.f32.size() != n) ||
        (t.dtype == TensorFile::DType::U32 && t.u32.size() != n))
        throw DataError("tensor payload size does not match shape");

    FilePtr f = open_file(path, "wb");
    std::fwrite(kMagic, 1, 8, f.get());
    std::uint8_t dtype = static_cast<std::uint8_t>(t.dtype);
    std::uint8_t rank = static_cast<std::uint8_t>(t.shape.size());
    std::fwrite(&dtype, 1, 1, f.get());
    std::fwrite(&rank, 1, 1, f.get());
    std::fwrite(t.shape.data(), 4, t.shape.size(), f.get());
    std::size_t written = 0;
    if (t.dtype == TensorFile::DType::F32)
        written = std::fwrite(t.f32.data(), 4, n, f.get());
    else
        written = std::fwrite(t.u32.data(), 4, n, f.get());
    if (written != n) throw DataError("short write: " + path);
}

TensorFile read_tensor(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    char magic[8];
    if (std::fread(magic, 1, 8, f.get()) != 8 ||
        std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("bad tensor magic: " + path);
    std::uint8_t dtype = 0, rank = 0;
    if (std::fread(&dtype, 1, 1, f.get()) != 1 ||
        std::fread(&rank, 1, 1, f.get()) != 1)
        throw DataError("truncated tensor header: " + path);
    if (dtype > 1) throw DataError("unknown tensor dtype: " + path);
    if (rank < 1 || rank > 4) throw DataError("tensor rank must be 1..4: " + path);

    TensorFile t;
    t.dtype = static_cast<TensorFile::DType>(dtype);
    t.shape.resize(rank);
    if (std::fread(t.shape.data(), 4, rank, f.get()) != rank)
        throw DataError("truncated tensor shape: " + path);
    std::size_t n = t.element_count();
    if (t.dtype == TensorFile::DType::F32) {
        t.f32.resize(n);
        if (std::fread(t.f32.data(), 4, n, f.get()) != n)
            throw DataError("truncated tensor payload: " + path);
    } else {
        t.u32.resize(n);
        if (std::fread(t.u32.data(), 4, n, f.get()) != n)
            throw DataError("truncated tensor payload: " + path);
    }
    return t;
}

}  // namespace gags
