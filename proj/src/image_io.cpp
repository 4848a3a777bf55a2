// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include "gags/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "gags/errors.hpp"

namespace gags {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_or_throw(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw DataError("cannot open file: " + path);
    return f;
}

int read_pnm_int(std::FILE* f) {
    int c = std::fgetc(f);
    // skip whitespace and comments
    while (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') {
        if (c == '#')
            while (c != EOF && c != '\n') c = std::fgetc(f);
        c = std::fgetc(f);
    }
    int value = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
        value = value * 10 + (c - '0');
        any = true;
        c = std::fgetc(f);
    }
    if (!any) throw DataError("malformed PGM header");
    return value;
}

}  // namespace

void write_pgm16(const std::string& path, const Image<std::uint16_t>& img) {
    FilePtr f = open_or_throw(path, "wb");
    std::fprintf(f.get(), "P5\n%d %d\n65535\n", img.width(), img.height());
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width()) * 2);
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            std::uint16_t v = img(x, y);
            row[2 * x] = static_cast<std::uint8_t>(v >> 8);
            row[2 * x + 1] = static_cast<std::uint8_t>(v & 0xff);
        }
        if (std::fwrite(row.data(), 1, row.size(), f.get()) != row.size())
            throw DataError("short write: " + path);
    }
}

Image<std::uint16_t> read_pgm16(const std::string& path) {
    FilePtr f = open_or_throw(path, "rb");
    char m0 = static_cast<char>(std::fgetc(f.get()));
    char m1 = static_cast<char>(std::fgetc(f.get()));
    if (m0 != 'P' || m1 != '5') throw DataError("not a binary PGM: " + path);
    int w = read_pnm_int(f.get());
    int h = read_pnm_int(f.get());
    int maxval = read_pnm_int(f.get());
    if (w <= 0 || h <= 0) throw DataError("bad PGM size: " + path);
    Image<std::uint16_t> img(w, h);
    if (maxval > 255) {
        std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 2);
        for (int y = 0; y < h; ++y) {
            if (std::fread(row.data(), 1, row.size(), f.get()) != row.size())
                throw DataError("truncated PGM: " + path);
            for (int x = 0; x < w; ++x)
                img(x, y) = static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
        }
    } else {
        std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
        for (int y = 0; y < h; ++y) {
            if (std::fread(row.data(), 1, row.size(), f.get()) != row.size())
                throw DataError("truncated PGM: " + path);
            for (int x = 0; x < w; ++x) img(x, y) = row[x];
        }
    }
    return img;
}

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(width) * height * 3)
        throw DataError("png buffer size mismatch");
    FilePtr f = open_or_throw(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                              nullptr, nullptr);
    if (!png) throw DataError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("png write failed: " + path);
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb.data() +
                                                 static_cast<std::size_t>(y) * width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image<std::uint16_t> read_png_gray16(const std::string& path) {
    FilePtr f = open_or_throw(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                             nullptr, nullptr);
    if (!png) throw DataError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("png read failed: " + path);
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("mask PNG must be single-channel gray: " + path);
    }
    if (depth < 16) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    depth = png_get_bit_depth(png, info);

    Image<std::uint16_t> img(static_cast<int>(w), static_cast<int>(h));
    std::vector<std::uint8_t> row(png_get_rowbytes(png, info));
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x) {
            if (depth == 16)
                img(static_cast<int>(x), static_cast<int>(y)) =
                    static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
            else
                img(static_cast<int>(x), static_cast<int>(y)) = row[x];
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_mask(const std::string& path, const Image<std::uint32_t>& mask) {
    Image<std::uint16_t> out(mask.width(), mask.height());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] > 0xffff)
            throw DataError("region id exceeds 16-bit mask range");
        out[i] = static_cast<std::uint16_t>(mask[i]);
    }
    write_pgm16(path, out);
}

Image<std::uint32_t> read_mask(const std::string& path) {
    bool png = path.size() > 4 && path.compare(path.size() - 4, 4, ".png") == 0;
    Image<std::uint16_t> raw = png ? read_png_gray16(path) : read_pgm16(path);
    Image<std::uint32_t> out(raw.width(), raw.height());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i];
    return out;
}

}  // namespace gags
