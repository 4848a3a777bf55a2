// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "gags/errors.hpp"
#include "gags/gaussian.hpp"

namespace gags {

static_assert(std::endian::native == std::endian::little,
              "PLY/tensor I/O assumes a little-endian host");

namespace detail {

struct PlyProperty {
    std::string name;
    int byte_size = 4;
    bool is_float = false;
    std::size_t offset = 0;  // within one vertex record
};

struct PlyHeader {
    std::size_t vertex_count = 0;
    std::size_t stride = 0;
    std::vector<PlyProperty> properties;

    const PlyProperty* find(const std::string& name) const {
        for (const auto& p : properties)
            if (p.name == name) return &p;
        return nullptr;
    }
    const PlyProperty* require(const std::string& name) const {
        const PlyProperty* p = find(name);
        if (!p)
            throw DataError("PLY missing required property '" + name + "'");
        if (!p->is_float || p->byte_size != 4)
            throw DataError("PLY property '" + name + "' must be float32");
        return p;
    }
};

inline int ply_type_size(const std::string& t, bool& is_float) {
    is_float = (t == "float" || t == "float32");
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "int32" || t == "uint32" ||
        t == "float" || t == "float32")
        return 4;
    if (t == "double" || t == "float64" || t == "int64" || t == "uint64") return 8;
    throw DataError("unsupported PLY property type '" + t + "'");
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_or_throw(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw DataError("cannot open file: " + path);
    return f;
}

inline std::string read_header_line(std::FILE* f) {
    std::string line;
    int c;
    while ((c = std::fgetc(f)) != EOF && c != '\n') line.push_back(static_cast<char>(c));
    if (c == EOF) throw DataError("unexpected end of PLY header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

inline PlyHeader parse_ply_header(std::FILE* f) {
    if (read_header_line(f) != "ply") throw DataError("not a PLY file");
    PlyHeader header;
    bool in_vertex = false, saw_vertex = false, saw_format = false;
    for (;;) {
        std::string line = read_header_line(f);
        if (line == "end_header") break;
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "comment") continue;
        if (tok == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt != "binary_little_endian")
                throw DataError("PLY format must be binary_little_endian");
            saw_format = true;
        } else if (tok == "element") {
            std::string name;
            std::size_t count = 0;
            ss >> name >> count;
            if (name != "vertex")
                throw DataError("PLY element '" + name + "' not supported");
            if (saw_vertex) throw DataError("duplicate PLY vertex element");
            header.vertex_count = count;
            in_vertex = saw_vertex = true;
        } else if (tok == "property") {
            if (!in_vertex) throw DataError("PLY property outside vertex element");
            std::string type, name;
            ss >> type >> name;
            if (type == "list") throw DataError("PLY list properties not supported");
            PlyProperty prop;
            prop.name = name;
            prop.byte_size = ply_type_size(type, prop.is_float);
            prop.offset = header.stride;
            header.stride += prop.byte_size;
            header.properties.push_back(prop);
        }
    }
    if (!saw_format) throw DataError("PLY header missing format line");
    if (!saw_vertex) throw DataError("PLY header missing vertex element");
    return header;
}

}  // namespace detail

/// Loads a 3DGS-style PLY into a field. Scales are stored in the file as
/// logs, opacity as a logit; both are mapped to linear/probability here.
/// Opacities are clamped into (1e-4, 1 - 1e-4). Fields without `feat_*`
/// properties get zero features of length `default_feature_dim`.
template <class S>
GaussianField<S> load_field(const std::string& path, int default_feature_dim = 16) {
    detail::FilePtr f = detail::open_or_throw(path, "rb");
    detail::PlyHeader header = detail::parse_ply_header(f.get());
    if (header.vertex_count == 0) throw DataError("PLY contains zero gaussians");

    const detail::PlyProperty* px = header.require("x");
    const detail::PlyProperty* py = header.require("y");
    const detail::PlyProperty* pz = header.require("z");
    const detail::PlyProperty* ps[3] = {header.require("scale_0"),
                                        header.require("scale_1"),
                                        header.require("scale_2")};
    const detail::PlyProperty* pr[4] = {header.require("rot_0"), header.require("rot_1"),
                                        header.require("rot_2"), header.require("rot_3")};
    const detail::PlyProperty* pop = header.require("opacity");

    const detail::PlyProperty* pc[3] = {nullptr, nullptr, nullptr};
    if (header.find("f_dc_0") || header.find("f_dc_1") || header.find("f_dc_2")) {
        pc[0] = header.require("f_dc_0");
        pc[1] = header.require("f_dc_1");
        pc[2] = header.require("f_dc_2");
    }

    std::vector<const detail::PlyProperty*> pf;
    for (int k = 0;; ++k) {
        const detail::PlyProperty* p = header.find("feat_" + std::to_string(k));
        if (!p) break;
        if (!p->is_float) throw DataError("PLY feature properties must be float32");
        pf.push_back(p);
    }
    int d = pf.empty() ? default_feature_dim : static_cast<int>(pf.size());

    std::vector<unsigned char> record(header.stride);
    auto read_f32 = [&](const detail::PlyProperty* p) {
        float v;
        std::memcpy(&v, record.data() + p->offset, 4);
        return v;
    };

    GaussianField<S> field;
    field.feature_dim = d;
    field.gaussians.resize(header.vertex_count);
    for (std::size_t i = 0; i < header.vertex_count; ++i) {
        if (std::fread(record.data(), 1, header.stride, f.get()) != header.stride)
            throw DataError("truncated PLY payload: " + path);
        Gaussian<S>& g = field.gaussians[i];
        g.position = Vec3<S>(S(read_f32(px)), S(read_f32(py)), S(read_f32(pz)));
        for (int k = 0; k < 3; ++k)
            g.scale[k] = std::exp(S(read_f32(ps[k])));
        g.rotation = Eigen::Quaternion<S>(S(read_f32(pr[0])), S(read_f32(pr[1])),
                                          S(read_f32(pr[2])), S(read_f32(pr[3])));
        g.normalize_rotation();
        S logit = S(read_f32(pop));
        S op = S(1) / (S(1) + std::exp(-logit));
        g.opacity = std::min(S(1) - S(1e-4), std::max(S(1e-4), op));
        if (pc[0]) {
            for (int k = 0; k < 3; ++k) g.color[k] = S(read_f32(pc[k]));
        }
        g.feature = VecX<S>::Zero(d);
        for (std::size_t k = 0; k < pf.size(); ++k)
            g.feature[static_cast<Eigen::Index>(k)] = S(read_f32(pf[k]));
    }
    return field;
}

/// Writes the field as a 3DGS-compatible binary PLY, including one
/// `feat_k` property per feature component.
template <class S>
void save_field(const GaussianField<S>& field, const std::string& path) {
    detail::FilePtr f = detail::open_or_throw(path, "wb");
    const int d = field.feature_dim;

    std::ostringstream h;
    h << "ply\nformat binary_little_endian 1.0\n";
    h << "element vertex " << field.gaussians.size() << "\n";
    const char* base[] = {"x", "y", "z", "scale_0", "scale_1", "scale_2",
                          "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
                          "f_dc_0", "f_dc_1", "f_dc_2"};
    for (const char* name : base) h << "property float " << name << "\n";
    for (int k = 0; k < d; ++k) h << "property float feat_" << k << "\n";
    h << "end_header\n";
    std::string header = h.str();
    std::fwrite(header.data(), 1, header.size(), f.get());

    std::vector<float> record(14 + d);
    for (const auto& g : field.gaussians) {
        std::size_t k = 0;
        for (int i = 0; i < 3; ++i) record[k++] = static_cast<float>(g.position[i]);
        for (int i = 0; i < 3; ++i)
            record[k++] = static_cast<float>(std::log(g.scale[i]));
        record[k++] = static_cast<float>(g.rotation.w());
        record[k++] = static_cast<float>(g.rotation.x());
        record[k++] = static_cast<float>(g.rotation.y());
        record[k++] = static_cast<float>(g.rotation.z());
        record[k++] = static_cast<float>(std::log(g.opacity / (S(1) - g.opacity)));
        for (int i = 0; i < 3; ++i) record[k++] = static_cast<float>(g.color[i]);
        for (int i = 0; i < d; ++i) record[k++] = static_cast<float>(g.feature[i]);
        if (std::fwrite(record.data(), 4, record.size(), f.get()) != record.size())
            throw DataError("short write: " + path);
    }
}

}  // namespace gags
