// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cstdio>
#include <fstream>

#include "gags/ply_io.hpp"
#include "gags/tensor_file.hpp"
#include "testutil.hpp"

using namespace gags;

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// Minimal hand-rolled PLY with the given property names, one vertex.
void write_tiny_ply(const std::filesystem::path& path,
                    const std::vector<std::pair<std::string, float>>& props) {
    std::ofstream out(path, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 1\n";
    for (const auto& [name, _] : props) out << "property float " << name << "\n";
    out << "end_header\n";
    for (const auto& [_, value] : props)
        out.write(reinterpret_cast<const char*>(&value), 4);
}

std::vector<std::pair<std::string, float>> base_props() {
    return {{"x", 1.0f}, {"y", 2.0f}, {"z", 3.0f},
            {"scale_0", -1.0f}, {"scale_1", -1.0f}, {"scale_2", -1.0f},
            {"rot_0", 1.0f}, {"rot_1", 0.0f}, {"rot_2", 0.0f}, {"rot_3", 0.0f},
            {"opacity", 0.0f}};
}

}  // namespace

TEST_CASE("load_field maps stored logits and logs to linear parameters") {
    auto dir = test::temp_dir("field_load");
    auto path = dir / "one.ply";
    write_tiny_ply(path, base_props());

    GaussianFieldd field = load_field<double>(path.string());
    REQUIRE(field.size() == 1);
    const Gaussiand& g = field.gaussians[0];
    CHECK(g.opacity == doctest::Approx(0.5).epsilon(1e-12));  // sigmoid(0)
    CHECK(g.position.isApprox(Vec3<double>(1, 2, 3)));
    CHECK(g.scale.isApprox(Vec3<double>::Constant(std::exp(-1.0))));
    CHECK(g.rotation.w() == doctest::Approx(1.0));
    CHECK(g.feature.size() == 16);
    CHECK(g.feature.isZero());
}

TEST_CASE("load_field rejects files without required properties") {
    auto dir = test::temp_dir("field_load");
    auto path = dir / "no_x.ply";
    auto props = base_props();
    props.erase(props.begin());  // drop x
    write_tiny_ply(path, props);
    CHECK_THROWS_AS(load_field<double>(path.string()), DataError);
}

TEST_CASE("load_field rejects zero-gaussian files") {
    auto dir = test::temp_dir("field_load");
    auto path = dir / "empty.ply";
    std::ofstream out(path, std::ios::binary);
    out << "ply\nformat binary_little_endian 1.0\nelement vertex 0\n"
           "property float x\nend_header\n";
    out.close();
    CHECK_THROWS_AS(load_field<double>(path.string()), DataError);
}

TEST_CASE("save/load round-trip preserves every parameter bitwise") {
    auto dir = test::temp_dir("field_roundtrip");
    auto path = dir / "field.ply";

    // opacities away from the clamp, unit quaternions: the invertible regime
    GaussianFieldd field = test::random_field(100, 16, 7);
    save_field(field, path.string());
    GaussianFieldd loaded = load_field<double>(path.string());
    REQUIRE(loaded.size() == field.size());

    // in-memory doubles went through f32 once; compare after one f32 round
    auto f32 = [](double v) { return static_cast<double>(static_cast<float>(v)); };
    for (std::size_t i = 0; i < field.size(); ++i) {
        const auto& a = field.gaussians[i];
        const auto& b = loaded.gaussians[i];
        for (int k = 0; k < 3; ++k) CHECK(b.position[k] == f32(a.position[k]));
        for (int k = 0; k < 16; ++k) CHECK(b.feature[k] == f32(a.feature[k]));
    }

    // save -> load -> save must reproduce the file byte for byte
    auto path2 = dir / "field2.ply";
    save_field(loaded, path2.string());
    GaussianFieldd loaded2 = load_field<double>(path2.string());
    auto path3 = dir / "field3.ply";
    save_field(loaded2, path3.string());
    CHECK(read_file(path2) == read_file(path3));
    CHECK(read_file(path) == read_file(path2));
}

TEST_CASE("save_field emits one feat property per feature dimension") {
    auto dir = test::temp_dir("field_props");
    auto path = dir / "d16.ply";
    GaussianFieldd field = test::random_field(3, 16, 11);
    save_field(field, path.string());
    std::string header = read_file(path).substr(0, 800);
    for (int k = 0; k < 16; ++k)
        CHECK(header.find("property float feat_" + std::to_string(k)) != std::string::npos);
    CHECK(header.find("property float feat_16") == std::string::npos);
}

TEST_CASE("fields loaded without features carry zeros and save them back") {
    auto dir = test::temp_dir("field_zero");
    auto path = dir / "plain.ply";
    write_tiny_ply(path, base_props());
    GaussianFieldd field = load_field<double>(path.string(), 8);
    CHECK(field.feature_dim == 8);
    auto out = dir / "written.ply";
    save_field(field, out.string());
    GaussianFieldd back = load_field<double>(out.string());
    CHECK(back.feature_dim == 8);
    CHECK(back.gaussians[0].feature.isZero());
}

TEST_CASE("gaussian covariance is symmetric positive definite") {
    GaussianFieldd field = test::random_field(50, 4, 3);
    for (const auto& g : field.gaussians) {
        Mat3<double> cov = g.covariance();
        CHECK((cov - cov.transpose()).norm() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat3<double>> es(cov);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("field validation catches broken invariants") {
    GaussianFieldd field = test::random_field(2, 4, 5);
    field.validate();

    GaussianFieldd bad = field;
    bad.gaussians[0].opacity = 1.5;
    CHECK_THROWS_AS(bad.validate(), DataError);

    bad = field;
    bad.gaussians[1].scale[2] = 0.0;
    CHECK_THROWS_AS(bad.validate(), DataError);

    bad = field;
    bad.gaussians[0].feature = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("camera validation") {
    Camerad cam = test::axis_camera(32, 32);
    cam.validate();

    Camerad bad = cam;
    bad.near_clip = 2.0;
    bad.far_clip = 1.0;
    CHECK_THROWS_AS(bad.validate(), DataError);

    bad = cam;
    bad.rotation(0, 1) = 0.5;
    CHECK_THROWS_AS(bad.validate(), DataError);

    // reflection: orthonormal but determinant -1
    bad = cam;
    bad.rotation = Mat3<double>::Identity();
    bad.rotation(0, 0) = -1.0;
    CHECK_THROWS_AS(bad.validate(), DataError);
}

TEST_CASE("tensor file round trip and error paths") {
    auto dir = test::temp_dir("tensor");
    auto path = dir / "m.tnsr";

    Eigen::MatrixXd m(3, 5);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 5; ++c) m(r, c) = r * 10.0 + c;
    write_tensor(path.string(), TensorFile::from_matrix(m));
    TensorFile t = read_tensor(path.string());
    CHECK(t.shape == std::vector<std::uint32_t>{3, 5});
    CHECK(t.to_matrix().isApprox(m));

    // u32 image payload
    Image<std::uint32_t> img(4, 2, 9);
    img(3, 1) = 77;
    auto ipath = dir / "img.tnsr";
    write_tensor(ipath.string(), TensorFile::from_image_u32(img));
    Image<std::uint32_t> back = read_tensor(ipath.string()).to_image_u32();
    CHECK(back(3, 1) == 77);
    CHECK(back(0, 0) == 9);

    // corrupt magic
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOTMAGIC";
    }
    CHECK_THROWS_AS(read_tensor(path.string()), DataError);

    // truncated payload
    auto tpath = dir / "trunc.tnsr";
    write_tensor(tpath.string(), TensorFile::from_matrix(m));
    std::filesystem::resize_file(tpath, std::filesystem::file_size(tpath) - 4);
    CHECK_THROWS_AS(read_tensor(tpath.string()), DataError);
}
