// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "gags/oracle.hpp"
#include "gags/query.hpp"
#include "testutil.hpp"

using namespace gags;

namespace {

std::array<Eigen::VectorXd, 4> orthogonal_canon(int dim) {
    std::array<Eigen::VectorXd, 4> canon;
    for (int k = 0; k < 4; ++k) {
        canon[k] = Eigen::VectorXd::Zero(dim);
        canon[k][k] = 1.0;
    }
    return canon;
}

}  // namespace

TEST_CASE("relevancy formula values") {
    const int dim = 8;
    auto canon = orthogonal_canon(dim);

    SUBCASE("text equal to a canonical phrase caps the score at one half") {
        Eigen::VectorXd f = Eigen::VectorXd::Zero(dim);
        f[5] = 1.0;
        double r = relevancy(f, canon[1], canon);
        CHECK(r <= 0.5 + 1e-12);
        // the tying ratio itself is exactly 1/2
        Eigen::VectorXd f2 = canon[1];
        CHECK(relevancy(f2, canon[1], canon) <= 0.5 + 1e-12);
    }
    SUBCASE("aligned text, anti-aligned canon") {
        Eigen::VectorXd f = Eigen::VectorXd::Zero(dim);
        f[6] = 1.0;
        Eigen::VectorXd text = f;
        std::array<Eigen::VectorXd, 4> anti;
        for (int k = 0; k < 4; ++k) anti[k] = -f;
        double expect = std::exp(1.0) / (std::exp(-1.0) + std::exp(1.0));
        CHECK(relevancy(f, text, anti) == doctest::Approx(expect).epsilon(1e-9));
        CHECK(expect == doctest::Approx(0.8808).epsilon(1e-3));
    }
    SUBCASE("always strictly inside (0,1)") {
        Rng rng(5);
        for (int i = 0; i < 100; ++i) {
            Eigen::VectorXd f(dim), t(dim);
            for (int k = 0; k < dim; ++k) {
                f[k] = rng.normal();
                t[k] = rng.normal();
            }
            f.normalize();
            t.normalize();
            double r = relevancy(f, t, canon);
            CHECK(r > 0.0);
            CHECK(r < 1.0);
        }
    }
    SUBCASE("invariant under permutation of the canonical set") {
        Rng rng(6);
        Eigen::VectorXd f(dim), t(dim);
        for (int k = 0; k < dim; ++k) {
            f[k] = rng.normal();
            t[k] = rng.normal();
        }
        f.normalize();
        t.normalize();
        auto shuffled = canon;
        std::swap(shuffled[0], shuffled[3]);
        std::swap(shuffled[1], shuffled[2]);
        CHECK(relevancy(f, t, canon) == doctest::Approx(relevancy(f, t, shuffled)).epsilon(1e-15));
    }
    SUBCASE("empty canonical entries are rejected") {
        auto broken = canon;
        broken[2] = Eigen::VectorXd();
        Eigen::VectorXd f = canon[0];
        CHECK_THROWS_AS(relevancy(f, f, broken), DataError);
    }
}

TEST_CASE("mean filter") {
    SUBCASE("constant maps are unchanged") {
        Image<double> raw(9, 9, 3.25);
        Image<std::uint8_t> valid(9, 9, 1);
        Image<double> out = mean_filter(raw, valid, 5);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(out[i] == doctest::Approx(3.25).epsilon(1e-12));
    }
    SUBCASE("a central spike spreads to spike/9 with k=3") {
        Image<double> raw(9, 9, 0.0);
        raw(4, 4) = 9.0;
        Image<std::uint8_t> valid(9, 9, 1);
        Image<double> out = mean_filter(raw, valid, 3);
        CHECK(out(4, 4) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(out(3, 4) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(out(6, 4) == doctest::Approx(0.0).epsilon(1e-12));
    }
    SUBCASE("invalid pixels are excluded from window averages") {
        Image<double> raw(3, 1, 0.0);
        raw(0, 0) = 6.0;
        raw(1, 0) = 100.0;  // invalid, must not leak
        raw(2, 0) = 0.0;
        Image<std::uint8_t> valid(3, 1, 1);
        valid(1, 0) = 0;
        Image<double> out = mean_filter(raw, valid, 3);
        CHECK(out(0, 0) == doctest::Approx(6.0).epsilon(1e-12));   // only itself
        CHECK(out(2, 0) == doctest::Approx(0.0).epsilon(1e-12));
        CHECK(out(1, 0) == 0.0);  // stays invalid/zero
    }
    SUBCASE("total mass of centrally-supported maps is preserved") {
        Image<double> raw(16, 16, 0.0);
        Rng rng(9);
        double sum_in = 0.0;
        for (int y = 5; y < 11; ++y)
            for (int x = 5; x < 11; ++x) {
                raw(x, y) = rng.uniform();
                sum_in += raw(x, y);
            }
        Image<std::uint8_t> valid(16, 16, 1);
        Image<double> out = mean_filter(raw, valid, 5);
        double sum_out = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) sum_out += out[i];
        CHECK(sum_out == doctest::Approx(sum_in).epsilon(1e-9));
    }
    SUBCASE("even kernels are rejected") {
        Image<double> raw(4, 4, 0.0);
        Image<std::uint8_t> valid(4, 4, 1);
        CHECK_THROWS_AS(mean_filter(raw, valid, 4), DataError);
    }
}

TEST_CASE("localization picks the smoothed argmax, row-major on ties") {
    RelevancyMap map;
    map.smoothed = Image<double>(5, 5, 0.0);
    map.valid = Image<std::uint8_t>(5, 5, 1);

    SUBCASE("single maximum") {
        map.smoothed(3, 2) = 2.0;
        auto [x, y] = localize(map);
        CHECK(x == 3);
        CHECK(y == 2);
    }
    SUBCASE("two equal maxima: first in row-major order wins") {
        map.smoothed(4, 1) = 2.0;
        map.smoothed(1, 3) = 2.0;
        auto [x, y] = localize(map);
        CHECK(x == 4);
        CHECK(y == 1);
    }
    SUBCASE("all-invalid maps are an error") {
        map.valid = Image<std::uint8_t>(5, 5, 0);
        CHECK_THROWS_AS(localize(map), DataError);
    }
}

TEST_CASE("localization is invariant under increasing transforms of relevancy") {
    const int dim = 6, w = 12, h = 12;
    Rng rng(31);
    Eigen::MatrixXd f(dim, w * h);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    for (Eigen::Index p = 0; p < f.cols(); ++p) f.col(p).normalize();
    Image<std::uint8_t> valid(w, h, 1);
    Eigen::VectorXd text = f.col(37);
    auto canon = orthogonal_canon(dim);

    RelevancyMap base = relevancy_map(f, w, h, valid, text, canon, 3);
    // strictly increasing transform applied to the smoothed scores
    RelevancyMap warped = base;
    for (std::size_t i = 0; i < warped.smoothed.size(); ++i)
        warped.smoothed[i] = std::tanh(3.0 * warped.smoothed[i]) + 2.0;
    CHECK(localize(base) == localize(warped));
}

TEST_CASE("segmentation thresholds the normalized map") {
    RelevancyMap map;
    map.valid = Image<std::uint8_t>(4, 1, 1);
    map.normalized = Image<double>(4, 1, 0.0);
    map.normalized(1, 0) = 1.0;
    map.normalized(2, 0) = 0.45;

    SUBCASE("a 0/1 map selects exactly the ones") {
        Image<std::uint8_t> mask = segment(map, 0.5);
        CHECK(mask(0, 0) == 0);
        CHECK(mask(1, 0) == 1);
        CHECK(mask(2, 0) == 0);
    }
    SUBCASE("tau = 0 selects every valid pixel") {
        map.valid(3, 0) = 0;
        Image<std::uint8_t> mask = segment(map, 0.0);
        CHECK(mask(0, 0) == 1);
        CHECK(mask(1, 0) == 1);
        CHECK(mask(3, 0) == 0);  // invalid stays out
    }
    SUBCASE("thresholds are monotone: tau1 <= tau2 implies mask1 superset") {
        Image<std::uint8_t> loose = segment(map, 0.3);
        Image<std::uint8_t> tight = segment(map, 0.7);
        for (std::size_t i = 0; i < loose.size(); ++i)
            if (tight[i]) CHECK(loose[i]);
    }
    SUBCASE("degenerate maps give empty masks") {
        map.degenerate = true;
        Image<std::uint8_t> mask = segment(map, 0.0);
        for (std::size_t i = 0; i < mask.size(); ++i) CHECK(mask[i] == 0);
    }
}

TEST_CASE("constant relevancy maps are flagged degenerate") {
    const int dim = 4, w = 6, h = 6;
    Eigen::MatrixXd f(dim, w * h);
    for (Eigen::Index p = 0; p < f.cols(); ++p) f.col(p) = Eigen::VectorXd::Unit(dim, 1);
    Image<std::uint8_t> valid(w, h, 1);
    auto canon = orthogonal_canon(dim);
    RelevancyMap map = relevancy_map(f, w, h, valid, canon[2], canon, 3);
    CHECK(map.degenerate);
    Image<std::uint8_t> mask = segment(map, 0.4);
    for (std::size_t i = 0; i < mask.size(); ++i) CHECK(mask[i] == 0);
}

TEST_CASE("normalized maps span [0,1] when any spread exists") {
    const int dim = 4, w = 8, h = 8;
    Rng rng(77);
    Eigen::MatrixXd f(dim, w * h);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    for (Eigen::Index p = 0; p < f.cols(); ++p) f.col(p).normalize();
    Image<std::uint8_t> valid(w, h, 1);
    valid(0, 0) = 0;
    auto canon = orthogonal_canon(dim);
    RelevancyMap map = relevancy_map(f, w, h, valid, f.col(5), canon, 3);
    double lo = 2, hi = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!map.valid(x, y)) continue;
            lo = std::min(lo, map.normalized(x, y));
            hi = std::max(hi, map.normalized(x, y));
            CHECK(map.raw(x, y) > 0.0);
            CHECK(map.raw(x, y) < 1.0);
        }
    CHECK(lo == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(hi == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("IoU and eval metrics") {
    SUBCASE("identical masks have IoU 1") {
        Image<std::uint8_t> m(8, 8, 0);
        m(2, 2) = m(3, 3) = 1;
        bool both_empty = false;
        CHECK(mask_iou(m, m, both_empty) == doctest::Approx(1.0));
        CHECK(!both_empty);
    }
    SUBCASE("disjoint masks have IoU 0") {
        Image<std::uint8_t> a(8, 8, 0), b(8, 8, 0);
        a(0, 0) = 1;
        b(7, 7) = 1;
        bool both_empty = false;
        CHECK(mask_iou(a, b, both_empty) == doctest::Approx(0.0));
    }
    SUBCASE("2x2 prediction inside a 4x4 ground truth scores 0.25") {
        Image<std::uint8_t> pred(8, 8, 0), gt(8, 8, 0);
        for (int y = 2; y < 4; ++y)
            for (int x = 2; x < 4; ++x) pred(x, y) = 1;
        for (int y = 1; y < 5; ++y)
            for (int x = 1; x < 5; ++x) gt(x, y) = 1;
        bool both_empty = false;
        CHECK(mask_iou(pred, gt, both_empty) == doctest::Approx(0.25));
    }
    SUBCASE("empty against empty is 1 by convention and flagged") {
        Image<std::uint8_t> a(4, 4, 0), b(4, 4, 0);
        bool both_empty = false;
        CHECK(mask_iou(a, b, both_empty) == doctest::Approx(1.0));
        CHECK(both_empty);
    }
    SUBCASE("aggregates and inclusive box bounds") {
        std::vector<EvalInput> entries(2);
        entries[0].query = "a";
        entries[0].loc_x = 4;
        entries[0].loc_y = 4;  // exactly on the box corner: inclusive hit
        entries[0].box = {2, 2, 4, 4};
        entries[0].pred_mask = Image<std::uint8_t>(6, 6, 1);
        entries[0].gt_mask = Image<std::uint8_t>(6, 6, 1);
        entries[1].query = "b";
        entries[1].loc_x = 5;
        entries[1].loc_y = 2;  // outside
        entries[1].box = {2, 2, 4, 4};
        entries[1].pred_mask = Image<std::uint8_t>(6, 6, 0);
        entries[1].gt_mask = Image<std::uint8_t>(6, 6, 1);
        EvalRecord record = eval_metrics(entries);
        CHECK(record.items[0].hit);
        CHECK(!record.items[1].hit);
        CHECK(record.mAcc == doctest::Approx(0.5));
        CHECK(record.mIoU == doctest::Approx(0.5));
        CHECK_THROWS_AS(eval_metrics({}), DataError);
    }
}

TEST_CASE("mask bounding boxes") {
    Image<std::uint8_t> m(10, 10, 0);
    CHECK(mask_bbox(m).empty());
    m(3, 4) = 1;
    m(7, 8) = 1;
    GtBox box = mask_bbox(m);
    CHECK(box.x0 == 3);
    CHECK(box.y0 == 4);
    CHECK(box.x1 == 7);
    CHECK(box.y1 == 8);
    CHECK(box.contains(3, 4));
    CHECK(!box.contains(2, 4));
}

TEST_CASE("feature-space smoothing is exposed as an alternative") {
    const int dim = 5, w = 10, h = 10;
    Rng rng(41);
    Eigen::MatrixXd f(dim, w * h);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    for (Eigen::Index p = 0; p < f.cols(); ++p) f.col(p).normalize();
    Image<std::uint8_t> valid(w, h, 1);
    auto canon = orthogonal_canon(dim);
    Eigen::VectorXd text = f.col(0);

    RelevancyMap score_smoothed = relevancy_map(f, w, h, valid, text, canon, 5, false);
    RelevancyMap feat_smoothed = relevancy_map(f, w, h, valid, text, canon, 5, true);
    // both produce usable maps; the feature path skips score smoothing
    CHECK(feat_smoothed.smoothed.data() == feat_smoothed.raw.data());
    CHECK(score_smoothed.smoothed.data() != score_smoothed.raw.data());
}
