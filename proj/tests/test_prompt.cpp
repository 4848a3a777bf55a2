// Copyright Contributors to the GAGS Project
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <set>

#include "gags/prompt.hpp"
#include "testutil.hpp"

using namespace gags;

namespace {

struct Maps {
    Image<double> depth;
    Image<std::uint8_t> valid;
    MinDepthMap<double> md;
};

Maps constant_maps(int w, int h, double depth, double md) {
    Maps m;
    m.depth = Image<double>(w, h, depth);
    m.valid = Image<std::uint8_t>(w, h, 1);
    m.md.md = Image<double>(w, h, md);
    m.md.valid = Image<std::uint8_t>(w, h, 1);
    return m;
}

PromptParams params(int patch, int n, double cap = 25.0, std::uint64_t seed = 1) {
    PromptParams p;
    p.patch_size = patch;
    p.base_count = n;
    p.ratio_cap = cap;
    p.seed = seed;
    return p;
}

}  // namespace

TEST_CASE("nearest view budget is exactly n") {
    Maps m = constant_maps(64, 64, 2.0, 2.0);
    PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md, params(64, 4));
    REQUIRE(plan.patches.size() == 1);
    CHECK(plan.patches[0].n_real == 4.0);
    CHECK(plan.patches[0].count == 4);
}

TEST_CASE("doubled depth quadruples the budget pre-cap") {
    Maps m = constant_maps(64, 64, 4.0, 2.0);
    PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md, params(64, 4, 100.0));
    CHECK(plan.patches[0].n_real == doctest::Approx(16.0).epsilon(1e-12));
}

TEST_CASE("mixed-ratio patch averages the per-pixel ratios") {
    Maps m = constant_maps(64, 64, 2.0, 2.0);
    for (int y = 0; y < 64; ++y)
        for (int x = 32; x < 64; ++x) m.depth(x, y) = 4.0;  // ratio 4 on half
    PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md, params(64, 4, 100.0));
    CHECK(plan.patches[0].n_real == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("ratio cap bounds grazing-background budgets") {
    Maps m = constant_maps(64, 64, 100.0, 1.0);  // raw ratio 1e4
    PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md, params(64, 4, 25.0));
    CHECK(plan.patches[0].n_real == doctest::Approx(100.0));  // 25 * 4
}

TEST_CASE("patches without valid pixels get zero budget, remainders are flagged") {
    Maps m = constant_maps(96, 64, 2.0, 2.0);
    for (int y = 0; y < 64; ++y)
        for (int x = 64; x < 96; ++x) m.valid(x, y) = 0;
    PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md, params(64, 4));
    REQUIRE(plan.patches.size() == 2);
    CHECK(plan.patches[0].partial == false);
    CHECK(plan.patches[1].partial == true);  // 32 px remainder
    CHECK(plan.patches[1].n_real == 0.0);
    CHECK(plan.patches[1].count == 0);
}

TEST_CASE("shape mismatch is rejected") {
    Maps m = constant_maps(64, 64, 2.0, 2.0);
    Image<double> wrong(32, 32, 2.0);
    CHECK_THROWS_AS(patch_prompt_counts(wrong, m.valid, m.md, params(64, 4)),
                    DataError);
}

TEST_CASE("stochastic rounding preserves expected totals") {
    Maps m = constant_maps(64, 64, 2.0, 2.0);
    // uniform ratio 1.5^2 = 2.25 -> n_real = 9/patch? use n=2 -> 4.5
    for (auto& v : m.depth.data()) v = 3.0;
    long total = 0;
    const int runs = 400;
    for (int r = 0; r < runs; ++r) {
        PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md,
                                              params(64, 2, 100.0, 1000 + r));
        total += plan.patches[0].count;
    }
    double mean = static_cast<double>(total) / runs;
    CHECK(mean == doctest::Approx(4.5).epsilon(0.03));
}

TEST_CASE("budget monotonicity: scaling depths by c scales budgets by c^2") {
    Maps base = constant_maps(64, 64, 0.0, 1.0);
    Rng rng(12);
    for (auto& v : base.depth.data()) v = rng.uniform(1.0, 3.0);
    Maps scaled = base;
    for (auto& v : scaled.depth.data()) v *= 1.7;

    PromptParams p = params(32, 4, 1e12);  // cap disabled
    PromptPlan a = patch_prompt_counts(base.depth, base.valid, base.md, p);
    PromptPlan b = patch_prompt_counts(scaled.depth, scaled.valid, scaled.md, p);
    for (std::size_t i = 0; i < a.patches.size(); ++i)
        CHECK(b.patches[i].n_real ==
              doctest::Approx(a.patches[i].n_real * 1.7 * 1.7).epsilon(1e-9));
}

TEST_CASE("density histogram normalizes covered-pixel counts") {
    RenderOutput<double> ro;
    ro.width = 64;
    ro.height = 64;
    ro.dominant = Image<std::uint32_t>(64, 64, kNoGaussian);
    PromptPatch patch;
    patch.x0 = patch.y0 = 0;
    patch.width = patch.height = 64;

    SUBCASE("full coverage is uniform") {
        for (auto& v : ro.dominant.data()) v = 1;
        DensityHistogram h = visible_gaussian_density(ro, patch, 4);
        for (double p : h.prob) CHECK(p == doctest::Approx(1.0 / 16));
        CHECK(!h.uniform_fallback);
    }
    SUBCASE("coverage in one sub-patch concentrates there") {
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) ro.dominant(x, y) = 2;
        DensityHistogram h = visible_gaussian_density(ro, patch, 4);
        CHECK(h.prob[0] == doctest::Approx(1.0));
    }
    SUBCASE("object spanning 2 of 16 sub-patches equally splits mass") {
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 32; ++x) ro.dominant(x, y) = 2;
        DensityHistogram h = visible_gaussian_density(ro, patch, 4);
        CHECK(h.prob[0] == doctest::Approx(0.5));
        CHECK(h.prob[1] == doctest::Approx(0.5));
    }
    SUBCASE("no coverage falls back to uniform") {
        DensityHistogram h = visible_gaussian_density(ro, patch, 4);
        CHECK(h.uniform_fallback);
        for (double p : h.prob) CHECK(p == doctest::Approx(1.0 / 16));
    }
}

TEST_CASE("sampling draws the budget from the histogram") {
    Maps m = constant_maps(64, 64, 2.0, 2.0);
    PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md, params(64, 4));
    DensityHistogram h;
    h.grid = 4;
    h.prob.assign(16, 0.0);
    h.prob[5] = 1.0;  // bin (1,1): pixels [16,32) x [16,32)

    SUBCASE("zero budget draws nothing") {
        plan.patches[0].count = 0;
        sample_prompts(plan, {h}, 9);
        CHECK(plan.points.empty());
    }
    SUBCASE("single-bin histogram keeps all points inside the bin") {
        plan.patches[0].count = 4;
        sample_prompts(plan, {h}, 9);
        REQUIRE(plan.points.size() == 4);
        for (const auto& pt : plan.points) {
            CHECK(pt.x >= 16);
            CHECK(pt.x < 32);
            CHECK(pt.y >= 16);
            CHECK(pt.y < 32);
        }
    }
}

TEST_CASE("sampling is without replacement and respects frequencies") {
    // one 200x200 patch, 2x2 bins with probabilities (0.75, 0.25, 0, 0)
    Maps m = constant_maps(200, 200, 2.0, 2.0);
    PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md, params(200, 1));
    plan.patches[0].count = 10000;
    DensityHistogram h;
    h.grid = 2;
    h.prob = {0.75, 0.25, 0.0, 0.0};
    sample_prompts(plan, {h}, 4242);
    REQUIRE(plan.points.size() == 10000);

    std::set<std::pair<int, int>> seen;
    long in_a = 0, in_b = 0;
    for (const auto& pt : plan.points) {
        CHECK(seen.emplace(pt.x, pt.y).second);  // all distinct
        if (pt.y < 100) (pt.x < 100 ? in_a : in_b) += 1;
    }
    CHECK(std::abs(in_a / 10000.0 - 0.75) < 0.02);
    CHECK(std::abs(in_b / 10000.0 - 0.25) < 0.02);
}

TEST_CASE("budgets beyond the patch pixel count are clamped") {
    Maps m = constant_maps(8, 8, 2.0, 2.0);
    PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md, params(8, 1));
    plan.patches[0].count = 100;
    DensityHistogram h;
    h.grid = 2;
    h.prob = {0.25, 0.25, 0.25, 0.25};
    sample_prompts(plan, {h}, 7);
    CHECK(plan.points.size() == 64);
    CHECK(plan.patches[0].count == 64);
}

TEST_CASE("uniform prompts: center point, exact grids, spacing") {
    SUBCASE("single point without jitter is the image center") {
        PromptPlan plan = uniform_prompts(64, 64, 1, 3, 0.0);
        REQUIRE(plan.points.size() == 1);
        CHECK(plan.points[0].x == 32);
        CHECK(plan.points[0].y == 32);
    }
    SUBCASE("k^2 points form a k x k grid") {
        PromptPlan plan = uniform_prompts(64, 64, 16, 3, 0.0);
        REQUIRE(plan.points.size() == 16);
        std::set<int> xs, ys;
        for (const auto& pt : plan.points) {
            xs.insert(pt.x);
            ys.insert(pt.y);
        }
        CHECK(xs.size() == 4);
        CHECK(ys.size() == 4);
    }
    SUBCASE("16 points on a 64x64 image stay at least 8 px apart") {
        PromptPlan plan = uniform_prompts(64, 64, 16, 99);  // default jitter
        REQUIRE(plan.points.size() == 16);
        for (std::size_t i = 0; i < plan.points.size(); ++i)
            for (std::size_t j = i + 1; j < plan.points.size(); ++j) {
                double dx = plan.points[i].x - plan.points[j].x;
                double dy = plan.points[i].y - plan.points[j].y;
                CHECK(std::sqrt(dx * dx + dy * dy) >= 8.0);
            }
    }
}

TEST_CASE("identical seeds reproduce identical point sets") {
    Maps m = constant_maps(64, 64, 3.0, 2.0);
    auto make = [&](std::uint64_t seed) {
        PromptParams p = params(32, 4, 25.0, seed);
        PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md, p);
        std::vector<DensityHistogram> hs;
        DensityHistogram h;
        h.grid = 4;
        h.prob.assign(16, 1.0 / 16);
        hs.assign(plan.patches.size(), h);
        sample_prompts(plan, hs, seed);
        return plan;
    };
    PromptPlan a = make(77), b = make(77), c = make(78);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i].x == b.points[i].x);
        CHECK(a.points[i].y == b.points[i].y);
    }
    bool same = a.points.size() == c.points.size();
    if (same)
        for (std::size_t i = 0; i < a.points.size(); ++i)
            same = same && a.points[i].x == c.points[i].x && a.points[i].y == c.points[i].y;
    CHECK(!same);
}

TEST_CASE("points lie inside their patches and counts match points") {
    Maps m = constant_maps(96, 96, 3.0, 1.5);
    PromptParams p = params(32, 4, 25.0, 5);
    PromptPlan plan = patch_prompt_counts(m.depth, m.valid, m.md, p);
    std::vector<DensityHistogram> hs;
    DensityHistogram h;
    h.grid = 4;
    h.prob.assign(16, 1.0 / 16);
    hs.assign(plan.patches.size(), h);
    sample_prompts(plan, hs, 5);

    int total = 0;
    for (const auto& patch : plan.patches) total += patch.count;
    CHECK(static_cast<std::size_t>(total) == plan.points.size());
    for (const auto& pt : plan.points) {
        const PromptPatch& patch = plan.patches[pt.patch];
        CHECK(pt.x >= patch.x0);
        CHECK(pt.x < patch.x0 + patch.width);
        CHECK(pt.y >= patch.y0);
        CHECK(pt.y < patch.y0 + patch.height);
    }
}

TEST_CASE("prompt plan JSON round trip") {
    PromptPlan plan = uniform_prompts(48, 32, 5, 11);
    nlohmann::json j = prompt_plan_to_json(plan);
    PromptPlan back = prompt_plan_from_json(j);
    CHECK(back.width == plan.width);
    CHECK(back.points.size() == plan.points.size());
    for (std::size_t i = 0; i < plan.points.size(); ++i) {
        CHECK(back.points[i].x == plan.points[i].x);
        CHECK(back.points[i].y == plan.points[i].y);
    }
    CHECK(prompt_plan_to_json(back) == j);
}
