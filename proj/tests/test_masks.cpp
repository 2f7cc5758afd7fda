#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "vaeac/masks.hpp"

using vaeac::Mask;
using vaeac::MaskSpec;

namespace {
const double kMissing = std::numeric_limits<double>::quiet_NaN();
}

TEST_CASE("bernoulli mask: missing cells forced unobserved") {
    auto rng = vaeac::make_rng(1, "mask");
    std::vector<double> x{0.1, 0.2, kMissing, 0.4};
    Mask b = vaeac::sample_mask_bernoulli(x, 0.0, rng);
    CHECK(b == Mask{0, 0, 1, 0});  // rate 0 leaves only the missing cell

    Mask all0 = vaeac::sample_mask_bernoulli({1.0, 2.0}, 0.0, rng);
    CHECK(vaeac::mask_popcount(all0) == 0);
    Mask all1 = vaeac::sample_mask_bernoulli({1.0, 2.0}, 1.0, rng);
    CHECK(vaeac::mask_popcount(all1) == 2);
}

TEST_CASE("bernoulli mask: empirical rate near target") {
    auto rng = vaeac::make_rng(2, "mask");
    std::vector<double> x(1000, 1.0);
    std::size_t total = 0;
    const int draws = 100;
    for (int i = 0; i < draws; ++i) total += vaeac::mask_popcount(vaeac::sample_mask_bernoulli(x, 0.2, rng));
    const double n = 1000.0 * draws;
    const double se = std::sqrt(0.2 * 0.8 / n);
    CHECK(std::fabs(total / n - 0.2) < 3.0 * se);
}

TEST_CASE("rectangular mask: area rule holds over many draws") {
    auto rng = vaeac::make_rng(3, "mask");
    const std::size_t h = 28, w = 28;
    for (int i = 0; i < 10000; ++i) {
        Mask b = vaeac::sample_mask_rectangular(h, w, rng);
        REQUIRE(b.size() == h * w);
        CHECK(vaeac::mask_popcount(b) * 4 >= h * w);
    }
}

TEST_CASE("rectangular mask: 2x2 boundary case always accepted with area >= 1") {
    auto rng = vaeac::make_rng(4, "mask");
    for (int i = 0; i < 100; ++i) {
        Mask b = vaeac::sample_mask_rectangular(2, 2, rng);
        CHECK(vaeac::mask_popcount(b) >= 1);
    }
}

TEST_CASE("line mask: 28x28 with 3-wide band leaves 700 unobserved") {
    auto rng = vaeac::make_rng(5, "mask");
    Mask b = vaeac::sample_mask_line(28, 28, 3, rng);
    CHECK(vaeac::mask_popcount(b) == 700);
}

TEST_CASE("line mask: band as wide as the image observes everything") {
    auto rng = vaeac::make_rng(6, "mask");
    Mask b = vaeac::sample_mask_line(8, 5, 8, rng);
    CHECK(vaeac::mask_popcount(b) == 0);
}

TEST_CASE("line mask: offsets uniform (chi-square audit)") {
    auto rng = vaeac::make_rng(7, "mask");
    const std::size_t h = 28, w = 4, width = 3;
    const std::size_t n_offsets = h - width + 1;  // 26
    std::vector<int> counts(n_offsets, 0);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        Mask b = vaeac::sample_mask_line(h, w, width, rng);
        // offset = first observed row
        std::size_t off = 0;
        while (b[off * w] == 1) ++off;
        counts[off]++;
    }
    const double expected = double(draws) / n_offsets;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // 99.9th percentile of chi-square with 25 dof is about 52.6.
    CHECK(chi2 < 52.6);
}

TEST_CASE("pattern mask: constant noise rejected in both directions") {
    auto rng = vaeac::make_rng(8, "mask");
    std::vector<double> ones(600 * 600, 1.0);   // above threshold -> all observed
    CHECK_THROWS_AS(vaeac::sample_mask_pattern_from_noise(ones, 600, 600, rng, 50),
                    vaeac::Error);
    std::vector<double> zeros(600 * 600, 0.0);  // below threshold -> all unobserved
    CHECK_THROWS_AS(vaeac::sample_mask_pattern_from_noise(zeros, 600, 600, rng, 50),
                    vaeac::Error);
}

TEST_CASE("pattern mask: accepted masks always in the fraction window") {
    auto rng = vaeac::make_rng(9, "mask");
    for (int i = 0; i < 5; ++i) {
        Mask b = vaeac::sample_mask_pattern(rng);
        REQUIRE(b.size() == 64 * 64);
        const double f = vaeac::mask_fraction(b);
        CHECK(f >= 0.2);
        CHECK(f <= 0.3);
    }
}

TEST_CASE("center mask: 64x64 hides the middle 32x32") {
    MaskSpec s = MaskSpec::parse("center");
    s.h = s.w = 64;
    auto rng = vaeac::make_rng(10, "mask");
    Mask b = vaeac::sample_mask_fixed(s, rng);
    CHECK(vaeac::mask_popcount(b) == 1024);
    CHECK(b[32 * 64 + 32] == 1);  // center pixel hidden
    CHECK(b[0] == 0);             // corner observed
}

TEST_CASE("half mask: always exactly half the pixels") {
    MaskSpec s = MaskSpec::parse("half");
    s.h = s.w = 64;
    auto rng = vaeac::make_rng(11, "mask");
    bool saw_row_half = false, saw_col_half = false;
    for (int i = 0; i < 40; ++i) {
        Mask b = vaeac::sample_mask_fixed(s, rng);
        CHECK(vaeac::mask_popcount(b) == 2048);
        if (b[0] != b[63]) saw_col_half = true;               // left/right split
        if (b[0] == b[63] && b[0] != b[63 * 64]) saw_row_half = true;  // top/bottom
    }
    CHECK(saw_row_half);
    CHECK(saw_col_half);
}

TEST_CASE("fixed region mask: table coordinates give the documented popcount") {
    MaskSpec s = MaskSpec::parse("fixed_region(33,70,52,115)");
    s.h = s.w = 128;
    auto rng = vaeac::make_rng(12, "mask");
    Mask b = vaeac::sample_mask_fixed(s, rng);
    CHECK(vaeac::mask_popcount(b) == 38 * 64);
    CHECK(b[52 * 128 + 33] == 1);
    CHECK(b[115 * 128 + 70] == 1);
    CHECK(b[51 * 128 + 33] == 0);

    MaskSpec bad = MaskSpec::parse("fixed_region(0,200,0,10)");
    bad.h = bad.w = 128;
    CHECK_THROWS_AS(vaeac::sample_mask_fixed(bad, rng), vaeac::ConfigError);
}

TEST_CASE("random bernoulli image mask: default 0.8 rate") {
    MaskSpec s = MaskSpec::parse("random_bernoulli(0.8)");
    s.h = s.w = 64;
    auto rng = vaeac::make_rng(13, "mask");
    std::size_t total = 0;
    const int draws = 50;
    for (int i = 0; i < draws; ++i) total += vaeac::mask_popcount(vaeac::sample_mask_fixed(s, rng));
    const double n = 4096.0 * draws;
    const double se = std::sqrt(0.8 * 0.2 / n);
    CHECK(std::fabs(total / n - 0.8) < 3.0 * se);
}

TEST_CASE("um transform: forced u endpoints") {
    auto rng = vaeac::make_rng(14, "mask");
    Mask b0{1, 0, 1, 1, 0};
    CHECK(vaeac::um_mask_transform_with_u(b0, 1.0, rng) == b0);
    CHECK(vaeac::mask_popcount(vaeac::um_mask_transform_with_u(b0, 0.0, rng)) == 0);
}

TEST_CASE("um transform: halves the expected popcount") {
    auto rng = vaeac::make_rng(15, "mask");
    Mask b0(40, 1);
    const int draws = 100000;
    double total = 0;
    for (int i = 0; i < draws; ++i) total += double(vaeac::mask_popcount(vaeac::um_mask_transform(b0, rng)));
    const double mean = total / draws;
    // popcount | u ~ Binomial(40, u); var = E[var|u] + var[E|u] = 40/6 - 40/12 + 40^2/12
    const double var = 40.0 / 6.0 - 40.0 / 12.0 + 1600.0 / 12.0;
    const double se = std::sqrt(var / draws);
    CHECK(std::fabs(mean - 20.0) < 3.0 * se);
}

TEST_CASE("um transform: all popcounts reachable") {
    auto rng = vaeac::make_rng(16, "mask");
    Mask b0(6, 1);
    std::vector<bool> seen(7, false);
    for (int i = 0; i < 5000; ++i) seen[vaeac::mask_popcount(vaeac::um_mask_transform(b0, rng))] = true;
    for (int k = 0; k <= 6; ++k) CHECK(seen[k]);
}

TEST_CASE("mask spec parsing: errors") {
    CHECK_THROWS_AS(MaskSpec::parse("nope"), vaeac::ConfigError);
    CHECK_THROWS_AS(MaskSpec::parse("bernoulli(1.5)"), vaeac::ConfigError);
    CHECK_THROWS_AS(MaskSpec::parse("bernoulli(x)"), vaeac::ConfigError);
    CHECK_THROWS_AS(MaskSpec::parse("fixed_region(1,2)"), vaeac::ConfigError);
    CHECK(MaskSpec::parse("bernoulli").rate == 0.2);
    CHECK(MaskSpec::parse("line").line_width == 3);
}

TEST_CASE("top-level dispatch applies missing union") {
    MaskSpec s = MaskSpec::parse("line(3)");
    s.h = 4;
    s.w = 2;
    s.line_width = 3;
    auto rng = vaeac::make_rng(17, "mask");
    std::vector<double> x(8, 1.0);
    x[0] = kMissing;
    for (int i = 0; i < 20; ++i) {
        Mask b = vaeac::sample_mask(s, x, rng);
        CHECK(b[0] == 1);
    }
}

TEST_CASE("mask sampling is seed-deterministic") {
    auto draw = [] {
        auto rng = vaeac::make_rng(99, "mask-det");
        std::vector<Mask> ms;
        for (int i = 0; i < 10; ++i) ms.push_back(vaeac::sample_mask_rectangular(16, 16, rng));
        return ms;
    };
    CHECK(draw() == draw());
}
