#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "vaeac/evalharness.hpp"

using vaeac::Feature;
using vaeac::FeatureKind;
using vaeac::FeatureSchema;
using vaeac::ImputedRow;
using vaeac::Mask;
using vaeac::Rng;

namespace {

const double kNan = std::numeric_limits<double>::quiet_NaN();
const double kInf = std::numeric_limits<double>::infinity();

Feature real_feature(const std::string& name) {
    Feature f;
    f.name = name;
    f.kind = FeatureKind::kReal;
    return f;
}

Feature cat_feature(const std::string& name, std::size_t k) {
    Feature f;
    f.name = name;
    f.kind = FeatureKind::kCategorical;
    for (std::size_t i = 0; i < k; ++i) f.labels.push_back(std::to_string(i));
    return f;
}

ImputedRow row_with(const std::vector<double>& truth, const Mask& dropped,
                    const std::vector<double>& combined) {
    ImputedRow r;
    r.truth = truth;
    r.dropped = dropped;
    r.combined = combined;
    r.completions = {combined};
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/vaeac_eval_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("combination averages reals and takes the categorical mode") {
    FeatureSchema s;
    s.features = {real_feature("x"), cat_feature("c", 3)};

    CHECK(vaeac::combine_imputations(s, {{1.5, 2.0}}) == std::vector<double>{1.5, 2.0});
    CHECK(vaeac::combine_imputations(s, {{1.0, 0.0}, {3.0, 1.0}, {2.0, 1.0}}) ==
          std::vector<double>{2.0, 1.0});
    // Ties resolve toward the lowest label index.
    CHECK(vaeac::combine_imputations(s, {{0.0, 2.0}, {0.0, 0.0}, {0.0, 0.0}, {0.0, 2.0}})[1] ==
          0.0);
    CHECK_THROWS_AS(vaeac::combine_imputations(s, {}), vaeac::ShapeError);
    CHECK_THROWS_AS(vaeac::combine_imputations(s, {{1.0, 7.0}}), vaeac::ShapeError);
}

TEST_CASE("nrmse scores dropped real cells against truth spread") {
    FeatureSchema s;
    s.features = {real_feature("a"), cat_feature("c", 2)};
    // Truth column: {0, 2, 4}, population std = sqrt(8/3).
    std::vector<ImputedRow> rows = {
        row_with({0.0, 1.0}, {1, 0}, {1.0, 1.0}),
        row_with({2.0, 0.0}, {1, 0}, {2.0, 0.0}),
        row_with({4.0, 1.0}, {0, 0}, {4.0, 1.0}),
    };
    const double rmse = std::sqrt((1.0 + 0.0) / 2.0);
    const double sd = std::sqrt(8.0 / 3.0);
    CHECK(vaeac::nrmse(s, rows) == doctest::Approx(rmse / sd).epsilon(1e-12));

    // Perfect imputations score zero.
    std::vector<ImputedRow> perfect = {row_with({3.0, 0.0}, {1, 0}, {3.0, 0.0}),
                                       row_with({5.0, 0.0}, {1, 0}, {5.0, 0.0})};
    CHECK(vaeac::nrmse(s, perfect) == 0.0);

    // No dropped real cells -> error; the categorical drop feeds pfc instead.
    std::vector<ImputedRow> none = {row_with({1.0, 0.0}, {0, 1}, {1.0, 1.0})};
    CHECK_THROWS_AS(vaeac::nrmse(s, none), vaeac::ShapeError);
    CHECK(vaeac::pfc(s, none) == 1.0);
    CHECK_THROWS_AS(vaeac::pfc(s, perfect), vaeac::ShapeError);

    // Excluding the only scored column leaves nothing.
    CHECK_THROWS_AS(vaeac::nrmse(s, rows, 0), vaeac::ShapeError);
}

TEST_CASE("pfc is the fraction of wrong labels per feature") {
    FeatureSchema s;
    s.features = {cat_feature("c", 3), cat_feature("d", 2)};
    std::vector<ImputedRow> rows = {
        row_with({0.0, 1.0}, {1, 1}, {0.0, 0.0}),  // c right, d wrong
        row_with({2.0, 0.0}, {1, 0}, {1.0, 0.0}),  // c wrong
        row_with({1.0, 1.0}, {1, 1}, {1.0, 1.0}),  // both right
    };
    // c: 1/3 wrong; d: 1/2 wrong.
    CHECK(vaeac::pfc(s, rows) == doctest::Approx((1.0 / 3.0 + 0.5) / 2.0).epsilon(1e-12));
    CHECK(vaeac::pfc(s, rows, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    std::vector<ImputedRow> wrong = {row_with({0.0, 1.0}, {1, 1}, {1.0, 0.0})};
    CHECK(vaeac::pfc(s, wrong) == 1.0);
}

TEST_CASE("mean imputation converges to unit nrmse") {
    FeatureSchema s;
    s.features = {real_feature("a"), real_feature("b")};
    Rng rng = vaeac::make_rng(31, "data");
    std::vector<std::vector<double>> truth, corrupted;
    for (int i = 0; i < 10000; ++i) {
        std::vector<double> row = {3.0 + 2.0 * vaeac::normal01(rng),
                                   -1.0 + 0.5 * vaeac::normal01(rng)};
        truth.push_back(row);
        for (double& v : row) {
            if (vaeac::uniform01(rng) < 0.5) v = kNan;
        }
        corrupted.push_back(row);
    }
    std::vector<ImputedRow> rows = vaeac::mean_impute_rows(s, corrupted, truth);
    for (const ImputedRow& r : rows) {
        for (std::size_t j = 0; j < 2; ++j) {
            if (r.dropped[j] == 0) CHECK(r.combined[j] == r.truth[j]);
        }
    }
    CHECK(vaeac::nrmse(s, rows) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("r2 matches its definition") {
    CHECK(vaeac::r2_score({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}) == 1.0);
    CHECK(vaeac::r2_score({1.0, 2.0, 3.0}, {2.0, 2.0, 2.0}) == 0.0);
    CHECK(vaeac::r2_score({1.0, 2.0, 3.0}, {1.0, 2.0, 5.0}) ==
          doctest::Approx(1.0 - 4.0 / 2.0).epsilon(1e-12));
    CHECK_THROWS_AS(vaeac::r2_score({2.0, 2.0}, {1.0, 3.0}), vaeac::ShapeError);
    CHECK_THROWS_AS(vaeac::r2_score({1.0}, {1.0, 2.0}), vaeac::ShapeError);
}

TEST_CASE("ridge head recovers a noiseless linear target") {
    FeatureSchema s;
    s.features = {real_feature("x1"), real_feature("x2"), real_feature("y")};
    Rng rng = vaeac::make_rng(32, "data");
    auto make_rows = [&](int n) {
        std::vector<ImputedRow> rows;
        for (int i = 0; i < n; ++i) {
            const double a = vaeac::normal01(rng), b = vaeac::normal01(rng);
            const std::vector<double> r = {a, b, 2.0 * a - b + 0.5};
            rows.push_back(row_with(r, {0, 0, 0}, r));
        }
        return rows;
    };
    const std::vector<ImputedRow> train = make_rows(60);
    const std::vector<ImputedRow> test = make_rows(30);
    CHECK(vaeac::downstream_eval(s, 2, train, test) == doctest::Approx(1.0).epsilon(1e-6));

    // Constant target is degenerate.
    std::vector<ImputedRow> flat;
    for (int i = 0; i < 10; ++i) {
        const std::vector<double> r = {vaeac::normal01(rng), vaeac::normal01(rng), 7.0};
        flat.push_back(row_with(r, {0, 0, 0}, r));
    }
    CHECK_THROWS_AS(vaeac::downstream_eval(s, 2, flat, flat), vaeac::ShapeError);
}

TEST_CASE("softmax head separates a linearly separable toy") {
    FeatureSchema s;
    s.features = {real_feature("x1"), real_feature("x2"), cat_feature("y", 2)};
    Rng rng = vaeac::make_rng(33, "data");
    auto make_rows = [&](int n) {
        std::vector<ImputedRow> rows;
        for (int i = 0; i < n; ++i) {
            const double a = vaeac::normal01(rng), b = vaeac::normal01(rng);
            const std::vector<double> r = {a, b, a + b > 0.0 ? 1.0 : 0.0};
            rows.push_back(row_with(r, {0, 0, 0}, r));
        }
        return rows;
    };
    const std::vector<ImputedRow> train = make_rows(80);
    const std::vector<ImputedRow> test = make_rows(40);
    CHECK(vaeac::downstream_eval(s, 2, train, test) == 1.0);

    // Single observed class is degenerate.
    std::vector<ImputedRow> flat;
    for (int i = 0; i < 10; ++i) {
        const std::vector<double> r = {vaeac::normal01(rng), vaeac::normal01(rng), 1.0};
        flat.push_back(row_with(r, {0, 0, 0}, r));
    }
    CHECK_THROWS_AS(vaeac::downstream_eval(s, 2, flat, flat), vaeac::ShapeError);
}

TEST_CASE("duplicated completions match the single-imputation pipeline") {
    FeatureSchema s;
    s.features = {real_feature("x1"), real_feature("x2"), real_feature("y")};
    Rng rng = vaeac::make_rng(34, "data");
    std::vector<ImputedRow> train1, train3, test1, test3;
    auto push = [&](std::vector<ImputedRow>& single, std::vector<ImputedRow>& tripled, int n) {
        for (int i = 0; i < n; ++i) {
            const double a = vaeac::normal01(rng), b = vaeac::normal01(rng);
            const std::vector<double> r = {a, b, a - 0.3 * b + 0.1 * vaeac::normal01(rng)};
            ImputedRow one = row_with(r, {0, 0, 0}, r);
            ImputedRow three = one;
            three.completions = {r, r, r};
            single.push_back(one);
            tripled.push_back(three);
        }
    };
    push(train1, train3, 50);
    push(test1, test3, 25);
    const double a = vaeac::downstream_eval(s, 2, train1, test1);
    const double b = vaeac::downstream_eval(s, 2, train3, test3);
    CHECK(a == doctest::Approx(b).epsilon(1e-9));
}

TEST_CASE("pixel-independence baseline follows the smoothing formula") {
    // Degenerate all-zeros train set: smoothed rate 1/(N+2) per pixel.
    const std::vector<std::vector<double>> zeros(8, std::vector<double>(4, 0.0));
    const double rate = 1.0 / 10.0;
    const double per_pixel = -std::log(1.0 - rate);
    const double got = vaeac::naive_bayes_nll(zeros, {{{0.0, 0.0, 0.0, 0.0}, {1, 1, 0, 0}}});
    CHECK(got == doctest::Approx(2.0 * per_pixel).epsilon(1e-12));

    const double one_pix = vaeac::naive_bayes_nll(zeros, {{{1.0, 0.0, 0.0, 0.0}, {1, 0, 0, 0}}});
    CHECK(one_pix == doctest::Approx(-std::log(rate)).epsilon(1e-12));

    // Exchangeable pixels: the mask position does not matter.
    std::vector<std::vector<double>> train;
    for (int i = 0; i < 6; ++i) {
        train.push_back(std::vector<double>(4, i % 3 == 0 ? 1.0 : 0.0));
    }
    const double at_front = vaeac::naive_bayes_nll(train, {{{1.0, 1.0, 0.0, 0.0}, {1, 0, 0, 0}}});
    const double at_back = vaeac::naive_bayes_nll(train, {{{0.0, 0.0, 1.0, 1.0}, {0, 0, 0, 1}}});
    CHECK(at_front == doctest::Approx(at_back).epsilon(1e-12));

    CHECK_THROWS_AS(vaeac::naive_bayes_nll({{0.5}}, {{{0.0}, {1}}}), vaeac::ShapeError);
    CHECK_THROWS_AS(vaeac::naive_bayes_nll(zeros, {}), vaeac::ShapeError);
}

TEST_CASE("psnr follows the decibel formula") {
    const std::vector<double> img = {0.0, 100.0, 200.0, 50.0};
    CHECK(vaeac::psnr(img, img, 255.0) == kInf);

    std::vector<double> off = img;
    for (double& v : off) v += 1.0;  // MSE exactly 1
    CHECK(vaeac::psnr(img, off, 255.0) == doctest::Approx(48.13).epsilon(1e-4));
    CHECK(vaeac::psnr(img, off, 255.0) ==
          doctest::Approx(20.0 * std::log10(255.0)).epsilon(1e-12));

    CHECK_THROWS_AS(vaeac::psnr(img, {1.0}, 255.0), vaeac::ShapeError);
    CHECK_THROWS_AS(vaeac::psnr(img, img, 0.0), vaeac::ConfigError);
}

TEST_CASE("best-of-k psnr is a running maximum") {
    const std::vector<double> ref = {0.0, 10.0, 20.0, 30.0};
    std::vector<std::vector<double>> candidates;
    for (double shift : {8.0, 4.0, 2.0, 1.0}) {
        std::vector<double> c = ref;
        for (double& v : c) v += shift;
        candidates.push_back(c);
    }
    CHECK(vaeac::best_of_k_psnr(ref, {candidates[0]}, 255.0) ==
          doctest::Approx(vaeac::psnr(ref, candidates[0], 255.0)).epsilon(1e-12));

    double prev = -kInf;
    for (std::size_t k = 1; k <= candidates.size(); ++k) {
        const std::vector<std::vector<double>> prefix(candidates.begin(),
                                                      candidates.begin() + k);
        const double cur = vaeac::best_of_k_psnr(ref, prefix, 255.0);
        CHECK(cur >= prev);
        prev = cur;
    }

    candidates.push_back(ref);
    CHECK(vaeac::best_of_k_psnr(ref, candidates, 255.0) == kInf);
    CHECK_THROWS_AS(vaeac::best_of_k_psnr(ref, {}, 255.0), vaeac::ShapeError);
}

TEST_CASE("metric report reduces split values to mean and spread") {
    TempFile f("report.csv");
    vaeac::write_metric_report(
        f.path, {{"nrmse", "tableA", {0.8, 0.9, 1.0}}, {"pfc", "tableB", {0.25}}});
    CHECK(slurp(f.path) ==
          "metric,dataset,mean,std\n"
          "nrmse,tableA,0.9,0.1\n"
          "pfc,tableB,0.25,0\n");
    CHECK_THROWS_AS(vaeac::write_metric_report(f.path, {{"a,b", "x", {1.0}}}),
                    vaeac::ConfigError);
    CHECK_THROWS_AS(vaeac::write_metric_report(f.path, {{"m", "x", {}}}), vaeac::ShapeError);
}

TEST_CASE("imputation plumbing keeps observed cells and counts completions") {
    FeatureSchema s;
    s.features = {real_feature("a"), cat_feature("c", 2)};
    const std::vector<std::vector<double>> truth = {{1.0, 1.0}, {2.0, 0.0}};
    const std::vector<std::vector<double>> corrupted = {{1.0, kNan}, {kNan, 0.0}};

    int calls = 0;
    vaeac::RowSampler sampler = [&](const std::vector<double>& x, const Mask& b, std::size_t n,
                                    Rng&) {
        ++calls;
        std::vector<std::vector<double>> out;
        for (std::size_t t = 0; t < n; ++t) {
            std::vector<double> row = x;
            for (std::size_t j = 0; j < b.size(); ++j) {
                if (b[j] == 1) row[j] = double(t % 2);
            }
            out.push_back(row);
        }
        return out;
    };
    Rng rng = vaeac::make_rng(35, "impute");
    std::vector<ImputedRow> rows = vaeac::impute_rows(s, sampler, corrupted, truth, 3, rng);
    CHECK(calls == 2);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].completions.size() == 3);
    CHECK(rows[0].dropped == Mask{0, 1});
    CHECK(rows[0].combined[0] == 1.0);           // observed, untouched
    CHECK(rows[0].combined[1] == 0.0);           // mode of {0,1,0}
    CHECK(rows[1].combined[0] ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-12));  // mean of {0,1,0}
    CHECK(rows[1].combined[1] == 0.0);

    CHECK_THROWS_AS(vaeac::impute_rows(s, sampler, corrupted, {{1.0, 1.0}}, 3, rng),
                    vaeac::ShapeError);
    CHECK_THROWS_AS(vaeac::impute_rows(s, sampler, corrupted, truth, 0, rng),
                    vaeac::ConfigError);
}
