#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "vaeac/checkpoint.hpp"
#include "vaeac/data.hpp"
#include "vaeac/marginalizer.hpp"

using vaeac::Dataset;
using vaeac::Feature;
using vaeac::FeatureKind;
using vaeac::FeatureSchema;
using vaeac::GenerativeOutput;
using vaeac::Mask;
using vaeac::Rng;
using vaeac::Tensor;
using vaeac::TrainConfig;
using vaeac::UmModel;

namespace {

const double kNan = std::numeric_limits<double>::quiet_NaN();

Feature cat2(const std::string& name) {
    Feature f;
    f.name = name;
    f.kind = FeatureKind::kCategorical;
    f.labels = {"0", "1"};
    return f;
}

Feature real_feature(const std::string& name) {
    Feature f;
    f.name = name;
    f.kind = FeatureKind::kReal;
    return f;
}

FeatureSchema binary_schema(std::size_t d) {
    FeatureSchema s;
    for (std::size_t i = 0; i < d; ++i) s.features.push_back(cat2("v" + std::to_string(i)));
    return s;
}

// Enumerable joint table over categorical features; conditionals by direct
// summation. The ground-truth stand-in for every chain-rule test.
class ExactTableMarginals : public vaeac::MarginalModel {
  public:
    ExactTableMarginals(FeatureSchema schema, std::vector<double> joint)
        : schema_(std::move(schema)), joint_(std::move(joint)) {
        std::size_t cells = 1;
        for (const Feature& f : schema_.features) cells *= f.n_categories();
        REQUIRE(cells == joint_.size());
    }

    // Mixed-radix cell index, feature 0 most significant.
    std::size_t cell(const std::vector<std::size_t>& a) const {
        std::size_t idx = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            idx = idx * schema_.features[i].n_categories() + a[i];
        }
        return idx;
    }

    double mass(const std::vector<double>& x, const Mask& b, std::size_t skip,
                std::size_t pin_feature, std::size_t pin_value) const {
        const std::size_t d = schema_.size();
        std::vector<std::size_t> a(d, 0);
        double total = 0.0;
        while (true) {
            bool ok = a[pin_feature] == pin_value;
            for (std::size_t j = 0; ok && j < d; ++j) {
                if (j != skip && j != pin_feature && b[j] == 0) {
                    ok = a[j] == static_cast<std::size_t>(x[j]);
                }
            }
            if (ok) total += joint_[cell(a)];
            std::size_t i = d;
            while (i > 0) {
                --i;
                if (++a[i] < schema_.features[i].n_categories()) break;
                a[i] = 0;
                if (i == 0) return total;
            }
        }
    }

  protected:
    const FeatureSchema& schema_ref() const override { return schema_; }

    GenerativeOutput compute_marginals(const std::vector<double>& x,
                                       const Mask& b) const override {
        const std::size_t d = schema_.size();
        GenerativeOutput out;
        out.mean.assign(d, 0.0);
        out.sigma.assign(d, 1.0);
        out.logits.resize(d);
        for (std::size_t i = 0; i < d; ++i) {
            const std::size_t k = schema_.features[i].n_categories();
            out.logits[i].resize(k);
            for (std::size_t v = 0; v < k; ++v) {
                out.logits[i][v] = std::log(mass(x, b, i, i, v) + 1e-300);
            }
        }
        return out;
    }

  private:
    FeatureSchema schema_;
    std::vector<double> joint_;
};

std::vector<double> softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = std::exp(logits[i] - mx);
    for (double& v : p) v /= total;
    return p;
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/vaeac_um_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

// p(x0,x1) on two binary variables: 0.4, 0.1, 0.2, 0.3.
const std::vector<double> kToyJoint = {0.4, 0.1, 0.2, 0.3};

}  // namespace

TEST_CASE("table marginals match hand conditionals") {
    ExactTableMarginals m(binary_schema(2), kToyJoint);
    // x0 = 0 observed: p(x1=1 | x0=0) = 0.1 / 0.5.
    GenerativeOutput g = vaeac::um_forward(m, {0.0, 0.0}, {0, 1});
    REQUIRE(g.logits[1].size() == 2);
    const std::vector<double> p = softmax(g.logits[1]);
    CHECK(p[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.2).epsilon(1e-12));

    // Nothing observed: the unconditional marginals.
    GenerativeOutput u = vaeac::um_forward(m, {0.0, 0.0}, {1, 1});
    const std::vector<double> p0 = softmax(u.logits[0]);
    const std::vector<double> p1 = softmax(u.logits[1]);
    CHECK(p0[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p1[1] == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("chain sampling does one pass per generated feature") {
    ExactTableMarginals m(binary_schema(5), std::vector<double>(32, 1.0 / 32.0));
    Rng rng = vaeac::make_rng(1, "chain");

    m.forward_count = 0;
    const std::vector<double> same = vaeac::um_chain_sample(m, {0, 1, 0, 1, 0}, {0, 0, 0, 0, 0},
                                                            rng);
    CHECK(same == std::vector<double>{0, 1, 0, 1, 0});
    CHECK(m.forward_count == 0);

    m.forward_count = 0;
    vaeac::um_chain_sample(m, {0, 1, 0, 1, 0}, {0, 1, 0, 0, 0}, rng);
    CHECK(m.forward_count == 1);

    m.forward_count = 0;
    vaeac::um_chain_sample(m, {0, kNan, 0, kNan, kNan}, {0, 1, 0, 1, 1}, rng);
    CHECK(m.forward_count == 3);
}

TEST_CASE("chained samples reproduce the true conditional and joint") {
    ExactTableMarginals m(binary_schema(2), kToyJoint);
    Rng rng = vaeac::make_rng(2, "chain");
    const int n = 100000;

    int hits = 0;
    for (int t = 0; t < n; ++t) {
        const std::vector<double> s = vaeac::um_chain_sample(m, {0.0, kNan}, {0, 1}, rng);
        CHECK(s[0] == 0.0);
        hits += s[1] == 1.0;
    }
    CHECK(std::fabs(hits / double(n) - 0.2) < 0.02);

    std::map<std::pair<int, int>, int> counts;
    for (int t = 0; t < n; ++t) {
        const std::vector<double> s = vaeac::um_chain_sample(m, {kNan, kNan}, {1, 1}, rng);
        ++counts[{int(s[0]), int(s[1])}];
    }
    double tv = 0.0;
    tv += std::fabs(counts[{0, 0}] / double(n) - 0.4);
    tv += std::fabs(counts[{0, 1}] / double(n) - 0.1);
    tv += std::fabs(counts[{1, 0}] / double(n) - 0.2);
    tv += std::fabs(counts[{1, 1}] / double(n) - 0.3);
    CHECK(tv / 2.0 < 0.02);
}

TEST_CASE("chain log-likelihood factorizes and ignores the ordering") {
    ExactTableMarginals m(binary_schema(2), kToyJoint);

    // Single unobserved cell: just that marginal.
    CHECK(vaeac::um_chain_log_lik(m, {0.0, 1.0}, {0, 1}, {1}) ==
          doctest::Approx(std::log(0.2)).epsilon(1e-12));

    // Fully unobserved: the joint, whatever the ordering.
    const double fwd = vaeac::um_chain_log_lik(m, {1.0, 0.0}, {1, 1}, {0, 1});
    const double rev = vaeac::um_chain_log_lik(m, {1.0, 0.0}, {1, 1}, {1, 0});
    CHECK(fwd == doctest::Approx(std::log(0.2)).epsilon(1e-12));
    CHECK(rev == doctest::Approx(fwd).epsilon(1e-9));

    CHECK_THROWS_AS(vaeac::um_chain_log_lik(m, {1.0, 0.0}, {1, 1}, {0}), vaeac::ShapeError);
    CHECK_THROWS_AS(vaeac::um_chain_log_lik(m, {1.0, 0.0}, {1, 1}, {0, 0}), vaeac::ShapeError);
    CHECK_THROWS_AS(vaeac::um_chain_log_lik(m, {1.0, 0.0}, {0, 1}, {0, 1}), vaeac::ShapeError);
    // A missing cell can be completed but never scored.
    CHECK_THROWS_AS(vaeac::um_chain_log_lik(m, {kNan, 0.0}, {1, 1}, {0, 1}), vaeac::ShapeError);
    CHECK(vaeac::um_chain_log_lik(m, {kNan, 0.0}, {1, 1}, {1}) ==
          doctest::Approx(std::log(0.6)).epsilon(1e-12));
}

TEST_CASE("five-variable chain walks the stated conditioning sets") {
    // Score x1, x4, x5 given x2, x3 in the order x4, x1, x5 (1-based naming):
    // p(x4|x2,x3) p(x1|x2,x3,x4) p(x5|x1,x2,x3,x4).
    FeatureSchema s = binary_schema(5);
    Rng jrng = vaeac::make_rng(3, "joint");
    std::vector<double> joint(32);
    double total = 0.0;
    for (double& v : joint) total += v = std::exp(vaeac::normal01(jrng));
    for (double& v : joint) v /= total;
    ExactTableMarginals m(s, joint);

    const std::vector<double> x = {1.0, 0.0, 1.0, 1.0, 0.0};
    const Mask b = {1, 0, 0, 1, 1};
    const double got = vaeac::um_chain_log_lik(m, x, b, {3, 0, 4});

    // Direct table ratio: p(x with all five pinned) / p(x2, x3 pinned).
    auto mass_given = [&](const std::vector<int>& pinned) {
        double acc = 0.0;
        for (std::size_t c = 0; c < 32; ++c) {
            bool ok = true;
            for (std::size_t i = 0; ok && i < 5; ++i) {
                const std::size_t bit = (c >> (4 - i)) & 1;
                if (pinned[i] >= 0) ok = bit == static_cast<std::size_t>(pinned[i]);
            }
            if (ok) acc += joint[c];
        }
        return acc;
    };
    const double expected =
        std::log(mass_given({1, 0, 1, 1, 0})) - std::log(mass_given({-1, 0, 1, -1, -1}));
    CHECK(got == doctest::Approx(expected).epsilon(1e-10));

    // Per-step factors computed independently.
    auto cond = [&](std::size_t i, const std::vector<int>& given) {
        std::vector<int> num = given;
        num[i] = static_cast<int>(x[i]);
        return std::log(mass_given(num)) - std::log(mass_given(given));
    };
    const double by_steps = cond(3, {-1, 0, 1, -1, -1}) + cond(0, {-1, 0, 1, 1, -1}) +
                            cond(4, {1, 0, 1, 1, -1});
    CHECK(got == doctest::Approx(by_steps).epsilon(1e-10));
}

TEST_CASE("chain factors sum to one over all completions") {
    FeatureSchema s = binary_schema(3);
    Rng jrng = vaeac::make_rng(4, "joint");
    std::vector<double> joint(8);
    double total = 0.0;
    for (double& v : joint) total += v = std::exp(vaeac::normal01(jrng));
    for (double& v : joint) v /= total;
    ExactTableMarginals m(s, joint);

    const Mask b = {1, 0, 1};
    double acc = 0.0;
    for (int a = 0; a < 2; ++a) {
        for (int c = 0; c < 2; ++c) {
            acc += std::exp(vaeac::um_chain_log_lik(m, {double(a), 1.0, double(c)}, b, {2, 0}));
        }
    }
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("training mask pipeline reaches every unobserved count") {
    Rng rng = vaeac::make_rng(5, "audit");
    const std::vector<double> row = {0.0, 1.0, 0.0};
    vaeac::MaskSpec spec = vaeac::MaskSpec::parse("bernoulli(0.5)");
    std::vector<int> seen(4, 0);
    for (int t = 0; t < 600; ++t) {
        Mask b = vaeac::um_mask_transform(vaeac::sample_mask(spec, row, rng), rng);
        vaeac::force_missing_unobserved(b, row);
        ++seen[vaeac::mask_popcount(b)];
    }
    for (int k = 0; k <= 3; ++k) CHECK(seen[k] > 0);
}

TEST_CASE("trained marginals land near the enumerated truth") {
    // Exact-count sample of the toy joint, shuffled.
    FeatureSchema s = binary_schema(2);
    Dataset ds;
    ds.schema = s;
    const int n = 4000;
    for (int c = 0; c < 4; ++c) {
        const int count = static_cast<int>(std::lround(kToyJoint[c] * n));
        for (int t = 0; t < count; ++t) ds.rows.push_back({double(c >> 1), double(c & 1)});
    }
    Rng shuffle_rng = vaeac::make_rng(6, "shuffle");
    std::shuffle(ds.rows.begin(), ds.rows.end(), shuffle_rng);

    // Full-batch steps average the mask resampling noise across all rows, so
    // the run converges tightly instead of wandering near the optimum.
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.batch = 4000;
    cfg.lr = 1e-2;
    cfg.hidden = {16};
    cfg.mask_spec = "bernoulli(0.5)";
    cfg.seed = 3;

    vaeac::UmTrainResult tr = vaeac::um_train(ds, cfg);
    CHECK(tr.epoch_objective.back() > tr.epoch_objective.front());
    CHECK(tr.best_epoch >= 1);

    ExactTableMarginals truth(s, kToyJoint);
    auto tv_at = [&](const std::vector<double>& x, const Mask& b, std::size_t i) {
        const std::vector<double> pm = softmax(vaeac::um_forward(tr.model, x, b).logits[i]);
        const std::vector<double> pt = softmax(vaeac::um_forward(truth, x, b).logits[i]);
        return 0.5 * (std::fabs(pm[0] - pt[0]) + std::fabs(pm[1] - pt[1]));
    };
    // All eight single-target conditionals plus both unconditional marginals.
    CHECK(tv_at({0.0, kNan}, {0, 1}, 1) < 0.05);
    CHECK(tv_at({1.0, kNan}, {0, 1}, 1) < 0.05);
    CHECK(tv_at({kNan, 0.0}, {1, 0}, 0) < 0.05);
    CHECK(tv_at({kNan, 1.0}, {1, 0}, 0) < 0.05);
    CHECK(tv_at({kNan, kNan}, {1, 1}, 0) < 0.05);
    CHECK(tv_at({kNan, kNan}, {1, 1}, 1) < 0.05);

    // Chain factors over a trained net still telescope to one.
    double acc = 0.0;
    for (int a = 0; a < 2; ++a) {
        for (int c = 0; c < 2; ++c) {
            acc += std::exp(
                vaeac::um_chain_log_lik(tr.model, {double(a), double(c)}, {1, 1}, {1, 0}));
        }
    }
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("marginalizer training is deterministic per seed") {
    FeatureSchema s = binary_schema(2);
    Dataset ds;
    ds.schema = s;
    Rng drng = vaeac::make_rng(7, "data");
    for (int t = 0; t < 300; ++t) {
        const double u = vaeac::uniform01(drng);
        const int c = u < 0.4 ? 0 : u < 0.5 ? 1 : u < 0.7 ? 2 : 3;
        ds.rows.push_back({double(c >> 1), double(c & 1)});
    }
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch = 50;
    cfg.hidden = {8};
    cfg.mask_spec = "bernoulli(0.5)";
    cfg.seed = 13;
    vaeac::UmTrainResult a = vaeac::um_train(ds, cfg);
    vaeac::UmTrainResult b = vaeac::um_train(ds, cfg);
    CHECK(a.epoch_objective == b.epoch_objective);
    CHECK(a.epoch_val_objective == b.epoch_val_objective);
}

TEST_CASE("marginalizer gradients match finite differences") {
    FeatureSchema s;
    s.features = {real_feature("x"), cat2("c")};
    TrainConfig cfg;
    cfg.hidden = {6};
    Rng rng = vaeac::make_rng(8, "init");
    UmModel m = UmModel::make(s, cfg, rng);

    const std::vector<std::vector<double>> rows = {{0.4, 1.0}, {kNan, 0.0}};
    const std::vector<Mask> masks = {{1, 1}, {1, 0}};
    vaeac::UmBatchObjective obj(m, rows, masks);
    obj.backward();

    auto eval = [&]() {
        vaeac::UmBatchObjective probe(m, rows, masks);
        return -probe.value();
    };
    const std::vector<Tensor> fd = testutil::fd_gradients(eval, m.params());
    const std::vector<Tensor*> params = m.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(testutil::max_rel_err(obj.grad(i), fd[i]) < 1e-4);
    }
}

TEST_CASE("marginalizer objective scores only unobserved present cells") {
    FeatureSchema s;
    s.features = {real_feature("x"), cat2("c")};
    TrainConfig cfg;
    cfg.hidden = {6};
    Rng rng = vaeac::make_rng(9, "init");
    UmModel m = UmModel::make(s, cfg, rng);
    for (Tensor* t : m.params()) {
        for (double& v : t->data) v = 0.0;
    }
    const double sigma0 = std::log(2.0) + 1e-3;
    const double expected =
        vaeac::gaussian_log_prob(0.7, 0.0, sigma0) + std::log(0.5);
    CHECK(vaeac::um_objective(m, {0.7, 1.0}, {1, 1}) ==
          doctest::Approx(expected).epsilon(1e-12));
    CHECK(vaeac::um_objective(m, {0.7, 1.0}, {0, 0}) == 0.0);
    CHECK(vaeac::um_objective(m, {kNan, 1.0}, {1, 0}) == 0.0);
}

TEST_CASE("marginalizer sampling and likelihood report original units") {
    FeatureSchema s;
    s.features = {real_feature("x"), cat2("c")};
    s.features[0].mean = 5.0;
    s.features[0].std = 2.0;
    s.features[0].normalized = true;
    TrainConfig cfg;
    cfg.hidden = {6};
    Rng rng = vaeac::make_rng(10, "init");
    UmModel m = UmModel::make(s, cfg, rng);
    for (Tensor* t : m.params()) {
        for (double& v : t->data) v = 0.0;
    }

    Rng srng = vaeac::make_rng(23, "sample");
    auto rows = vaeac::um_conditional_sample(m, {kNan, 1.0}, {1, 0}, 3, srng, true);
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
        CHECK(r[0] == 5.0);  // zero-net mean, denormalized
        CHECK(r[1] == 1.0);  // observed, verbatim
    }

    const double sigma0 = std::log(2.0) + 1e-3;
    const double expected = vaeac::gaussian_log_prob(1.0, 0.0, sigma0) - std::log(2.0);
    Rng lrng = vaeac::make_rng(24, "ll");
    CHECK(vaeac::um_log_lik(m, {7.0, 1.0}, {1, 0}, lrng) ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("marginalizer checkpoints round trip and stay kind-tagged") {
    FeatureSchema s;
    s.features = {real_feature("x"), cat2("c")};
    s.features[0].mean = 1.5;
    s.features[0].std = 0.5;
    s.features[0].normalized = true;
    TrainConfig cfg;
    cfg.hidden = {6, 4};
    cfg.mask_spec = "bernoulli(0.4)";
    cfg.seed = 21;
    Rng rng = vaeac::make_rng(11, "init");
    UmModel m = UmModel::make(s, cfg, rng);

    TempFile f("um.bin");
    vaeac::save_um_checkpoint(f.path, m, {.best_epoch = 3, .best_val_loglik = -0.5});
    CHECK(vaeac::checkpoint_model_kind(f.path) == "marginalizer");
    CHECK_THROWS_AS(vaeac::load_vaeac_checkpoint(f.path), vaeac::IoError);

    vaeac::VaeacCheckpointInfo info;
    UmModel back = vaeac::load_um_checkpoint(f.path, &info);
    CHECK(info.best_epoch == 3);
    CHECK(back.cfg.hidden == cfg.hidden);
    CHECK(back.cfg.mask_spec == "bernoulli(0.4)");
    CHECK(back.feats.features[0].std == 0.5);
    const std::vector<const Tensor*> pa = std::as_const(m).params();
    const std::vector<const Tensor*> pb = std::as_const(back).params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->data == pb[i]->data);
}
