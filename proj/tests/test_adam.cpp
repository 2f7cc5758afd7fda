#include <cmath>
#include <limits>

#include "doctest.h"
#include "vaeac/adam.hpp"

using vaeac::AdamConfig;
using vaeac::AdamState;
using vaeac::Tensor;

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::row_vector({1.0, -2.0, 3.0});
    Tensor g = Tensor::zeros({3});
    AdamState st = AdamState::init({&p}, AdamConfig{});
    vaeac::adam_step({&p}, {&g}, st);
    CHECK(p.data == std::vector<double>{1.0, -2.0, 3.0});
    CHECK(st.t == 1);
}

TEST_CASE("adam: first step with unit gradient moves by about lr") {
    // Fresh state, grad 1: bias correction makes m_hat = v_hat = 1, so the
    // update is lr / (1 + eps) = 0.001 to within eps.
    Tensor p = Tensor::scalar(0.5);
    Tensor g = Tensor::scalar(1.0);
    AdamState st = AdamState::init({&p}, AdamConfig{});
    vaeac::adam_step({&p}, {&g}, st);
    CHECK(p.data[0] == doctest::Approx(0.5 - 0.001).epsilon(1e-6));
    CHECK(p.data[0] < 0.5);
}

TEST_CASE("adam: identical parameters with identical grads update identically") {
    Tensor p1 = Tensor::scalar(0.7), p2 = Tensor::scalar(0.7);
    Tensor g = Tensor::scalar(-0.3);
    AdamState st = AdamState::init({&p1, &p2}, AdamConfig{});
    for (int i = 0; i < 5; ++i) vaeac::adam_step({&p1, &p2}, {&g, &g}, st);
    CHECK(p1.data[0] == p2.data[0]);
    CHECK(st.t == 5);
}

TEST_CASE("adam: non-finite gradient aborts with diagnostic") {
    Tensor p = Tensor::scalar(0.0);
    Tensor g = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
    AdamState st = AdamState::init({&p}, AdamConfig{});
    CHECK_THROWS_AS(vaeac::adam_step({&p}, {&g}, st), vaeac::NumericError);
}

TEST_CASE("adam: converges on a quadratic bowl") {
    Tensor p = Tensor::row_vector({4.0, -3.0});
    AdamConfig cfg;
    cfg.lr = 0.05;
    AdamState st = AdamState::init({&p}, cfg);
    for (int i = 0; i < 2000; ++i) {
        Tensor g = Tensor::row_vector({2.0 * p.data[0], 2.0 * p.data[1]});
        vaeac::adam_step({&p}, {&g}, st);
    }
    CHECK(std::fabs(p.data[0]) < 1e-3);
    CHECK(std::fabs(p.data[1]) < 1e-3);
}
