#include "doctest.h"
#include "vaeac/tensor.hpp"

using vaeac::Tensor;

TEST_CASE("tensor factories and shape accessors") {
    Tensor z = Tensor::zeros({2, 3});
    CHECK(z.numel() == 6);
    CHECK(z.rows() == 2);
    CHECK(z.cols() == 3);
    for (double v : z.data) CHECK(v == 0.0);

    Tensor s = Tensor::scalar(4.5);
    CHECK(s.numel() == 1);
    CHECK(s.rank() == 1);
    CHECK(s.data[0] == 4.5);

    Tensor r = Tensor::row_vector({1.0, 2.0, 3.0});
    CHECK(r.rank() == 1);
    CHECK(r.rows() == 1);  // rank-1 behaves as a single row
    CHECK(r.cols() == 3);

    Tensor m = Tensor::matrix(2, 2, {1.0, 2.0, 3.0, 4.0});
    CHECK(m.at(0, 1) == 2.0);
    CHECK(m.at(1, 0) == 3.0);
}

TEST_CASE("tensor invariant: numel matches data length") {
    Tensor m = Tensor::full({3, 4}, 7.0);
    CHECK(m.data.size() == m.numel());
    CHECK(m.all_finite());
    m.data[5] = std::numeric_limits<double>::quiet_NaN();
    CHECK(!m.all_finite());
}

TEST_CASE("tensor mismatched init throws") {
    CHECK_THROWS_AS(Tensor::matrix(2, 2, {1.0, 2.0}), vaeac::ShapeError);
}

TEST_CASE("same_shape compares shapes not data") {
    Tensor a = Tensor::zeros({2, 2});
    Tensor b = Tensor::full({2, 2}, 1.0);
    Tensor c = Tensor::zeros({4});
    CHECK(a.same_shape(b));
    CHECK(!a.same_shape(c));
}
