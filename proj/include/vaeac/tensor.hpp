#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "vaeac/common.hpp"

namespace vaeac {

// Dense row-major tensor of doubles, rank 1 or 2.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::initializer_list<std::size_t> s, std::vector<double> d)
        : shape(s), data(std::move(d)) {
        if (numel_of(shape) != data.size()) {
            throw ShapeError("tensor: shape/data size mismatch");
        }
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::initializer_list<std::size_t> s) {
        return full(s, 0.0);
    }

    static Tensor full(std::initializer_list<std::size_t> s, double v) {
        Tensor t;
        t.shape = s;
        t.data.assign(numel_of(t.shape), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor row_vector(std::vector<double> d) {
        Tensor t;
        t.shape = {d.size()};
        t.data = std::move(d);
        return t;
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> d) {
        Tensor t;
        t.shape = {rows, cols};
        t.data = std::move(d);
        if (t.data.size() != rows * cols) {
            throw ShapeError("tensor: matrix data size mismatch");
        }
        return t;
    }

    std::size_t numel() const { return numel_of(shape); }
    std::size_t rank() const { return shape.size(); }

    // Rows/cols with rank-1 tensors treated as a single row.
    std::size_t rows() const { return rank() == 2 ? shape[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape[1] : (shape.empty() ? 0 : shape[0]); }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << ",";
            os << shape[i];
        }
        os << "]";
        return os.str();
    }
};

}  // namespace vaeac
