#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "vaeac/tape.hpp"
#include "vaeac/tensor.hpp"

namespace testutil {

// Central finite difference of a scalar-valued function of the given parameter
// tensors, perturbing every entry in turn.  Step and tolerance follow the
// repo-wide gradient-check contract (h=1e-5, rel err < 1e-4).
inline std::vector<vaeac::Tensor> fd_gradients(
    const std::function<double()>& eval, std::vector<vaeac::Tensor*> params, double h = 1e-5) {
    std::vector<vaeac::Tensor> out;
    out.reserve(params.size());
    for (vaeac::Tensor* p : params) {
        vaeac::Tensor g;
        g.shape = p->shape;
        g.data.assign(p->numel(), 0.0);
        for (std::size_t i = 0; i < p->data.size(); ++i) {
            const double keep = p->data[i];
            p->data[i] = keep + h;
            const double up = eval();
            p->data[i] = keep - h;
            const double dn = eval();
            p->data[i] = keep;
            g.data[i] = (up - dn) / (2.0 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
inline double max_rel_err(const vaeac::Tensor& a, const vaeac::Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double denom = std::max({1.0, std::fabs(a.data[i]), std::fabs(b.data[i])});
        worst = std::max(worst, std::fabs(a.data[i] - b.data[i]) / denom);
    }
    return worst;
}

}  // namespace testutil
