#include "vaeac/adam.hpp"

#include <cmath>
#include <string>

namespace vaeac {

AdamState AdamState::init(const std::vector<const Tensor*>& params, AdamConfig cfg) {
    AdamState s;
    s.cfg = cfg;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const Tensor* p : params) {
        Tensor z;
        z.shape = p->shape;
        z.data.assign(p->numel(), 0.0);
        s.m.push_back(z);
        s.v.push_back(std::move(z));
    }
    return s;
}

void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size()) {
        throw ShapeError("adam_step: parameter/gradient/state group counts differ");
    }
    state.t += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        if (!p.same_shape(g)) {
            throw ShapeError("adam_step: group " + std::to_string(k) + " param " + p.shape_str() +
                             " vs grad " + g.shape_str());
        }
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            const double gi = g.data[i];
            if (!std::isfinite(gi)) {
                throw NumericError("adam_step: non-finite gradient in group " + std::to_string(k) +
                                   " at index " + std::to_string(i));
            }
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            const double mhat = m.data[i] / corr1;
            const double vhat = v.data[i] / corr2;
            p.data[i] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
        }
    }
}

}  // namespace vaeac
