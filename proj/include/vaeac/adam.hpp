#pragma once

#include <cstdint>
#include <vector>

#include "vaeac/tensor.hpp"

namespace vaeac {

struct AdamConfig {
    double lr{1e-3};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
};

// Per-parameter-group first/second moment accumulators plus shared step count.
struct AdamState {
    std::uint64_t t{0};
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    AdamConfig cfg;

    static AdamState init(const std::vector<const Tensor*>& params, AdamConfig cfg);
};

// One bias-corrected Adam descent step over all parameter groups.
// Throws NumericError if any gradient entry is non-finite.
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state);

}  // namespace vaeac
