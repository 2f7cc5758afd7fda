#pragma once

#include <vector>

#include "vaeac/common.hpp"

namespace vaeac {

// Parameters of a diagonal Gaussian; used for both the prior and proposal heads.
struct GaussianParams {
    std::vector<double> mu;
    std::vector<double> sigma;  // all entries must be > 0

    void validate(const char* who) const;
};

// All log-probs are natural-log.

// Scalar (per-dimension) helpers.
double gaussian_log_prob(double x, double mu, double sigma);
double gaussian_kl(double mu_q, double sigma_q, double mu_p, double sigma_p);
double reparam_sample(double mu, double sigma, double eps);

// Vector forms: sum over dimensions / elementwise.
double gaussian_log_prob(const std::vector<double>& x, const GaussianParams& p);
double gaussian_kl(const GaussianParams& q, const GaussianParams& p);
std::vector<double> reparam_sample(const GaussianParams& p, const std::vector<double>& eps);

// logits: unnormalized scores, one per class; k: observed class index.
// Stabilized with max subtraction before exponentiation.
double categorical_log_prob(const std::vector<double>& logits, std::size_t k);

// p is clamped into [1e-7, 1 - 1e-7] before taking logs.
double bernoulli_log_prob(double p, bool hit);

// Draw a class index from unnormalized scores (max-subtracted softmax).
std::size_t sample_categorical_logits(const std::vector<double>& logits, Rng& rng);

// log(sum_i exp(v_i)) - log(n), stabilized.  Used by multi-sample estimators.
double log_mean_exp(const std::vector<double>& v);

}  // namespace vaeac
