#include "vaeac/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace vaeac {

namespace {
constexpr double kLogTwoPi = 1.8378770664093453;
}

void GaussianParams::validate(const char* who) const {
    if (mu.size() != sigma.size()) {
        throw ShapeError(std::string(who) + ": mu/sigma length mismatch");
    }
    for (double s : sigma) {
        if (!(s > 0.0)) throw NumericError(std::string(who) + ": sigma must be positive");
    }
}

double gaussian_log_prob(double x, double mu, double sigma) {
    if (!(sigma > 0.0)) throw NumericError("gaussian_log_prob: sigma must be positive");
    const double z = (x - mu) / sigma;
    return -0.5 * (kLogTwoPi + z * z) - std::log(sigma);
}

double gaussian_kl(double mu_q, double sigma_q, double mu_p, double sigma_p) {
    if (!(sigma_q > 0.0) || !(sigma_p > 0.0)) {
        throw NumericError("gaussian_kl: sigmas must be positive");
    }
    const double vr = (sigma_q * sigma_q) / (sigma_p * sigma_p);
    const double dm = mu_q - mu_p;
    return 0.5 * (vr + dm * dm / (sigma_p * sigma_p) - 1.0) - std::log(sigma_q / sigma_p);
}

double reparam_sample(double mu, double sigma, double eps) { return mu + sigma * eps; }

double gaussian_log_prob(const std::vector<double>& x, const GaussianParams& p) {
    p.validate("gaussian_log_prob");
    if (x.size() != p.mu.size()) throw ShapeError("gaussian_log_prob: x/params length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += gaussian_log_prob(x[i], p.mu[i], p.sigma[i]);
    return acc;
}

double gaussian_kl(const GaussianParams& q, const GaussianParams& p) {
    q.validate("gaussian_kl(q)");
    p.validate("gaussian_kl(p)");
    if (q.mu.size() != p.mu.size()) throw ShapeError("gaussian_kl: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < q.mu.size(); ++i) {
        acc += gaussian_kl(q.mu[i], q.sigma[i], p.mu[i], p.sigma[i]);
    }
    return acc;
}

std::vector<double> reparam_sample(const GaussianParams& p, const std::vector<double>& eps) {
    p.validate("reparam_sample");
    if (eps.size() != p.mu.size()) throw ShapeError("reparam_sample: eps length mismatch");
    std::vector<double> z(eps.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = p.mu[i] + eps[i] * p.sigma[i];
    return z;
}

double categorical_log_prob(const std::vector<double>& logits, std::size_t k) {
    if (logits.empty()) throw ShapeError("categorical_log_prob: empty logit vector");
    if (k >= logits.size()) throw ShapeError("categorical_log_prob: class index out of range");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - mx);
    return (logits[k] - mx) - std::log(denom);
}

double bernoulli_log_prob(double p, bool hit) {
    const double q = std::clamp(p, 1e-7, 1.0 - 1e-7);
    return hit ? std::log(q) : std::log1p(-q);
}

std::size_t sample_categorical_logits(const std::vector<double>& logits, Rng& rng) {
    if (logits.empty()) throw ShapeError("sample_categorical: empty logit vector");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) total += p[k] = std::exp(logits[k] - mx);
    double u = uniform01(rng) * total;
    for (std::size_t k = 0; k + 1 < p.size(); ++k) {
        u -= p[k];
        if (u <= 0.0) return k;
    }
    return p.size() - 1;
}

double log_mean_exp(const std::vector<double>& v) {
    if (v.empty()) throw ShapeError("log_mean_exp: empty input");
    const double mx = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(mx)) {
        // All -inf stays -inf; a stray +inf/NaN propagates as-is.
        return mx;
    }
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s / static_cast<double>(v.size()));
}

}  // namespace vaeac
