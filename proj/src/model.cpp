#include "vaeac/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

namespace vaeac {

namespace {

constexpr double kHalfLogTwoPi = 0.9189385332046727;
constexpr double kSigmaFloor = 1e-3;

using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

double stable_softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

std::size_t categorical_index(const Feature& f, double v, std::size_t feature, const char* who) {
    double r = std::round(v);
    if (!std::isfinite(v) || std::abs(v - r) > 1e-9 || r < 0.0 ||
        r >= static_cast<double>(f.n_categories())) {
        std::ostringstream os;
        os << who << ": feature " << feature << " (" << f.name << ") has invalid category value "
           << v << " (expected integer in [0," << f.n_categories() << "))";
        throw ShapeError(os.str());
    }
    return static_cast<std::size_t>(r);
}

// [enc(x) | b] with unobserved cells blanked: what the prior and the
// generative skip block condition on.
std::vector<double> build_prior_input(const FeatureSchema& schema, const std::vector<double>& x,
                                      const Mask& b, std::size_t enc_width) {
    std::vector<double> in(enc_width + schema.size());
    encode_row(schema, x, b, in.data());
    for (std::size_t i = 0; i < b.size(); ++i) in[enc_width + i] = static_cast<double>(b[i]);
    return in;
}

// [enc(x) | b | m] with only missing cells blanked: the proposal sees the
// full instance plus both masks.
std::vector<double> build_proposal_input(const FeatureSchema& schema, const std::vector<double>& x,
                                         const Mask& b, std::size_t enc_width) {
    const std::size_t D = schema.size();
    Mask none(D, 0);
    std::vector<double> in(enc_width + 2 * D);
    encode_row(schema, x, none, in.data());
    for (std::size_t i = 0; i < D; ++i) {
        in[enc_width + i] = static_cast<double>(b[i]);
        in[enc_width + D + i] = is_missing(x[i]) ? 1.0 : 0.0;
    }
    return in;
}

GaussianParams decode_gaussian(const double* head, std::size_t d) {
    GaussianParams p;
    p.mu.assign(head, head + d);
    p.sigma.resize(d);
    for (std::size_t i = 0; i < d; ++i) p.sigma[i] = stable_softplus(head[d + i]) + kSigmaFloor;
    return p;
}

GenerativeOutput decode_generative_row(const VaeacModel& m, const double* head) {
    return decode_feature_heads(m.schema, m.cfg.learn_sigma, head);
}

// Decoder input for a batch of latent codes sharing one conditioning pair.
Tensor generative_input(const VaeacModel& m, const Tensor& z, const std::vector<double>& x,
                        const Mask& b) {
    const std::size_t n = z.rows(), d = m.cfg.latent_dim;
    if (z.cols() != d) throw ShapeError("generative: latent width mismatch");
    if (!m.cfg.use_skip) return z;
    const std::vector<double> skip = build_prior_input(m.schema, x, b, m.enc_width());
    Tensor in = Tensor::zeros({n, d + skip.size()});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) in.at(r, c) = z.at(r, c);
        for (std::size_t c = 0; c < skip.size(); ++c) in.at(r, d + c) = skip[c];
    }
    return in;
}

Tensor draw_normals(std::size_t n, std::size_t d, Rng& rng) {
    Tensor t = Tensor::zeros({n, d});
    for (double& v : t.data) v = normal01(rng);
    return t;
}

// Normalize a raw instance through the schema stats; missing cells stay NaN.
std::vector<double> normalize_instance(const FeatureSchema& schema, const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Feature& f = schema.features[i];
        out[i] = (f.kind == FeatureKind::kReal && !is_missing(x[i])) ? normalize_value(f, x[i])
                                                                     : x[i];
    }
    return out;
}

// log-density Jacobian of the normalization map over the evaluated cells.
double normalization_adjustment(const FeatureSchema& schema, const std::vector<double>& x,
                                const Mask& b) {
    double adj = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Feature& f = schema.features[i];
        if (f.kind == FeatureKind::kReal && b[i] == 1 && !is_missing(x[i])) adj += std::log(f.std);
    }
    return adj;
}

}  // namespace

std::size_t feature_head_width(const FeatureSchema& schema, bool sigma_head) {
    std::size_t w = 0;
    for (const Feature& f : schema.features) {
        w += (f.kind == FeatureKind::kReal) ? (sigma_head ? 2 : 1) : f.n_categories();
    }
    return w;
}

std::size_t feature_head_offset(const FeatureSchema& schema, bool sigma_head, std::size_t i) {
    if (i >= schema.size()) throw ShapeError("head offset: feature index out of range");
    std::size_t off = 0;
    for (std::size_t j = 0; j < i; ++j) {
        const Feature& f = schema.features[j];
        off += (f.kind == FeatureKind::kReal) ? (sigma_head ? 2 : 1) : f.n_categories();
    }
    return off;
}

GenerativeOutput decode_feature_heads(const FeatureSchema& schema, bool sigma_head,
                                      const double* head) {
    const std::size_t n = schema.size();
    GenerativeOutput out;
    out.mean.assign(n, 0.0);
    out.sigma.assign(n, 1.0);
    out.logits.resize(n);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Feature& f = schema.features[i];
        if (f.kind == FeatureKind::kReal) {
            out.mean[i] = head[off++];
            if (sigma_head) out.sigma[i] = stable_softplus(head[off++]) + kSigmaFloor;
        } else {
            const std::size_t k = f.n_categories();
            out.logits[i].assign(head + off, head + off + k);
            off += k;
        }
    }
    return out;
}

void check_mask_contract(const FeatureSchema& schema, const std::vector<double>& x, const Mask& b,
                         const char* who) {
    if (x.size() != schema.size() || b.size() != schema.size()) {
        std::ostringstream os;
        os << who << ": instance/mask width mismatch (features=" << schema.size()
           << ", x=" << x.size() << ", b=" << b.size() << ")";
        throw ShapeError(os.str());
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[i] > 1) throw ShapeError(std::string(who) + ": mask entries must be 0 or 1");
        if (is_missing(x[i]) && b[i] == 0) {
            std::ostringstream os;
            os << who << ": feature " << i << " is missing but marked observed";
            throw ShapeError(os.str());
        }
    }
}

Tensor mlp_value(const Mlp& m, const Tensor& x) {
    if (x.cols() != m.in_width()) {
        throw ShapeError("mlp: input width " + std::to_string(x.cols()) + " != " +
                         std::to_string(m.in_width()));
    }
    Tensor h = x;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        const Tensor& w = m.weights[l];
        const Tensor& bias = m.biases[l];
        Tensor out = Tensor::zeros({h.rows(), w.shape[1]});
        MatMap(out.data.data(), static_cast<Eigen::Index>(out.rows()),
               static_cast<Eigen::Index>(out.cols())) =
            ConstMatMap(h.data.data(), static_cast<Eigen::Index>(h.rows()),
                        static_cast<Eigen::Index>(h.cols())) *
            ConstMatMap(w.data.data(), static_cast<Eigen::Index>(w.rows()),
                        static_cast<Eigen::Index>(w.cols()));
        for (std::size_t r = 0; r < out.rows(); ++r) {
            for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += bias[c];
        }
        if (l + 1 < m.weights.size()) {
            for (double& v : out.data) v = std::max(v, 0.0);
        }
        h = std::move(out);
    }
    return h;
}

Node reconstruction_rows(Tape& t, Node head, const FeatureSchema& schema, bool sigma_head,
                         const std::vector<std::vector<double>>& rows,
                         const std::vector<Mask>& masks) {
    const std::size_t n = rows.size();
    auto selected = [&](std::size_t r, std::size_t i) {
        return masks[r][i] == 1 && !is_missing(rows[r][i]);
    };
    Node acc{};
    bool first = true;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const Feature& f = schema.features[i];
        const std::size_t off = feature_head_offset(schema, sigma_head, i);
        Node contrib{};
        if (f.kind == FeatureKind::kReal) {
            Tensor target = Tensor::zeros({n, static_cast<std::size_t>(1)});
            Tensor weight = Tensor::zeros({n, static_cast<std::size_t>(1)});
            for (std::size_t r = 0; r < n; ++r) {
                if (selected(r, i)) {
                    target.at(r, 0) = rows[r][i];
                    weight.at(r, 0) = 1.0;
                }
            }
            Node diff =
                t.sub(t.constant(std::move(target)), t.slice_cols(head, off, off + 1));
            Node core;
            if (sigma_head) {
                Node s = t.add_scalar(t.softplus(t.slice_cols(head, off + 1, off + 2)),
                                      kSigmaFloor);
                Node zn = t.div(diff, s);
                core = t.sub(t.add_scalar(t.scale(t.square(zn), -0.5), -kHalfLogTwoPi), t.log(s));
            } else {
                core = t.add_scalar(t.scale(t.square(diff), -0.5), -kHalfLogTwoPi);
            }
            contrib = t.mul(t.constant(std::move(weight)), core);
        } else {
            const std::size_t k = f.n_categories();
            Tensor onehot = Tensor::zeros({n, k});
            for (std::size_t r = 0; r < n; ++r) {
                if (selected(r, i)) {
                    onehot.at(r, categorical_index(f, rows[r][i], i, "reconstruction")) = 1.0;
                }
            }
            contrib = t.mul(t.log_softmax_rows(t.slice_cols(head, off, off + k)),
                            t.constant(std::move(onehot)));
        }
        Node row = t.row_sum(contrib);
        acc = first ? row : t.add(acc, row);
        first = false;
    }
    return acc;
}

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("train: epochs must be >= 1");
    if (batch == 0) throw ConfigError("train: batch must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
    if (latent_dim == 0) throw ConfigError("train: latent_dim must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("train: alpha must lie in [0,1]");
    if (!(sigma_mu > 0.0)) throw ConfigError("train: sigma_mu must be positive");
    if (!(sigma_sigma >= 0.0)) throw ConfigError("train: sigma_sigma must be non-negative");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw ConfigError("train: val_fraction must lie in (0,1)");
    }
    if (is_samples == 0) throw ConfigError("train: is_samples must be >= 1");
    MaskSpec::parse(mask_spec);  // throws ConfigError on bad text
}

Mlp Mlp::make(const std::vector<std::size_t>& widths, Rng& rng) {
    if (widths.size() < 2) throw ShapeError("mlp: need at least input and output widths");
    Mlp m;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
        if (fan_in == 0 || fan_out == 0) throw ShapeError("mlp: zero layer width");
        Tensor w = Tensor::zeros({fan_in, fan_out});
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (double& v : w.data) v = (2.0 * uniform01(rng) - 1.0) * limit;
        m.weights.push_back(std::move(w));
        m.biases.push_back(Tensor::zeros({fan_out}));
    }
    return m;
}

void Mlp::collect(std::vector<Tensor*>& out) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        out.push_back(&weights[l]);
        out.push_back(&biases[l]);
    }
}

void Mlp::collect(std::vector<const Tensor*>& out) const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        out.push_back(&weights[l]);
        out.push_back(&biases[l]);
    }
}

BoundMlp bind_mlp(Tape& t, const Mlp& m) {
    BoundMlp bm;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        bm.weights.push_back(t.leaf(&m.weights[l]));
        bm.biases.push_back(t.leaf(&m.biases[l]));
    }
    return bm;
}

Node BoundMlp::forward(Tape& t, Node x) const {
    Node h = x;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        h = t.add_row(t.matmul(h, weights[l]), biases[l]);
        if (l + 1 < weights.size()) h = t.relu(h);
    }
    return h;
}

VaeacModel VaeacModel::make(FeatureSchema schema, TrainConfig cfg, Rng& rng, std::size_t image_h,
                            std::size_t image_w) {
    cfg.validate();
    if (schema.features.empty()) throw ShapeError("model: empty feature schema");
    VaeacModel m;
    m.schema = std::move(schema);
    m.cfg = std::move(cfg);
    m.image_h = image_h;
    m.image_w = image_w;

    const std::size_t e = m.enc_width(), dd = m.n_features(), d = m.cfg.latent_dim;
    auto widths = [&](std::size_t in, std::size_t out) {
        std::vector<std::size_t> w{in};
        w.insert(w.end(), m.cfg.hidden.begin(), m.cfg.hidden.end());
        w.push_back(out);
        return w;
    };
    // Initialization order is part of the reproducibility contract.
    m.prior = Mlp::make(widths(e + dd, 2 * d), rng);
    m.proposal = Mlp::make(widths(e + 2 * dd, 2 * d), rng);
    m.generative = Mlp::make(widths(m.cfg.use_skip ? d + e + dd : d, m.gen_width()), rng);
    return m;
}

std::size_t VaeacModel::enc_width() const {
    std::size_t w = 0;
    for (const Feature& f : schema.features) {
        w += (f.kind == FeatureKind::kReal) ? 1 : f.n_categories();
    }
    return w;
}

std::size_t VaeacModel::gen_width() const { return feature_head_width(schema, cfg.learn_sigma); }

std::size_t VaeacModel::gen_offset(std::size_t i) const {
    return feature_head_offset(schema, cfg.learn_sigma, i);
}

std::vector<Tensor*> VaeacModel::params() {
    std::vector<Tensor*> out;
    prior.collect(out);
    proposal.collect(out);
    generative.collect(out);
    return out;
}

std::vector<const Tensor*> VaeacModel::params() const {
    std::vector<const Tensor*> out;
    prior.collect(out);
    proposal.collect(out);
    generative.collect(out);
    return out;
}

void encode_row(const FeatureSchema& schema, const std::vector<double>& x, const Mask& zero,
                double* out) {
    if (x.size() != schema.size() || zero.size() != schema.size()) {
        throw ShapeError("encode: instance width mismatch");
    }
    std::size_t off = 0;
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const Feature& f = schema.features[i];
        const bool blank = zero[i] != 0 || is_missing(x[i]);
        if (f.kind == FeatureKind::kReal) {
            out[off++] = blank ? 0.0 : x[i];
        } else {
            const std::size_t k = f.n_categories();
            std::fill(out + off, out + off + k, 0.0);
            if (!blank) out[off + categorical_index(f, x[i], i, "encode")] = 1.0;
            off += k;
        }
    }
}

GaussianParams prior_forward(const VaeacModel& m, const std::vector<double>& x, const Mask& b) {
    check_mask_contract(m.schema, x, b, "prior");
    const std::vector<double> in = build_prior_input(m.schema, x, b, m.enc_width());
    const Tensor head = mlp_value(m.prior, Tensor::matrix(1, in.size(), in));
    GaussianParams p = decode_gaussian(head.data.data(), m.cfg.latent_dim);
    p.validate("prior");
    return p;
}

GaussianParams proposal_forward(const VaeacModel& m, const std::vector<double>& x, const Mask& b) {
    check_mask_contract(m.schema, x, b, "proposal");
    const std::vector<double> in = build_proposal_input(m.schema, x, b, m.enc_width());
    const Tensor head = mlp_value(m.proposal, Tensor::matrix(1, in.size(), in));
    GaussianParams p = decode_gaussian(head.data.data(), m.cfg.latent_dim);
    p.validate("proposal");
    return p;
}

GenerativeOutput generative_forward(const VaeacModel& m, const std::vector<double>& z,
                                    const std::vector<double>& x, const Mask& b) {
    check_mask_contract(m.schema, x, b, "generative");
    if (z.size() != m.cfg.latent_dim) throw ShapeError("generative: latent width mismatch");
    Tensor zt = Tensor::matrix(1, z.size(), z);
    const Tensor head = mlp_value(m.generative, generative_input(m, zt, x, b));
    return decode_generative_row(m, head.data.data());
}

double reconstruction_log_prob(const FeatureSchema& schema, const GenerativeOutput& out,
                               const std::vector<double>& x, const Mask& b) {
    check_mask_contract(schema, x, b, "reconstruction");
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (b[i] == 0 || is_missing(x[i])) continue;
        const Feature& f = schema.features[i];
        if (f.kind == FeatureKind::kReal) {
            total += gaussian_log_prob(x[i], out.mean[i], out.sigma[i]);
        } else {
            total += categorical_log_prob(out.logits[i],
                                          categorical_index(f, x[i], i, "reconstruction"));
        }
    }
    return total;
}

double reconstruction_log_prob(const VaeacModel& m, const GenerativeOutput& out,
                               const std::vector<double>& x, const Mask& b) {
    return reconstruction_log_prob(m.schema, out, x, b);
}

double prior_regularizer(double mu, double sigma, double sigma_mu, double sigma_sigma) {
    return -mu * mu / (2.0 * sigma_mu * sigma_mu) + sigma_sigma * (std::log(sigma) - sigma);
}

VlbParts vaeac_vlb(const VaeacModel& m, const std::vector<double>& x, const Mask& b,
                   const std::vector<double>& eps) {
    if (eps.size() != m.cfg.latent_dim) throw ShapeError("vlb: noise width mismatch");
    const GaussianParams q = proposal_forward(m, x, b);
    const GaussianParams p = prior_forward(m, x, b);
    const std::vector<double> z = reparam_sample(q, eps);
    VlbParts parts;
    parts.recon = reconstruction_log_prob(m, generative_forward(m, z, x, b), x, b);
    parts.kl = gaussian_kl(q, p);
    for (std::size_t i = 0; i < p.mu.size(); ++i) {
        parts.reg += prior_regularizer(p.mu[i], p.sigma[i], m.cfg.sigma_mu, m.cfg.sigma_sigma);
    }
    return parts;
}

double gsnn_objective(const VaeacModel& m, const std::vector<double>& x, const Mask& b,
                      const std::vector<double>& eps) {
    if (eps.size() != m.cfg.latent_dim) throw ShapeError("gsnn: noise width mismatch");
    const GaussianParams p = prior_forward(m, x, b);
    const std::vector<double> z = reparam_sample(p, eps);
    return reconstruction_log_prob(m, generative_forward(m, z, x, b), x, b);
}

double hybrid_objective(const VaeacModel& m, const std::vector<double>& x, const Mask& b,
                        double alpha, Rng& rng) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("hybrid: alpha must lie in [0,1]");
    const std::size_t d = m.cfg.latent_dim;
    double value = 0.0;
    if (alpha > 0.0) {  // variational-bound branch draws its noise first
        std::vector<double> eps(d);
        for (double& v : eps) v = normal01(rng);
        value += alpha * vaeac_vlb(m, x, b, eps).total();
    }
    if (alpha < 1.0) {
        std::vector<double> eps(d);
        for (double& v : eps) v = normal01(rng);
        value += (1.0 - alpha) * gsnn_objective(m, x, b, eps);
    }
    return value;
}

BatchObjective::BatchObjective(const VaeacModel& model, const std::vector<std::vector<double>>& rows,
                               const std::vector<Mask>& masks, double alpha, const Tensor& eps_vlb,
                               const Tensor& eps_gsnn, double kl_scale) {
    if (rows.empty()) throw ShapeError("objective: empty batch");
    if (masks.size() != rows.size()) throw ShapeError("objective: rows/masks count mismatch");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("objective: alpha must lie in [0,1]");
    if (!(kl_scale >= 0.0) || !std::isfinite(kl_scale)) {
        throw ConfigError("objective: kl_scale must be finite and >= 0");
    }
    const std::size_t n = rows.size();
    const std::size_t dd = model.n_features();
    const std::size_t e = model.enc_width();
    const std::size_t d = model.cfg.latent_dim;
    const bool use_vlb = alpha > 0.0;
    const bool use_gsnn = alpha < 1.0;
    for (std::size_t r = 0; r < n; ++r) check_mask_contract(model.schema, rows[r], masks[r], "objective");
    if (use_vlb && (eps_vlb.rank() != 2 || eps_vlb.rows() != n || eps_vlb.cols() != d)) {
        throw ShapeError("objective: eps_vlb must be [batch, latent_dim]");
    }
    if (use_gsnn && (eps_gsnn.rank() != 2 || eps_gsnn.rows() != n || eps_gsnn.cols() != d)) {
        throw ShapeError("objective: eps_gsnn must be [batch, latent_dim]");
    }

    // Conditioning inputs as constants.
    Tensor xp = Tensor::zeros({n, e + dd});
    Tensor xq = Tensor::zeros({n, e + 2 * dd});
    for (std::size_t r = 0; r < n; ++r) {
        const std::vector<double> pin = build_prior_input(model.schema, rows[r], masks[r], e);
        std::copy(pin.begin(), pin.end(), xp.data.begin() + r * (e + dd));
        if (use_vlb) {
            const std::vector<double> qin =
                build_proposal_input(model.schema, rows[r], masks[r], e);
            std::copy(qin.begin(), qin.end(), xq.data.begin() + r * (e + 2 * dd));
        }
    }

    Node xp_node = tape_.constant(std::move(xp));
    BoundMlp prior = bind_mlp(tape_, model.prior);
    BoundMlp proposal = bind_mlp(tape_, model.proposal);
    BoundMlp generative = bind_mlp(tape_, model.generative);
    // Leaf order must mirror VaeacModel::params().
    for (const BoundMlp* bm : {&prior, &proposal, &generative}) {
        for (std::size_t l = 0; l < bm->weights.size(); ++l) {
            param_nodes_.push_back(bm->weights[l]);
            param_nodes_.push_back(bm->biases[l]);
        }
    }

    Node prior_out = prior.forward(tape_, xp_node);
    Node mu_p = tape_.slice_cols(prior_out, 0, d);
    Node sig_p =
        tape_.add_scalar(tape_.softplus(tape_.slice_cols(prior_out, d, 2 * d)), kSigmaFloor);
    Node log_sp = tape_.log(sig_p);

    // Prior-head regularizer, per instance.
    Node reg_el = tape_.add(
        tape_.scale(tape_.square(mu_p), -1.0 / (2.0 * model.cfg.sigma_mu * model.cfg.sigma_mu)),
        tape_.scale(tape_.sub(log_sp, sig_p), model.cfg.sigma_sigma));
    Node reg_row = tape_.row_sum(reg_el);

    // A slot only contributes where its feature is unobserved-and-present, so
    // gradients at every other output are exactly zero and missing cells never
    // touch the graph.
    auto recon_rows = [&](Node gen_out) {
        return reconstruction_rows(tape_, gen_out, model.schema, model.cfg.learn_sigma, rows,
                                   masks);
    };

    Node objective_row{};
    Node recon_v{}, kl_row{}, recon_g{};
    if (use_vlb) {
        Node prop_out = proposal.forward(tape_, tape_.constant(std::move(xq)));
        Node mu_q = tape_.slice_cols(prop_out, 0, d);
        Node sig_q =
            tape_.add_scalar(tape_.softplus(tape_.slice_cols(prop_out, d, 2 * d)), kSigmaFloor);
        Node z = tape_.add(mu_q, tape_.mul(tape_.constant(eps_vlb), sig_q));
        Node gen_out = generative.forward(
            tape_, model.cfg.use_skip ? tape_.concat_cols(z, xp_node) : z);
        recon_v = recon_rows(gen_out);

        Node log_sq = tape_.log(sig_q);
        Node num = tape_.add(tape_.square(sig_q), tape_.square(tape_.sub(mu_q, mu_p)));
        Node den = tape_.scale(tape_.square(sig_p), 2.0);
        Node kl_el = tape_.add_scalar(
            tape_.add(tape_.sub(log_sp, log_sq), tape_.div(num, den)), -0.5);
        kl_row = tape_.row_sum(kl_el);
        Node kl_term = kl_scale == 1.0 ? kl_row : tape_.scale(kl_row, kl_scale);
        objective_row = tape_.add(tape_.sub(recon_v, kl_term), reg_row);
    }
    if (use_gsnn) {
        Node z = tape_.add(mu_p, tape_.mul(tape_.constant(eps_gsnn), sig_p));
        Node gen_out = generative.forward(
            tape_, model.cfg.use_skip ? tape_.concat_cols(z, xp_node) : z);
        recon_g = recon_rows(gen_out);
        objective_row = use_vlb ? tape_.add(tape_.scale(objective_row, alpha),
                                            tape_.scale(recon_g, 1.0 - alpha))
                                : recon_g;
    }

    Node objective = tape_.mean(objective_row);
    loss_ = tape_.scale(objective, -1.0);

    auto mean_of = [&](Node node) {
        const Tensor& t = tape_.value(node);
        return std::accumulate(t.data.begin(), t.data.end(), 0.0) /
               static_cast<double>(t.numel());
    };
    if (use_vlb) {
        parts_.recon = mean_of(recon_v);
        parts_.kl = mean_of(kl_row);
        parts_.reg = mean_of(reg_row);
    } else {
        parts_.recon = mean_of(recon_g);
    }

    const double v = tape_.value(loss_)[0];
    if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "objective: non-finite value (recon=" << parts_.recon << ", kl=" << parts_.kl
           << ", reg=" << parts_.reg << ")";
        throw NumericError(os.str());
    }
}

double BatchObjective::value() const { return -tape_.value(loss_)[0]; }

void BatchObjective::backward() { tape_.backward(loss_); }

const Tensor& BatchObjective::grad(std::size_t param_index) const {
    if (param_index >= param_nodes_.size()) throw ShapeError("objective: bad parameter index");
    return tape_.grad(param_nodes_[param_index]);
}

std::vector<std::vector<double>> conditional_sample(const VaeacModel& m,
                                                    const std::vector<double>& x_obs,
                                                    const Mask& b, std::size_t n, Rng& rng,
                                                    bool point_mode) {
    if (b.size() != m.n_features()) throw ShapeError("sample: mask width mismatch");
    Mask bu = b;
    force_missing_unobserved(bu, x_obs);
    const std::vector<double> xn = normalize_instance(m.schema, x_obs);
    check_mask_contract(m.schema, xn, bu, "sample");

    const GaussianParams p = prior_forward(m, xn, bu);
    const std::size_t d = m.cfg.latent_dim;
    Tensor z = draw_normals(n, d, rng);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) z.at(r, c) = p.mu[c] + p.sigma[c] * z.at(r, c);
    }
    Tensor heads = n == 0 ? Tensor{} : mlp_value(m.generative, generative_input(m, z, xn, bu));

    std::vector<std::vector<double>> out;
    out.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
        const GenerativeOutput g = decode_generative_row(m, heads.data.data() + r * heads.cols());
        std::vector<double> row(m.n_features());
        for (std::size_t i = 0; i < row.size(); ++i) {
            const Feature& f = m.schema.features[i];
            if (bu[i] == 0) {
                row[i] = x_obs[i];
            } else if (f.kind == FeatureKind::kReal) {
                const double v = g.mean[i] + (point_mode ? 0.0 : g.sigma[i] * normal01(rng));
                row[i] = denormalize_value(f, v);
            } else {
                row[i] = static_cast<double>(sample_categorical_logits(g.logits[i], rng));
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

double log_lik_mc_norm(const VaeacModel& m, const std::vector<double>& x_norm, const Mask& b,
                       std::size_t S, Rng& rng) {
    if (S == 0) throw ConfigError("log_lik: need at least one sample");
    check_mask_contract(m.schema, x_norm, b, "log_lik");
    const GaussianParams p = prior_forward(m, x_norm, b);
    const std::size_t d = m.cfg.latent_dim;
    Tensor z = draw_normals(S, d, rng);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t c = 0; c < d; ++c) z.at(s, c) = p.mu[c] + p.sigma[c] * z.at(s, c);
    }
    const Tensor heads = mlp_value(m.generative, generative_input(m, z, x_norm, b));
    std::vector<double> recon(S);
    for (std::size_t s = 0; s < S; ++s) {
        const GenerativeOutput g = decode_generative_row(m, heads.data.data() + s * heads.cols());
        recon[s] = reconstruction_log_prob(m, g, x_norm, b);
    }
    return log_mean_exp(recon);
}

double log_lik_is_norm(const VaeacModel& m, const std::vector<double>& x_norm, const Mask& b,
                       std::size_t S, Rng& rng) {
    if (S == 0) throw ConfigError("log_lik: need at least one sample");
    check_mask_contract(m.schema, x_norm, b, "log_lik");
    const GaussianParams q = proposal_forward(m, x_norm, b);
    const GaussianParams p = prior_forward(m, x_norm, b);
    const std::size_t d = m.cfg.latent_dim;
    Tensor z = draw_normals(S, d, rng);
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t c = 0; c < d; ++c) z.at(s, c) = q.mu[c] + q.sigma[c] * z.at(s, c);
    }
    const Tensor heads = mlp_value(m.generative, generative_input(m, z, x_norm, b));
    std::vector<double> w(S);
    std::vector<double> zrow(d);
    for (std::size_t s = 0; s < S; ++s) {
        const GenerativeOutput g = decode_generative_row(m, heads.data.data() + s * heads.cols());
        std::copy(z.data.begin() + s * d, z.data.begin() + (s + 1) * d, zrow.begin());
        w[s] = reconstruction_log_prob(m, g, x_norm, b) + gaussian_log_prob(zrow, p) -
               gaussian_log_prob(zrow, q);
    }
    return log_mean_exp(w);
}

double log_lik_mc(const VaeacModel& m, const std::vector<double>& x, const Mask& b, std::size_t S,
                  Rng& rng) {
    const std::vector<double> xn = normalize_instance(m.schema, x);
    return log_lik_mc_norm(m, xn, b, S, rng) - normalization_adjustment(m.schema, x, b);
}

double log_lik_is(const VaeacModel& m, const std::vector<double>& x, const Mask& b, std::size_t S,
                  Rng& rng) {
    const std::vector<double> xn = normalize_instance(m.schema, x);
    return log_lik_is_norm(m, xn, b, S, rng) - normalization_adjustment(m.schema, x, b);
}

TrainResult train_vaeac(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    const std::size_t n = data.n_rows();
    if (n < 2) throw ConfigError("train: need at least 2 rows");
    for (const Feature& f : data.schema.features) {
        if (f.kind == FeatureKind::kReal && !f.normalized) {
            throw ConfigError("train: real feature '" + f.name +
                              "' must be normalized before training");
        }
    }

    Rng init_rng = make_rng(cfg.seed, "init");
    Rng split_rng = make_rng(cfg.seed, "split");
    Rng valmask_rng = make_rng(cfg.seed, "val-mask");
    Rng mask_rng = make_rng(cfg.seed, "mask");
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle");
    Rng noise_rng = make_rng(cfg.seed, "noise");

    VaeacModel model = VaeacModel::make(data.schema, cfg, init_rng, data.image_h, data.image_w);
    MaskSpec mspec = MaskSpec::parse(cfg.mask_spec);
    mspec.h = data.image_h;
    mspec.w = data.image_w;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), split_rng);
    std::size_t n_val = static_cast<std::size_t>(
        std::llround(cfg.val_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);

    std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
    std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
    std::vector<Mask> val_masks;
    val_masks.reserve(n_val);
    for (std::size_t i : val_idx) val_masks.push_back(sample_mask(mspec, data.rows[i], valmask_rng));

    std::vector<Tensor*> params = model.params();
    AdamState opt = AdamState::init(std::as_const(model).params(), AdamConfig{.lr = cfg.lr});

    TrainResult result;
    result.best_val_loglik = -std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_params;

    const bool use_vlb = cfg.alpha > 0.0;
    const bool use_gsnn = cfg.alpha < 1.0;
    const std::size_t d = cfg.latent_dim;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
        const double kl_scale =
            cfg.kl_warmup_epochs == 0
                ? 1.0
                : std::min(1.0, static_cast<double>(epoch) /
                                    static_cast<double>(cfg.kl_warmup_epochs));
        double obj_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch) {
            const std::size_t nb = std::min(cfg.batch, train_idx.size() - start);
            std::vector<std::vector<double>> rows;
            std::vector<Mask> masks;
            rows.reserve(nb);
            masks.reserve(nb);
            for (std::size_t j = 0; j < nb; ++j) {
                const std::vector<double>& row = data.rows[train_idx[start + j]];
                rows.push_back(row);
                masks.push_back(sample_mask(mspec, row, mask_rng));
            }
            Tensor ev = use_vlb ? draw_normals(nb, d, noise_rng) : Tensor{};
            Tensor eg = use_gsnn ? draw_normals(nb, d, noise_rng) : Tensor{};

            BatchObjective objective(model, rows, masks, cfg.alpha, ev, eg, kl_scale);
            objective.backward();
            std::vector<const Tensor*> grads;
            grads.reserve(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(&objective.grad(i));
            adam_step(params, grads, opt);

            obj_sum += objective.value();
            ++n_batches;
        }
        result.epoch_objective.push_back(obj_sum / static_cast<double>(n_batches));

        // Same noise stream every epoch, so scores differ only through the
        // parameters.
        Rng val_rng = make_rng(cfg.seed, "val-noise");
        double val_sum = 0.0;
        for (std::size_t j = 0; j < val_idx.size(); ++j) {
            val_sum += log_lik_is_norm(model, data.rows[val_idx[j]], val_masks[j], cfg.is_samples,
                                       val_rng);
        }
        const double val_ll = val_sum / static_cast<double>(val_idx.size());
        if (!std::isfinite(val_ll)) {
            throw NumericError("train: validation log-likelihood is not finite");
        }
        result.epoch_val_loglik.push_back(val_ll);

        if (val_ll > result.best_val_loglik) {
            result.best_val_loglik = val_ll;
            result.best_epoch = epoch;
            best_params.clear();
            for (const Tensor* t : params) best_params.push_back(*t);
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best_params[i];
    result.model = std::move(model);
    return result;
}

}  // namespace vaeac
