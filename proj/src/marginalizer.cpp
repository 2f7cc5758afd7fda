#include "vaeac/marginalizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <utility>

#include "vaeac/adam.hpp"
#include "vaeac/distributions.hpp"

namespace vaeac {

namespace {

// [enc(x) | b] with unobserved cells blanked; identical layout to the
// latent-variable model's conditioning input.
std::vector<double> conditioning_input(const FeatureSchema& schema, const std::vector<double>& x,
                                       const Mask& b, std::size_t enc_width) {
    std::vector<double> in(enc_width + schema.size());
    encode_row(schema, x, b, in.data());
    for (std::size_t i = 0; i < b.size(); ++i) in[enc_width + i] = static_cast<double>(b[i]);
    return in;
}

// Training/validation mask pipeline: base distribution, shared-u thinning,
// missing cells re-forced unobserved.
Mask draw_um_mask(const MaskSpec& spec, const std::vector<double>& row, Rng& rng) {
    Mask b = um_mask_transform(sample_mask(spec, row, rng), rng);
    force_missing_unobserved(b, row);
    return b;
}

std::vector<double> normalize_instance(const FeatureSchema& schema, const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Feature& f = schema.features[i];
        out[i] = (f.kind == FeatureKind::kReal && !is_missing(x[i])) ? normalize_value(f, x[i])
                                                                     : x[i];
    }
    return out;
}

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

UmModel UmModel::make(FeatureSchema schema, TrainConfig cfg, Rng& rng, std::size_t image_h,
                      std::size_t image_w) {
    cfg.validate();
    if (schema.features.empty()) throw ShapeError("marginalizer: empty feature schema");
    UmModel m;
    m.feats = std::move(schema);
    m.cfg = std::move(cfg);
    m.image_h = image_h;
    m.image_w = image_w;
    std::vector<std::size_t> widths{m.enc_width() + m.feats.size()};
    widths.insert(widths.end(), m.cfg.hidden.begin(), m.cfg.hidden.end());
    widths.push_back(m.head_width());
    m.net = Mlp::make(widths, rng);
    return m;
}

std::size_t UmModel::enc_width() const {
    std::size_t w = 0;
    for (const Feature& f : feats.features) {
        w += (f.kind == FeatureKind::kReal) ? 1 : f.n_categories();
    }
    return w;
}

std::vector<Tensor*> UmModel::params() {
    std::vector<Tensor*> out;
    net.collect(out);
    return out;
}

std::vector<const Tensor*> UmModel::params() const {
    std::vector<const Tensor*> out;
    net.collect(out);
    return out;
}

GenerativeOutput UmModel::compute_marginals(const std::vector<double>& x, const Mask& b) const {
    check_mask_contract(feats, x, b, "marginalizer");
    const std::vector<double> in = conditioning_input(feats, x, b, enc_width());
    const Tensor head = mlp_value(net, Tensor::matrix(1, in.size(), in));
    return decode_feature_heads(feats, true, head.data.data());
}

GenerativeOutput um_forward(const MarginalModel& m, const std::vector<double>& x_obs,
                            const Mask& b) {
    return m.marginals(x_obs, b);
}

double um_objective(const MarginalModel& m, const std::vector<double>& x, const Mask& b) {
    return reconstruction_log_prob(m.schema(), m.marginals(x, b), x, b);
}

std::vector<double> um_chain_sample(const MarginalModel& m, const std::vector<double>& x_obs,
                                    const Mask& b, Rng& rng, bool point_mode) {
    const FeatureSchema& schema = m.schema();
    check_mask_contract(schema, x_obs, b, "chain sample");

    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[i] == 1) order.push_back(i);
    }
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<double> x = x_obs;
    Mask cur = b;
    for (std::size_t i : order) {
        const GenerativeOutput g = m.marginals(x, cur);
        const Feature& f = schema.features[i];
        if (f.kind == FeatureKind::kReal) {
            x[i] = g.mean[i] + (point_mode ? 0.0 : g.sigma[i] * normal01(rng));
        } else {
            x[i] = static_cast<double>(sample_categorical_logits(g.logits[i], rng));
        }
        cur[i] = 0;
    }
    return x;
}

double um_chain_log_lik(const MarginalModel& m, const std::vector<double>& x, const Mask& b,
                        const std::vector<std::size_t>& order) {
    const FeatureSchema& schema = m.schema();
    check_mask_contract(schema, x, b, "chain log-lik");

    std::vector<std::size_t> expect;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[i] == 1 && !is_missing(x[i])) expect.push_back(i);
    }
    std::vector<std::size_t> got = order;
    std::sort(got.begin(), got.end());
    if (got != expect) {
        throw ShapeError("chain log-lik: ordering must cover exactly the unobserved cells "
                         "holding values");
    }

    double total = 0.0;
    Mask cur = b;
    for (std::size_t i : order) {
        const GenerativeOutput g = m.marginals(x, cur);
        // Score only cell i; missing cells stay flagged (they carry no value,
        // so the reconstruction sum skips them) to keep the mask well-formed.
        Mask step(b.size(), 0);
        step[i] = 1;
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (is_missing(x[j])) step[j] = 1;
        }
        total += reconstruction_log_prob(schema, g, x, step);
        cur[i] = 0;
    }
    return total;
}

std::vector<std::size_t> random_unobserved_order(const std::vector<double>& x, const Mask& b,
                                                 Rng& rng) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (b[i] == 1 && !is_missing(x[i])) order.push_back(i);
    }
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

UmBatchObjective::UmBatchObjective(const UmModel& model,
                                   const std::vector<std::vector<double>>& rows,
                                   const std::vector<Mask>& masks) {
    if (rows.empty()) throw ShapeError("marginalizer objective: empty batch");
    if (masks.size() != rows.size()) {
        throw ShapeError("marginalizer objective: rows/masks count mismatch");
    }
    const std::size_t n = rows.size();
    const std::size_t e = model.enc_width(), dd = model.feats.size();
    for (std::size_t r = 0; r < n; ++r) {
        check_mask_contract(model.feats, rows[r], masks[r], "marginalizer objective");
    }

    Tensor xin = Tensor::zeros({n, e + dd});
    for (std::size_t r = 0; r < n; ++r) {
        const std::vector<double> in = conditioning_input(model.feats, rows[r], masks[r], e);
        std::copy(in.begin(), in.end(), xin.data.begin() + r * (e + dd));
    }

    BoundMlp net = bind_mlp(tape_, model.net);
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        param_nodes_.push_back(net.weights[l]);
        param_nodes_.push_back(net.biases[l]);
    }

    Node head = net.forward(tape_, tape_.constant(std::move(xin)));
    Node recon = reconstruction_rows(tape_, head, model.feats, true, rows, masks);
    loss_ = tape_.scale(tape_.mean(recon), -1.0);
    if (!std::isfinite(tape_.value(loss_)[0])) {
        throw NumericError("marginalizer objective: non-finite value");
    }
}

double UmBatchObjective::value() const { return -tape_.value(loss_)[0]; }

void UmBatchObjective::backward() { tape_.backward(loss_); }

const Tensor& UmBatchObjective::grad(std::size_t param_index) const {
    if (param_index >= param_nodes_.size()) {
        throw ShapeError("marginalizer objective: bad parameter index");
    }
    return tape_.grad(param_nodes_[param_index]);
}

UmTrainResult um_train(const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    const std::size_t n = data.n_rows();
    if (n < 2) throw ConfigError("marginalizer train: need at least 2 rows");
    for (const Feature& f : data.schema.features) {
        if (f.kind == FeatureKind::kReal && !f.normalized) {
            throw ConfigError("marginalizer train: real feature '" + f.name +
                              "' must be normalized before training");
        }
    }

    Rng init_rng = make_rng(cfg.seed, "init");
    Rng split_rng = make_rng(cfg.seed, "split");
    Rng valmask_rng = make_rng(cfg.seed, "val-mask");
    Rng mask_rng = make_rng(cfg.seed, "mask");
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle");

    UmModel model = UmModel::make(data.schema, cfg, init_rng, data.image_h, data.image_w);
    MaskSpec mspec = MaskSpec::parse(cfg.mask_spec);
    mspec.h = data.image_h;
    mspec.w = data.image_w;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), split_rng);
    std::size_t n_val =
        static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);

    std::vector<std::size_t> val_idx(order.begin(), order.begin() + n_val);
    std::vector<std::size_t> train_idx(order.begin() + n_val, order.end());
    std::vector<std::vector<double>> val_rows;
    std::vector<Mask> val_masks;
    val_rows.reserve(n_val);
    val_masks.reserve(n_val);
    for (std::size_t i : val_idx) {
        val_rows.push_back(data.rows[i]);
        val_masks.push_back(draw_um_mask(mspec, data.rows[i], valmask_rng));
    }

    std::vector<Tensor*> params = model.params();
    AdamState opt = AdamState::init(std::as_const(model).params(), AdamConfig{.lr = cfg.lr});

    UmTrainResult result;
    result.best_val_objective = -std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_params;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
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
                masks.push_back(draw_um_mask(mspec, row, mask_rng));
            }
            UmBatchObjective objective(model, rows, masks);
            objective.backward();
            std::vector<const Tensor*> grads;
            grads.reserve(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(&objective.grad(i));
            adam_step(params, grads, opt);
            obj_sum += objective.value();
            ++n_batches;
        }
        result.epoch_objective.push_back(obj_sum / static_cast<double>(n_batches));

        const double val_obj = UmBatchObjective(model, val_rows, val_masks).value();
        if (!std::isfinite(val_obj)) {
            throw NumericError("marginalizer train: validation objective is not finite");
        }
        result.epoch_val_objective.push_back(val_obj);
        if (val_obj > result.best_val_objective) {
            result.best_val_objective = val_obj;
            result.best_epoch = epoch;
            best_params.clear();
            for (const Tensor* t : params) best_params.push_back(*t);
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best_params[i];
    result.model = std::move(model);
    return result;
}

std::vector<std::vector<double>> um_conditional_sample(const UmModel& m,
                                                       const std::vector<double>& x_obs,
                                                       const Mask& b, std::size_t n, Rng& rng,
                                                       bool point_mode) {
    if (b.size() != m.feats.size()) throw ShapeError("sample: mask width mismatch");
    Mask bu = b;
    force_missing_unobserved(bu, x_obs);
    const std::vector<double> xn = normalize_instance(m.feats, x_obs);

    std::vector<std::vector<double>> out;
    out.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
        const std::vector<double> comp = um_chain_sample(m, xn, bu, rng, point_mode);
        std::vector<double> row(comp.size());
        for (std::size_t i = 0; i < comp.size(); ++i) {
            const Feature& f = m.feats.features[i];
            if (bu[i] == 0) {
                row[i] = x_obs[i];
            } else if (f.kind == FeatureKind::kReal) {
                row[i] = denormalize_value(f, comp[i]);
            } else {
                row[i] = comp[i];
            }
        }
        out.push_back(std::move(row));
    }
    return out;
}

double um_log_lik(const UmModel& m, const std::vector<double>& x, const Mask& b, Rng& rng) {
    const std::vector<double> xn = normalize_instance(m.feats, x);
    const std::vector<std::size_t> order = random_unobserved_order(xn, b, rng);
    return um_chain_log_lik(m, xn, b, order) - normalization_adjustment(m.feats, x, b);
}

}  // namespace vaeac
