#include "vaeac/evalharness.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace vaeac {

namespace {

bool is_binary(double v) { return v == 0.0 || v == 1.0; }

double column_std(const std::vector<ImputedRow>& rows, std::size_t j) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const ImputedRow& r : rows) {
        if (is_missing(r.truth[j])) continue;
        sum += r.truth[j];
        ++n;
    }
    if (n == 0) return 0.0;
    const double mean = sum / double(n);
    double acc = 0.0;
    for (const ImputedRow& r : rows) {
        if (is_missing(r.truth[j])) continue;
        acc += (r.truth[j] - mean) * (r.truth[j] - mean);
    }
    return std::sqrt(acc / double(n));
}

// Shared skeleton of nrmse and pfc: average a per-feature error over the
// features of one kind that have at least one scoreable dropped cell.
double per_feature_error(const FeatureSchema& schema, const std::vector<ImputedRow>& rows,
                         std::optional<std::size_t> exclude, FeatureKind kind, const char* name) {
    double total = 0.0;
    std::size_t included = 0;
    for (std::size_t j = 0; j < schema.size(); ++j) {
        if (schema.features[j].kind != kind) continue;
        if (exclude && *exclude == j) continue;
        double err = 0.0;
        std::size_t cells = 0;
        for (const ImputedRow& r : rows) {
            if (r.dropped[j] == 0 || is_missing(r.truth[j])) continue;
            if (kind == FeatureKind::kReal) {
                const double d = r.combined[j] - r.truth[j];
                err += d * d;
            } else {
                err += r.combined[j] != r.truth[j] ? 1.0 : 0.0;
            }
            ++cells;
        }
        if (cells == 0) continue;
        if (kind == FeatureKind::kReal) {
            const double sd = column_std(rows, j);
            if (sd <= 0.0) {
                throw ShapeError(std::string(name) + ": feature '" + schema.features[j].name +
                                 "' is constant in the ground truth");
            }
            total += std::sqrt(err / double(cells)) / sd;
        } else {
            total += err / double(cells);
        }
        ++included;
    }
    if (included == 0) {
        throw ShapeError(std::string(name) + ": no dropped cells to score");
    }
    return total / double(included);
}

// Width of the one-hot predictor encoding with the target column removed.
std::size_t predictor_width(const FeatureSchema& schema, std::size_t target) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < schema.size(); ++j) {
        if (j == target) continue;
        w += schema.features[j].kind == FeatureKind::kReal ? 1 : schema.features[j].n_categories();
    }
    return w;
}

void encode_predictor_row(const FeatureSchema& schema, std::size_t target,
                          const std::vector<double>& row, double* out) {
    std::size_t at = 0;
    for (std::size_t j = 0; j < schema.size(); ++j) {
        if (j == target) continue;
        const Feature& f = schema.features[j];
        if (f.kind == FeatureKind::kReal) {
            out[at++] = row[j];
        } else {
            for (std::size_t k = 0; k < f.n_categories(); ++k) {
                out[at++] = double(k) == row[j] ? 1.0 : 0.0;
            }
        }
    }
}

std::size_t mode_class(const std::vector<std::size_t>& votes, std::size_t n_classes) {
    std::vector<std::size_t> counts(n_classes, 0);
    for (std::size_t v : votes) ++counts[v];
    std::size_t best = 0;
    for (std::size_t k = 1; k < n_classes; ++k) {
        if (counts[k] > counts[best]) best = k;
    }
    return best;
}

}  // namespace

std::vector<double> combine_imputations(const FeatureSchema& schema,
                                        const std::vector<std::vector<double>>& samples) {
    if (samples.empty()) throw ShapeError("combine: need at least one completion");
    for (const auto& s : samples) {
        if (s.size() != schema.size()) throw ShapeError("combine: completion width mismatch");
    }
    std::vector<double> out(schema.size(), 0.0);
    for (std::size_t j = 0; j < schema.size(); ++j) {
        const Feature& f = schema.features[j];
        if (f.kind == FeatureKind::kReal) {
            double acc = 0.0;
            for (const auto& s : samples) acc += s[j];
            out[j] = acc / double(samples.size());
        } else {
            std::vector<std::size_t> counts(f.n_categories(), 0);
            for (const auto& s : samples) {
                const double v = s[j];
                if (v < 0.0 || v >= double(f.n_categories()) || v != std::floor(v)) {
                    throw ShapeError("combine: completion holds a non-label value for '" +
                                     f.name + "'");
                }
                ++counts[static_cast<std::size_t>(v)];
            }
            std::size_t best = 0;
            for (std::size_t k = 1; k < counts.size(); ++k) {
                if (counts[k] > counts[best]) best = k;  // ties keep the lowest index
            }
            out[j] = double(best);
        }
    }
    return out;
}

std::vector<ImputedRow> impute_rows(const FeatureSchema& schema, const RowSampler& sampler,
                                    const std::vector<std::vector<double>>& corrupted,
                                    const std::vector<std::vector<double>>& truth,
                                    std::size_t n, Rng& rng) {
    if (corrupted.size() != truth.size()) {
        throw ShapeError("impute: corrupted/truth row counts differ");
    }
    if (n == 0) throw ConfigError("impute: need at least one completion per row");
    std::vector<ImputedRow> out;
    out.reserve(corrupted.size());
    for (std::size_t r = 0; r < corrupted.size(); ++r) {
        ImputedRow row;
        row.truth = truth[r];
        row.dropped = missing_mask(corrupted[r]);
        row.completions = sampler(corrupted[r], row.dropped, n, rng);
        if (row.completions.size() != n) {
            throw ShapeError("impute: sampler returned the wrong number of completions");
        }
        row.combined = combine_imputations(schema, row.completions);
        // Observed cells are known exactly; combining is only for dropped cells.
        for (std::size_t j = 0; j < row.dropped.size(); ++j) {
            if (row.dropped[j] == 0) row.combined[j] = corrupted[r][j];
        }
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<ImputedRow> mean_impute_rows(const FeatureSchema& schema,
                                         const std::vector<std::vector<double>>& corrupted,
                                         const std::vector<std::vector<double>>& truth,
                                         const std::vector<std::vector<double>>& stats_rows) {
    if (corrupted.size() != truth.size()) {
        throw ShapeError("mean impute: corrupted/truth row counts differ");
    }
    const std::size_t d = schema.size();
    std::vector<double> fill(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        const Feature& f = schema.features[j];
        if (f.kind == FeatureKind::kReal) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const auto& row : stats_rows) {
                if (is_missing(row[j])) continue;
                sum += row[j];
                ++n;
            }
            if (n == 0) {
                throw ShapeError("mean impute: feature '" + f.name + "' has no observed cells");
            }
            fill[j] = sum / double(n);
        } else {
            std::vector<std::size_t> counts(f.n_categories(), 0);
            std::size_t n = 0;
            for (const auto& row : stats_rows) {
                if (is_missing(row[j])) continue;
                ++counts[static_cast<std::size_t>(row[j])];
                ++n;
            }
            if (n == 0) {
                throw ShapeError("mean impute: feature '" + f.name + "' has no observed cells");
            }
            std::size_t best = 0;
            for (std::size_t k = 1; k < counts.size(); ++k) {
                if (counts[k] > counts[best]) best = k;
            }
            fill[j] = double(best);
        }
    }
    std::vector<ImputedRow> out;
    out.reserve(corrupted.size());
    for (std::size_t r = 0; r < corrupted.size(); ++r) {
        ImputedRow row;
        row.truth = truth[r];
        row.dropped = missing_mask(corrupted[r]);
        std::vector<double> filled = corrupted[r];
        for (std::size_t j = 0; j < d; ++j) {
            if (row.dropped[j] == 1) filled[j] = fill[j];
        }
        row.completions = {filled};
        row.combined = std::move(filled);
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<ImputedRow> mean_impute_rows(const FeatureSchema& schema,
                                         const std::vector<std::vector<double>>& corrupted,
                                         const std::vector<std::vector<double>>& truth) {
    return mean_impute_rows(schema, corrupted, truth, corrupted);
}

double nrmse(const FeatureSchema& schema, const std::vector<ImputedRow>& rows,
             std::optional<std::size_t> exclude) {
    return per_feature_error(schema, rows, exclude, FeatureKind::kReal, "nrmse");
}

double pfc(const FeatureSchema& schema, const std::vector<ImputedRow>& rows,
           std::optional<std::size_t> exclude) {
    return per_feature_error(schema, rows, exclude, FeatureKind::kCategorical, "pfc");
}

double r2_score(const std::vector<double>& truth, const std::vector<double>& pred) {
    if (truth.size() != pred.size() || truth.empty()) {
        throw ShapeError("r2: prediction/truth size mismatch");
    }
    double mean = 0.0;
    for (double v : truth) mean += v;
    mean /= double(truth.size());
    double ss_tot = 0.0, ss_res = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
        ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
    }
    if (ss_tot == 0.0) throw ShapeError("r2: degenerate target (constant truth)");
    return 1.0 - ss_res / ss_tot;
}

double downstream_eval(const FeatureSchema& schema, std::size_t target,
                       const std::vector<ImputedRow>& train,
                       const std::vector<ImputedRow>& test) {
    if (target >= schema.size()) throw ConfigError("downstream: target index out of range");
    if (train.empty() || test.empty()) throw ShapeError("downstream: empty split");
    const Feature& yf = schema.features[target];
    const std::size_t width = predictor_width(schema, target);

    // Every train completion is one supervised example.
    std::size_t n_train = 0;
    for (const ImputedRow& r : train) n_train += r.completions.size();
    Eigen::MatrixXd x(n_train, width + 1);  // bias column appended
    Eigen::VectorXd y(n_train);
    std::vector<double> enc(width);
    std::size_t at = 0;
    for (const ImputedRow& r : train) {
        for (const auto& c : r.completions) {
            encode_predictor_row(schema, target, c, enc.data());
            for (std::size_t j = 0; j < width; ++j) x(at, j) = enc[j];
            x(at, width) = 1.0;
            y(at) = c[target];
            ++at;
        }
    }

    if (yf.kind == FeatureKind::kReal) {
        const double y_mean = y.mean();
        if ((y.array() - y_mean).abs().maxCoeff() == 0.0) {
            throw ShapeError("downstream: degenerate target (constant train values)");
        }
        const double lambda = 1e-6;
        Eigen::MatrixXd gram = x.transpose() * x;
        gram.diagonal().array() += lambda;
        const Eigen::VectorXd w = gram.ldlt().solve(x.transpose() * y);

        std::vector<double> tmp(width);
        std::vector<double> truth_y, pred_y;
        for (const ImputedRow& r : test) {
            if (is_missing(r.truth[target])) continue;
            double acc = 0.0;
            for (const auto& c : r.completions) {
                encode_predictor_row(schema, target, c, tmp.data());
                double p = w(width);
                for (std::size_t j = 0; j < width; ++j) p += w(j) * tmp[j];
                acc += p;
            }
            truth_y.push_back(r.truth[target]);
            pred_y.push_back(acc / double(r.completions.size()));
        }
        return r2_score(truth_y, pred_y);
    }

    // Softmax regression on standardized inputs, deterministic full-batch
    // Adam from a zero start.
    const std::size_t k = yf.n_categories();
    std::vector<std::size_t> class_count(k, 0);
    for (std::size_t i = 0; i < n_train; ++i) {
        const double v = y(i);
        if (v < 0.0 || v >= double(k) || v != std::floor(v)) {
            throw ShapeError("downstream: train target holds a non-label value");
        }
        ++class_count[static_cast<std::size_t>(v)];
    }
    if (std::count(class_count.begin(), class_count.end(), std::size_t{0}) >= int(k) - 1 ||
        k < 2) {
        throw ShapeError("downstream: degenerate target (single class in train)");
    }

    Eigen::VectorXd mu = x.leftCols(width).colwise().mean();
    Eigen::VectorXd sd(width);
    for (std::size_t j = 0; j < width; ++j) {
        const double var = (x.col(j).array() - mu(j)).square().mean();
        sd(j) = var > 1e-24 ? std::sqrt(var) : 1.0;
        x.col(j) = (x.col(j).array() - mu(j)) / sd(j);
    }

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(width + 1, k);
    Eigen::MatrixXd m = w, v2 = w;
    const double lr = 0.05, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, lambda = 1e-6;
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n_train, k);
    for (std::size_t i = 0; i < n_train; ++i) onehot(i, static_cast<std::size_t>(y(i))) = 1.0;
    for (int t = 1; t <= 400; ++t) {
        Eigen::MatrixXd logits = x * w;
        Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
        Eigen::MatrixXd p = (logits.colwise() - row_max).array().exp();
        p.array().colwise() /= p.rowwise().sum().array();
        Eigen::MatrixXd grad = x.transpose() * (p - onehot) / double(n_train) + lambda * w;
        m = beta1 * m + (1.0 - beta1) * grad;
        v2 = beta2 * v2 + (1.0 - beta2) * grad.array().square().matrix();
        const double bc1 = 1.0 - std::pow(beta1, t), bc2 = 1.0 - std::pow(beta2, t);
        w.array() -= lr * (m.array() / bc1) / ((v2.array() / bc2).sqrt() + eps);
    }

    std::vector<double> tmp(width);
    std::size_t correct = 0, scored = 0;
    for (const ImputedRow& r : test) {
        if (is_missing(r.truth[target])) continue;
        std::vector<std::size_t> votes;
        for (const auto& c : r.completions) {
            encode_predictor_row(schema, target, c, tmp.data());
            std::size_t arg = 0;
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t cls = 0; cls < k; ++cls) {
                double logit = w(width, cls);
                for (std::size_t j = 0; j < width; ++j) {
                    logit += w(j, cls) * (tmp[j] - mu(j)) / sd(j);
                }
                if (logit > best) {
                    best = logit;
                    arg = cls;
                }
            }
            votes.push_back(arg);
        }
        correct += double(mode_class(votes, k)) == r.truth[target] ? 1 : 0;
        ++scored;
    }
    if (scored == 0) throw ShapeError("downstream: no test rows hold the target truth");
    return double(correct) / double(scored);
}

double naive_bayes_nll(const std::vector<std::vector<double>>& train_images,
                       const std::vector<std::pair<std::vector<double>, Mask>>& test_pairs) {
    if (train_images.empty()) throw ShapeError("naive bayes: empty train set");
    if (test_pairs.empty()) throw ShapeError("naive bayes: empty test set");
    const std::size_t d = train_images.front().size();
    std::vector<double> ones(d, 0.0);
    for (const auto& img : train_images) {
        if (img.size() != d) throw ShapeError("naive bayes: train image size mismatch");
        for (std::size_t i = 0; i < d; ++i) {
            if (!is_binary(img[i])) throw ShapeError("naive bayes: pixels must be 0 or 1");
            ones[i] += img[i];
        }
    }
    const double n = double(train_images.size());
    double total = 0.0;
    for (const auto& [img, b] : test_pairs) {
        if (img.size() != d || b.size() != d) {
            throw ShapeError("naive bayes: test pair size mismatch");
        }
        double nll = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            if (b[i] == 0) continue;
            if (!is_binary(img[i])) throw ShapeError("naive bayes: pixels must be 0 or 1");
            const double rate = (ones[i] + 1.0) / (n + 2.0);
            nll -= img[i] == 1.0 ? std::log(rate) : std::log(1.0 - rate);
        }
        total += nll;
    }
    return total / double(test_pairs.size());
}

double psnr(const std::vector<double>& reference, const std::vector<double>& candidate,
            double max_value) {
    if (reference.size() != candidate.size() || reference.empty()) {
        throw ShapeError("psnr: image shapes differ");
    }
    if (max_value <= 0.0) throw ConfigError("psnr: max_value must be positive");
    double mse = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = reference[i] - candidate[i];
        mse += d * d;
    }
    mse /= double(reference.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_value * max_value / mse);
}

double best_of_k_psnr(const std::vector<double>& reference,
                      const std::vector<std::vector<double>>& candidates, double max_value) {
    if (candidates.empty()) throw ShapeError("psnr: need at least one candidate");
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& c : candidates) best = std::max(best, psnr(reference, c, max_value));
    return best;
}

void write_metric_report(const std::string& path, const std::vector<MetricRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open metric report for writing: " + path);
    out << "metric,dataset,mean,std\n";
    char buf[64];
    for (const MetricRow& r : rows) {
        if (r.metric.find(',') != std::string::npos || r.dataset.find(',') != std::string::npos) {
            throw ConfigError("metric report: names must not contain commas");
        }
        if (r.split_values.empty()) throw ShapeError("metric report: row without values");
        double mean = 0.0;
        for (double v : r.split_values) mean += v;
        mean /= double(r.split_values.size());
        double sd = 0.0;
        if (r.split_values.size() > 1) {
            double acc = 0.0;
            for (double v : r.split_values) acc += (v - mean) * (v - mean);
            sd = std::sqrt(acc / double(r.split_values.size() - 1));
        }
        out << r.metric << ',' << r.dataset << ',';
        std::snprintf(buf, sizeof buf, "%.10g", mean);
        out << buf << ',';
        std::snprintf(buf, sizeof buf, "%.10g", sd);
        out << buf << '\n';
    }
    if (!out.good()) throw IoError("failed writing metric report: " + path);
}

}  // namespace vaeac
