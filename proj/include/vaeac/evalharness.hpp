#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vaeac/data.hpp"
#include "vaeac/masks.hpp"

namespace vaeac {

// One test row under multiple imputation: n completions in original units,
// their combined point imputation, the uncorrupted row, and which cells had
// been hidden from the imputer.
struct ImputedRow {
    std::vector<std::vector<double>> completions;
    std::vector<double> combined;
    std::vector<double> truth;
    Mask dropped;
};

// Mean for real features, most frequent value for categorical ones (ties
// resolved toward the lowest label index).
std::vector<double> combine_imputations(const FeatureSchema& schema,
                                        const std::vector<std::vector<double>>& samples);

// Draws n completions of `corrupted` where `unobserved` flags the cells to
// generate; must return full rows in original units, observed cells verbatim.
using RowSampler = std::function<std::vector<std::vector<double>>(
    const std::vector<double>& corrupted, const Mask& unobserved, std::size_t n, Rng& rng)>;

// Runs the sampler over every corrupted row (unobserved = its missing cells)
// and packages completions, combination, and ground truth for the metrics.
std::vector<ImputedRow> impute_rows(const FeatureSchema& schema, const RowSampler& sampler,
                                    const std::vector<std::vector<double>>& corrupted,
                                    const std::vector<std::vector<double>>& truth,
                                    std::size_t n, Rng& rng);

// Classical single-imputation baseline: per-feature mean (reals) or most
// frequent value (categoricals) over the observed cells of `stats_rows`
// (typically the train split); the two-split overload reads them from
// `corrupted` itself.
std::vector<ImputedRow> mean_impute_rows(const FeatureSchema& schema,
                                         const std::vector<std::vector<double>>& corrupted,
                                         const std::vector<std::vector<double>>& truth,
                                         const std::vector<std::vector<double>>& stats_rows);
std::vector<ImputedRow> mean_impute_rows(const FeatureSchema& schema,
                                         const std::vector<std::vector<double>>& corrupted,
                                         const std::vector<std::vector<double>>& truth);

// Mean over real features of (RMSE at dropped cells) / (std of the feature's
// ground-truth column). `exclude` drops one column (the downstream target)
// from the average. Errors when no real feature has a scored cell.
double nrmse(const FeatureSchema& schema, const std::vector<ImputedRow>& rows,
             std::optional<std::size_t> exclude = std::nullopt);

// Mean over categorical features of the fraction of dropped cells imputed
// with the wrong label. Same exclusion and error rules as nrmse.
double pfc(const FeatureSchema& schema, const std::vector<ImputedRow>& rows,
           std::optional<std::size_t> exclude = std::nullopt);

// 1 - SS_res/SS_tot, with SS_tot about the mean of `truth`.
double r2_score(const std::vector<double>& truth, const std::vector<double>& pred);

// Trains a predictor of the target column on the imputed train completions
// (each completion is one training example) and scores combined per-row
// predictions on the imputed test rows: closed-form ridge regression
// (lambda = 1e-6) scored by R2 for a real target, gradient-trained softmax
// regression scored by accuracy for a categorical one. Imputed target values
// are never fed to the predictor as inputs.
double downstream_eval(const FeatureSchema& schema, std::size_t target,
                       const std::vector<ImputedRow>& train,
                       const std::vector<ImputedRow>& test);

// Pixel-independent baseline for binary images: Laplace-smoothed per-pixel
// rates (ones+1)/(N+2) from the train set; returns the mean over test pairs
// of the summed negative log-likelihood at each pair's unobserved pixels.
double naive_bayes_nll(const std::vector<std::vector<double>>& train_images,
                       const std::vector<std::pair<std::vector<double>, Mask>>& test_pairs);

// 10*log10(max_value^2 / MSE) over the full image; +infinity when identical.
double psnr(const std::vector<double>& reference, const std::vector<double>& candidate,
            double max_value);
// Max of psnr over the candidates (at least one required).
double best_of_k_psnr(const std::vector<double>& reference,
                      const std::vector<std::vector<double>>& candidates, double max_value);

// One line of the metric report: the per-split values are reduced to their
// mean and sample standard deviation when written.
struct MetricRow {
    std::string metric;
    std::string dataset;
    std::vector<double> split_values;
};

// CSV with header metric,dataset,mean,std.
void write_metric_report(const std::string& path, const std::vector<MetricRow>& rows);

}  // namespace vaeac
