// Python bindings for the conditional-generation library: datasets and
// generators, mask distributions, model training, conditional sampling,
// likelihood estimation, checkpoints, and the evaluation metrics.
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vaeac/checkpoint.hpp"
#include "vaeac/data.hpp"
#include "vaeac/evalharness.hpp"
#include "vaeac/marginalizer.hpp"
#include "vaeac/masks.hpp"
#include "vaeac/model.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

PYBIND11_MODULE(_core, m) {
    m.doc() = "Conditional generation of unobserved features: one model of "
              "every conditional, plus mask distributions, estimators, and "
              "evaluation metrics.";

    // Translators run most-recently-registered first: base class before the
    // derived ones, or it would shadow them.
    py::register_exception<vaeac::Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<vaeac::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<vaeac::ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<vaeac::IoError>(m, "IoError", PyExc_IOError);
    py::register_exception<vaeac::NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.attr("MISSING") = std::numeric_limits<double>::quiet_NaN();
    m.def("is_missing", &vaeac::is_missing, "value"_a,
          "True when the cell value is the missing marker (NaN).");

    // ------------------------------------------------------------ rng ----
    py::class_<vaeac::Rng>(m, "Rng",
                           "Deterministic random stream; distinct stream names "
                           "derived from one seed are statistically independent.")
        .def(py::init([](std::uint64_t seed, const std::string& stream) {
                 return vaeac::make_rng(seed, stream);
             }),
             "seed"_a, "stream"_a = "python");

    // ----------------------------------------------------------- data ----
    py::enum_<vaeac::FeatureKind>(m, "FeatureKind")
        .value("REAL", vaeac::FeatureKind::kReal)
        .value("CATEGORICAL", vaeac::FeatureKind::kCategorical);

    py::class_<vaeac::Feature>(m, "Feature")
        .def(py::init())
        .def_readwrite("name", &vaeac::Feature::name)
        .def_readwrite("kind", &vaeac::Feature::kind)
        .def_readwrite("labels", &vaeac::Feature::labels)
        .def_readwrite("mean", &vaeac::Feature::mean)
        .def_readwrite("std", &vaeac::Feature::std)
        .def_readwrite("normalized", &vaeac::Feature::normalized)
        .def_static(
            "real",
            [](const std::string& name) {
                vaeac::Feature f;
                f.name = name;
                return f;
            },
            "name"_a)
        .def_static(
            "categorical",
            [](const std::string& name, const std::vector<std::string>& labels) {
                vaeac::Feature f;
                f.name = name;
                f.kind = vaeac::FeatureKind::kCategorical;
                f.labels = labels;
                return f;
            },
            "name"_a, "labels"_a);

    py::class_<vaeac::FeatureSchema>(m, "FeatureSchema")
        .def(py::init())
        .def(py::init([](std::vector<vaeac::Feature> feats,
                         std::optional<std::size_t> target) {
                 vaeac::FeatureSchema s;
                 s.features = std::move(feats);
                 s.target_index = target;
                 return s;
             }),
             "features"_a, "target_index"_a = std::nullopt)
        .def_readwrite("features", &vaeac::FeatureSchema::features)
        .def_readwrite("target_index", &vaeac::FeatureSchema::target_index)
        .def("__len__", &vaeac::FeatureSchema::size);

    py::class_<vaeac::Dataset>(m, "Dataset",
                               "Rows hold reals as-is and categoricals as label "
                               "indices; NaN marks a missing cell.")
        .def(py::init())
        .def(py::init([](vaeac::FeatureSchema schema,
                         std::vector<std::vector<double>> rows) {
                 vaeac::Dataset d;
                 d.schema = std::move(schema);
                 d.rows = std::move(rows);
                 return d;
             }),
             "schema"_a, "rows"_a)
        .def_readwrite("schema", &vaeac::Dataset::schema)
        .def_readwrite("rows", &vaeac::Dataset::rows)
        .def_readwrite("image_h", &vaeac::Dataset::image_h)
        .def_readwrite("image_w", &vaeac::Dataset::image_w)
        .def("__len__", &vaeac::Dataset::n_rows);

    m.def("load_csv", &vaeac::load_csv, "csv_path"_a, "schema_config_path"_a);
    m.def("load_csv_with_schema", &vaeac::load_csv_with_schema, "csv_path"_a, "schema"_a);
    m.def("save_csv", &vaeac::save_csv, "dataset"_a, "path"_a);
    m.def("normalize", &vaeac::normalize, "dataset"_a,
          "Scale real features to zero mean / unit variance in place.");
    m.def("denormalize_row", &vaeac::denormalize_row, "schema"_a, "row"_a);
    m.def("corrupt", &vaeac::corrupt, "dataset"_a, "rate"_a, "rng"_a,
          "Independently replace non-target cells by the missing marker.");
    m.def("train_test_split", &vaeac::train_test_split, "dataset"_a, "test_fraction"_a,
          "rng"_a);
    m.def("load_idx_images", &vaeac::load_idx_images, "path"_a);
    m.def("write_idx_images", &vaeac::write_idx_images, "path"_a, "images"_a, "h"_a, "w"_a);
    m.def("make_stroke_images", &vaeac::make_stroke_images, "n"_a, "h"_a, "w"_a, "rng"_a);
    m.def("make_factor_table", &vaeac::make_factor_table, "n"_a, "rng"_a);

    py::class_<vaeac::SynthMixture>(m, "SynthMixture")
        .def_readonly("means", &vaeac::SynthMixture::means)
        .def_readonly("data", &vaeac::SynthMixture::data)
        .def_readonly("component_var", &vaeac::SynthMixture::component_var);
    m.def("synth_mixture", &vaeac::synth_mixture, "n"_a, "rng"_a,
          "Equal-weight 8-component 2-D Gaussian mixture benchmark.");
    m.def(
        "mixture_log_density",
        [](const vaeac::SynthMixture& mix, double x0, double x1) {
            return vaeac::mixture_log_density(mix, x0, x1);
        },
        "mixture"_a, "x0"_a, "x1"_a);

    // ---------------------------------------------------------- masks ----
    py::class_<vaeac::MaskSpec>(m, "MaskSpec")
        .def_static("parse", &vaeac::MaskSpec::parse, "text"_a,
                    "e.g. \"bernoulli(0.5)\", \"line(3)\", \"center\", "
                    "\"fixed_region(33,70,52,115)\"")
        .def_readwrite("rate", &vaeac::MaskSpec::rate)
        .def_readwrite("line_width", &vaeac::MaskSpec::line_width)
        .def_readwrite("h", &vaeac::MaskSpec::h)
        .def_readwrite("w", &vaeac::MaskSpec::w);
    m.def("sample_mask", &vaeac::sample_mask, "spec"_a, "x"_a, "rng"_a,
          "Draw an unobserved mask (1 = generate); missing cells are always "
          "flagged.");
    m.def("missing_mask", &vaeac::missing_mask, "x"_a);
    m.def("um_mask_transform", &vaeac::um_mask_transform, "mask"_a, "rng"_a,
          "Thin a mask by a shared-rate Bernoulli so every unobserved count "
          "becomes reachable (marginal-model training).");
    m.def("mask_popcount", &vaeac::mask_popcount, "mask"_a);

    // ---------------------------------------------------------- model ----
    py::class_<vaeac::TrainConfig>(m, "TrainConfig")
        .def(py::init())
        .def_readwrite("epochs", &vaeac::TrainConfig::epochs)
        .def_readwrite("batch", &vaeac::TrainConfig::batch)
        .def_readwrite("lr", &vaeac::TrainConfig::lr)
        .def_readwrite("latent_dim", &vaeac::TrainConfig::latent_dim)
        .def_readwrite("hidden", &vaeac::TrainConfig::hidden)
        .def_readwrite("alpha", &vaeac::TrainConfig::alpha)
        .def_readwrite("sigma_mu", &vaeac::TrainConfig::sigma_mu)
        .def_readwrite("sigma_sigma", &vaeac::TrainConfig::sigma_sigma)
        .def_readwrite("val_fraction", &vaeac::TrainConfig::val_fraction)
        .def_readwrite("is_samples", &vaeac::TrainConfig::is_samples)
        .def_readwrite("seed", &vaeac::TrainConfig::seed)
        .def_readwrite("use_skip", &vaeac::TrainConfig::use_skip)
        .def_readwrite("learn_sigma", &vaeac::TrainConfig::learn_sigma)
        .def_readwrite("kl_warmup_epochs", &vaeac::TrainConfig::kl_warmup_epochs)
        .def_readwrite("mask_spec", &vaeac::TrainConfig::mask_spec);

    py::class_<vaeac::VaeacModel>(m, "VaeacModel",
                                  "Latent-variable conditional model; sample() "
                                  "and the likelihood estimators work in "
                                  "original feature units.")
        .def_readonly("schema", &vaeac::VaeacModel::schema)
        .def(
            "sample",
            [](const vaeac::VaeacModel& mm, const std::vector<double>& x,
               const vaeac::Mask& b, std::size_t n, vaeac::Rng& rng, bool point) {
                return vaeac::conditional_sample(mm, x, b, n, rng, point);
            },
            "x_obs"_a, "mask"_a, "n"_a, "rng"_a, "point"_a = false,
            "n completions: observed cells verbatim, unobserved drawn from "
            "the conditional model.")
        .def(
            "log_lik_is",
            [](const vaeac::VaeacModel& mm, const std::vector<double>& x,
               const vaeac::Mask& b, std::size_t s, vaeac::Rng& rng) {
                return vaeac::log_lik_is(mm, x, b, s, rng);
            },
            "x"_a, "mask"_a, "samples"_a, "rng"_a,
            "Importance-sampled conditional log-likelihood.")
        .def(
            "log_lik_mc",
            [](const vaeac::VaeacModel& mm, const std::vector<double>& x,
               const vaeac::Mask& b, std::size_t s, vaeac::Rng& rng) {
                return vaeac::log_lik_mc(mm, x, b, s, rng);
            },
            "x"_a, "mask"_a, "samples"_a, "rng"_a,
            "Prior-draw conditional log-likelihood.");

    py::class_<vaeac::TrainResult>(m, "TrainResult")
        .def_readonly("model", &vaeac::TrainResult::model)
        .def_readonly("best_epoch", &vaeac::TrainResult::best_epoch)
        .def_readonly("best_val_loglik", &vaeac::TrainResult::best_val_loglik)
        .def_readonly("epoch_objective", &vaeac::TrainResult::epoch_objective)
        .def_readonly("epoch_val_loglik", &vaeac::TrainResult::epoch_val_loglik);
    m.def("train", &vaeac::train_vaeac, "dataset"_a, "config"_a,
          py::call_guard<py::gil_scoped_release>(),
          "Fit the conditional model; real features must be normalized first. "
          "Returns the best-validation-epoch parameters.");

    // --------------------------------------------------- marginal model ----
    py::class_<vaeac::UmModel>(m, "MarginalModel",
                               "Single-pass marginal predictor composed by the "
                               "chain rule.")
        .def_readonly("schema", &vaeac::UmModel::feats)
        .def(
            "sample",
            [](const vaeac::UmModel& mm, const std::vector<double>& x, const vaeac::Mask& b,
               std::size_t n, vaeac::Rng& rng, bool point) {
                return vaeac::um_conditional_sample(mm, x, b, n, rng, point);
            },
            "x_obs"_a, "mask"_a, "n"_a, "rng"_a, "point"_a = false)
        .def(
            "log_lik",
            [](const vaeac::UmModel& mm, const std::vector<double>& x, const vaeac::Mask& b,
               vaeac::Rng& rng) { return vaeac::um_log_lik(mm, x, b, rng); },
            "x"_a, "mask"_a, "rng"_a,
            "Chain-rule log-likelihood along one uniformly random ordering.")
        .def(
            "chain_log_lik",
            [](const vaeac::UmModel& mm, const std::vector<double>& x, const vaeac::Mask& b,
               const std::vector<std::size_t>& order) {
                return vaeac::um_chain_log_lik(mm, x, b, order);
            },
            "x"_a, "mask"_a, "order"_a,
            "Chain-rule log-likelihood along a fixed feature ordering (must "
            "cover exactly the unobserved cells that hold values).");

    py::class_<vaeac::UmTrainResult>(m, "MarginalTrainResult")
        .def_readonly("model", &vaeac::UmTrainResult::model)
        .def_readonly("best_epoch", &vaeac::UmTrainResult::best_epoch)
        .def_readonly("best_val_objective", &vaeac::UmTrainResult::best_val_objective)
        .def_readonly("epoch_objective", &vaeac::UmTrainResult::epoch_objective)
        .def_readonly("epoch_val_objective", &vaeac::UmTrainResult::epoch_val_objective);
    m.def("train_marginalizer", &vaeac::um_train, "dataset"_a, "config"_a,
          py::call_guard<py::gil_scoped_release>());

    // ----------------------------------------------------- checkpoints ----
    m.def(
        "save_checkpoint",
        [](const std::string& path, const vaeac::VaeacModel& model) {
            vaeac::save_vaeac_checkpoint(path, model, {});
        },
        "path"_a, "model"_a);
    m.def(
        "save_checkpoint",
        [](const std::string& path, const vaeac::UmModel& model) {
            vaeac::save_um_checkpoint(path, model, {});
        },
        "path"_a, "model"_a);
    m.def("checkpoint_kind", &vaeac::checkpoint_model_kind, "path"_a,
          "\"vaeac\" or \"marginalizer\".");
    m.def(
        "load_checkpoint",
        [](const std::string& path) -> py::object {
            const std::string kind = vaeac::checkpoint_model_kind(path);
            if (kind == "vaeac") return py::cast(vaeac::load_vaeac_checkpoint(path));
            return py::cast(vaeac::load_um_checkpoint(path));
        },
        "path"_a, "Load either model kind, dispatching on the header tag.");

    // ---------------------------------------------------------- metrics ----
    py::class_<vaeac::ImputedRow>(m, "ImputedRow")
        .def(py::init())
        .def_readwrite("completions", &vaeac::ImputedRow::completions)
        .def_readwrite("combined", &vaeac::ImputedRow::combined)
        .def_readwrite("truth", &vaeac::ImputedRow::truth)
        .def_readwrite("dropped", &vaeac::ImputedRow::dropped);

    m.def("combine_imputations", &vaeac::combine_imputations, "schema"_a, "samples"_a,
          "Mean for real features, modal label for categorical ones.");
    m.def("impute_rows", &vaeac::impute_rows, "schema"_a, "sampler"_a, "corrupted"_a,
          "truth"_a, "n"_a, "rng"_a,
          "sampler(x, mask, n, rng) -> n completions; e.g. "
          "lambda x, b, n, rng: model.sample(x, b, n, rng)");
    m.def(
        "mean_impute_rows",
        [](const vaeac::FeatureSchema& s, const std::vector<std::vector<double>>& corrupted,
           const std::vector<std::vector<double>>& truth,
           const std::optional<std::vector<std::vector<double>>>& stats_rows) {
            if (stats_rows) return vaeac::mean_impute_rows(s, corrupted, truth, *stats_rows);
            return vaeac::mean_impute_rows(s, corrupted, truth);
        },
        "schema"_a, "corrupted"_a, "truth"_a, "stats_rows"_a = std::nullopt);
    m.def("nrmse", &vaeac::nrmse, "schema"_a, "rows"_a, "exclude"_a = std::nullopt,
          "Per-real-feature RMSE over the truth column's std, averaged; "
          "dropped cells only.");
    m.def("pfc", &vaeac::pfc, "schema"_a, "rows"_a, "exclude"_a = std::nullopt,
          "Fraction of dropped categorical cells imputed with the wrong label.");
    m.def("r2_score", &vaeac::r2_score, "truth"_a, "pred"_a);
    m.def("downstream_eval", &vaeac::downstream_eval, "schema"_a, "target"_a, "train"_a,
          "test"_a,
          "R2 (real target) or accuracy (categorical) of a predictor trained "
          "on the imputed completions.");
    m.def("naive_bayes_nll", &vaeac::naive_bayes_nll, "train_images"_a, "test_pairs"_a,
          "Pixel-independent inpainting baseline for binary images.");
    m.def("psnr", &vaeac::psnr, "reference"_a, "candidate"_a, "max_value"_a);
    m.def("best_of_k_psnr", &vaeac::best_of_k_psnr, "reference"_a, "candidates"_a,
          "max_value"_a);

    py::class_<vaeac::MetricRow>(m, "MetricRow")
        .def(py::init([](std::string metric, std::string dataset, std::vector<double> values) {
                 return vaeac::MetricRow{std::move(metric), std::move(dataset),
                                         std::move(values)};
             }),
             "metric"_a, "dataset"_a, "split_values"_a)
        .def_readwrite("metric", &vaeac::MetricRow::metric)
        .def_readwrite("dataset", &vaeac::MetricRow::dataset)
        .def_readwrite("split_values", &vaeac::MetricRow::split_values);
    m.def("write_metric_report", &vaeac::write_metric_report, "path"_a, "rows"_a);
}
