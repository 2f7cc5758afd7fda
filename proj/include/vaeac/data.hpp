#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vaeac/common.hpp"

namespace vaeac {

// Missing-value marker: cells equal to NaN are treated as absent.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

enum class FeatureKind { kReal, kCategorical };

struct Feature {
    std::string name;
    FeatureKind kind{FeatureKind::kReal};
    std::vector<std::string> labels;  // categorical only
    double mean{0.0};                 // real only, filled by normalize()
    double std{1.0};
    bool normalized{false};

    std::size_t n_categories() const { return labels.size(); }
};

struct FeatureSchema {
    std::vector<Feature> features;
    std::optional<std::size_t> target_index;

    std::size_t size() const { return features.size(); }
};

// Rows hold reals as-is and categoricals as label indices; NaN marks a
// missing cell of either kind.
struct Dataset {
    FeatureSchema schema;
    std::vector<std::vector<double>> rows;
    std::size_t image_h{0}, image_w{0};  // set for image datasets

    std::size_t n_rows() const { return rows.size(); }
    std::size_t n_features() const { return schema.size(); }
};

// schema_config: flat key=value text; one `<column>=real|categorical` line
// per CSV column plus optional `target=<column>`. Labels of categorical
// columns are assigned indices in first-seen order.
Dataset load_csv(const std::string& csv_path, const std::string& schema_config_path);

// Conforming load: label sets and feature kinds come from `schema`;
// unknown labels are an error.
Dataset load_csv_with_schema(const std::string& csv_path, const FeatureSchema& schema);

void save_csv(const Dataset& ds, const std::string& path);

// Real features to zero mean / unit variance over present cells, population
// std; stats recorded in the schema. Constant columns are an error.
void normalize(Dataset& ds);
// Inverse transform of a single cell value.
double denormalize_value(const Feature& f, double v);
double normalize_value(const Feature& f, double v);
// Map rows back through the schema stats (for emitting user-facing values).
std::vector<double> denormalize_row(const FeatureSchema& schema, const std::vector<double>& row);

// Independently replaces each non-target cell by the missing marker with
// probability `rate`.
void corrupt(Dataset& ds, double rate, Rng& rng);

// Random 3:1-style split; test_fraction is the second component's share.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction, Rng& rng);

// Equal-weight 8-component Gaussian mixture in 2-D: means drawn once from
// N(0, I), component scale 1/10 (std 0.1 per coordinate).
struct SynthMixture {
    std::vector<std::array<double, 2>> means;
    Dataset data;
    double component_var{0.01};
};
SynthMixture synth_mixture(std::size_t n, Rng& rng);
// Exact mixture log-density; the oracle for likelihood comparisons.
double mixture_log_density(const SynthMixture& mix, double x0, double x1);
double mixture_log_density(const std::vector<std::array<double, 2>>& means, double var,
                           double x0, double x1);

// IDX image container (big-endian, magic 0x00000803). Pixels are binarized
// at half of the maximum byte intensity; each pixel becomes a two-category
// feature.
Dataset load_idx_images(const std::string& path);
// Writer for the same container (bytes 0/255), used to build image corpora.
void write_idx_images(const std::string& path, const std::vector<std::vector<double>>& images,
                      std::size_t h, std::size_t w);

// Procedural binary image corpus: a few smooth random strokes rasterized per
// image. Heavy local pixel correlation, digit-like variety; stands in for
// handwriting corpora when none is on disk.
Dataset make_stroke_images(std::size_t n, std::size_t h, std::size_t w, Rng& rng);

// Procedural tabular corpus: 11 correlated real features driven by a few
// latent factors plus a noisy nonlinear real target in the last column.
// Mimics the shape of small UCI regression tables.
Dataset make_factor_table(std::size_t n, Rng& rng);

}  // namespace vaeac
