#include "vaeac/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vaeac/config.hpp"
#include "vaeac/distributions.hpp"

namespace vaeac {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_real_cell(const std::string& cell, std::size_t lineno) {
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw IoError("csv line " + std::to_string(lineno) + ": unparsable real '" + cell + "'");
    }
}

Dataset load_csv_impl(const std::string& csv_path, FeatureSchema schema, bool labels_frozen) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open csv: " + csv_path);
    Dataset ds;
    std::string line;
    std::size_t lineno = 1;  // header consumed by caller-built schema
    std::getline(in, line);  // header, already reflected in schema order
    ds.schema = std::move(schema);
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != ds.schema.size()) {
            throw IoError("csv line " + std::to_string(lineno) + ": expected " +
                          std::to_string(ds.schema.size()) + " cells, got " +
                          std::to_string(cells.size()));
        }
        std::vector<double> row(cells.size());
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const std::string cell = trim(cells[j]);
            Feature& f = ds.schema.features[j];
            if (cell.empty()) {
                row[j] = kMissing;
            } else if (f.kind == FeatureKind::kReal) {
                row[j] = parse_real_cell(cell, lineno);
            } else {
                auto it = std::find(f.labels.begin(), f.labels.end(), cell);
                if (it == f.labels.end()) {
                    if (labels_frozen) {
                        throw IoError("csv line " + std::to_string(lineno) + ": unknown label '" +
                                      cell + "' for column " + f.name);
                    }
                    f.labels.push_back(cell);
                    it = std::prev(f.labels.end());
                }
                row[j] = static_cast<double>(it - f.labels.begin());
            }
        }
        ds.rows.push_back(std::move(row));
    }
    return ds;
}

std::vector<std::string> read_header(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("cannot open csv: " + csv_path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("csv has no header row: " + csv_path);
    auto cells = split_csv_line(line);
    for (auto& c : cells) c = trim(c);
    return cells;
}

}  // namespace

Dataset load_csv(const std::string& csv_path, const std::string& schema_config_path) {
    const KvConfig cfg = KvConfig::parse_file(schema_config_path);
    const auto header = read_header(csv_path);
    FeatureSchema schema;
    for (const auto& name : header) {
        const auto kind = cfg.find(name);
        if (!kind) throw ConfigError("schema config: no kind declared for column '" + name + "'");
        Feature f;
        f.name = name;
        if (*kind == "real") {
            f.kind = FeatureKind::kReal;
        } else if (*kind == "categorical") {
            f.kind = FeatureKind::kCategorical;
        } else {
            throw ConfigError("schema config: column '" + name + "' has unknown kind '" + *kind +
                              "' (want real|categorical)");
        }
        schema.features.push_back(std::move(f));
    }
    if (auto target = cfg.find("target")) {
        auto it = std::find(header.begin(), header.end(), *target);
        if (it == header.end()) {
            throw ConfigError("schema config: target column '" + *target + "' not in header");
        }
        schema.target_index = static_cast<std::size_t>(it - header.begin());
    }
    return load_csv_impl(csv_path, std::move(schema), /*labels_frozen=*/false);
}

Dataset load_csv_with_schema(const std::string& csv_path, const FeatureSchema& schema) {
    const auto header = read_header(csv_path);
    if (header.size() != schema.size()) {
        throw IoError("csv header has " + std::to_string(header.size()) + " columns, schema has " +
                      std::to_string(schema.size()));
    }
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (header[j] != schema.features[j].name) {
            throw IoError("csv column " + std::to_string(j) + " is '" + header[j] +
                          "', schema expects '" + schema.features[j].name + "'");
        }
    }
    return load_csv_impl(csv_path, schema, /*labels_frozen=*/true);
}

namespace {

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write csv: " + path);
    for (std::size_t j = 0; j < ds.schema.size(); ++j) {
        if (j) out << ",";
        out << ds.schema.features[j].name;
    }
    out << "\n";
    for (const auto& row : ds.rows) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j) out << ",";
            if (is_missing(row[j])) continue;  // empty cell
            const Feature& f = ds.schema.features[j];
            if (f.kind == FeatureKind::kCategorical) {
                out << f.labels.at(static_cast<std::size_t>(row[j]));
            } else {
                out << format_real(row[j]);
            }
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

void normalize(Dataset& ds) {
    for (std::size_t j = 0; j < ds.schema.size(); ++j) {
        Feature& f = ds.schema.features[j];
        if (f.kind != FeatureKind::kReal) continue;
        if (f.normalized) throw ConfigError("normalize: column '" + f.name + "' already normalized");
        double sum = 0.0;
        std::size_t n = 0;
        for (const auto& row : ds.rows) {
            if (!is_missing(row[j])) {
                sum += row[j];
                ++n;
            }
        }
        if (n == 0) throw ConfigError("normalize: column '" + f.name + "' has no present values");
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (const auto& row : ds.rows) {
            if (!is_missing(row[j])) ss += (row[j] - mean) * (row[j] - mean);
        }
        const double std_ = std::sqrt(ss / static_cast<double>(n));  // population std
        if (!(std_ > 0.0)) throw ConfigError("normalize: column '" + f.name + "' is constant");
        f.mean = mean;
        f.std = std_;
        f.normalized = true;
        for (auto& row : ds.rows) {
            if (!is_missing(row[j])) row[j] = (row[j] - mean) / std_;
        }
    }
}

double denormalize_value(const Feature& f, double v) {
    if (f.kind != FeatureKind::kReal || !f.normalized || is_missing(v)) return v;
    return v * f.std + f.mean;
}

double normalize_value(const Feature& f, double v) {
    if (f.kind != FeatureKind::kReal || !f.normalized || is_missing(v)) return v;
    return (v - f.mean) / f.std;
}

std::vector<double> denormalize_row(const FeatureSchema& schema, const std::vector<double>& row) {
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
        out[j] = denormalize_value(schema.features[j], row[j]);
    }
    return out;
}

void corrupt(Dataset& ds, double rate, Rng& rng) {
    if (rate < 0.0 || rate > 1.0) throw ConfigError("corrupt: rate outside [0,1]");
    for (auto& row : ds.rows) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (ds.schema.target_index && *ds.schema.target_index == j) continue;
            if (uniform01(rng) < rate) row[j] = kMissing;
        }
    }
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction, Rng& rng) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0) {
        throw ConfigError("train_test_split: fraction must be inside (0,1)");
    }
    std::vector<std::size_t> idx(ds.n_rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(ds.n_rows())));
    Dataset test, train;
    test.schema = train.schema = ds.schema;
    test.image_h = train.image_h = ds.image_h;
    test.image_w = train.image_w = ds.image_w;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        (i < n_test ? test : train).rows.push_back(ds.rows[idx[i]]);
    }
    return {std::move(train), std::move(test)};
}

SynthMixture synth_mixture(std::size_t n, Rng& rng) {
    if (n < 1) throw ConfigError("synth_mixture: n must be >= 1");
    SynthMixture mix;
    mix.means.resize(8);
    for (auto& m : mix.means) {
        m[0] = normal01(rng);
        m[1] = normal01(rng);
    }
    const double sigma = std::sqrt(mix.component_var);
    FeatureSchema schema;
    for (const char* name : {"x1", "x2"}) {
        Feature f;
        f.name = name;
        f.kind = FeatureKind::kReal;
        schema.features.push_back(std::move(f));
    }
    mix.data.schema = std::move(schema);
    mix.data.rows.reserve(n);
    std::uniform_int_distribution<std::size_t> comp(0, 7);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& m = mix.means[comp(rng)];
        mix.data.rows.push_back({m[0] + sigma * normal01(rng), m[1] + sigma * normal01(rng)});
    }
    return mix;
}

double mixture_log_density(const std::vector<std::array<double, 2>>& means, double var,
                           double x0, double x1) {
    const double sigma = std::sqrt(var);
    std::vector<double> lps;
    lps.reserve(means.size());
    for (const auto& m : means) {
        lps.push_back(gaussian_log_prob(x0, m[0], sigma) + gaussian_log_prob(x1, m[1], sigma));
    }
    return log_mean_exp(lps);  // equal weights fold into the mean
}

double mixture_log_density(const SynthMixture& mix, double x0, double x1) {
    return mixture_log_density(mix.means, mix.component_var, x0, x1);
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated idx file: " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

FeatureSchema pixel_schema(std::size_t n_pixels) {
    FeatureSchema schema;
    schema.features.reserve(n_pixels);
    for (std::size_t i = 0; i < n_pixels; ++i) {
        Feature f;
        f.name = "px" + std::to_string(i);
        f.kind = FeatureKind::kCategorical;
        f.labels = {"0", "1"};
        schema.features.push_back(std::move(f));
    }
    return schema;
}

}  // namespace

Dataset load_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open idx file: " + path);
    const std::uint32_t magic = read_be32(in, path);
    if (magic != 0x00000803u) {
        std::ostringstream os;
        os << "bad idx magic 0x" << std::hex << magic << " in " << path;
        throw IoError(os.str());
    }
    const std::uint32_t n = read_be32(in, path);
    const std::uint32_t h = read_be32(in, path);
    const std::uint32_t w = read_be32(in, path);
    Dataset ds;
    ds.schema = pixel_schema(std::size_t(h) * w);
    ds.image_h = h;
    ds.image_w = w;
    ds.rows.reserve(n);
    std::vector<unsigned char> buf(std::size_t(h) * w);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
            throw IoError("truncated idx file: " + path);
        }
        std::vector<double> row(buf.size());
        for (std::size_t j = 0; j < buf.size(); ++j) row[j] = buf[j] >= 128 ? 1.0 : 0.0;
        ds.rows.push_back(std::move(row));
    }
    return ds;
}

void write_idx_images(const std::string& path, const std::vector<std::vector<double>>& images,
                      std::size_t h, std::size_t w) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write idx file: " + path);
    write_be32(out, 0x00000803u);
    write_be32(out, static_cast<std::uint32_t>(images.size()));
    write_be32(out, static_cast<std::uint32_t>(h));
    write_be32(out, static_cast<std::uint32_t>(w));
    std::vector<unsigned char> buf(h * w);
    for (const auto& img : images) {
        if (img.size() != h * w) throw ShapeError("write_idx_images: image size mismatch");
        for (std::size_t j = 0; j < img.size(); ++j) buf[j] = img[j] >= 0.5 ? 255 : 0;
        out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!out) throw IoError("write failed: " + path);
}

Dataset make_stroke_images(std::size_t n, std::size_t h, std::size_t w, Rng& rng) {
    Dataset ds;
    ds.schema = pixel_schema(h * w);
    ds.image_h = h;
    ds.image_w = w;
    ds.rows.reserve(n);
    const double margin = 2.0;
    std::uniform_int_distribution<int> n_strokes(1, 3);
    auto rand_coord = [&](std::size_t extent) {
        return margin + uniform01(rng) * (static_cast<double>(extent) - 1.0 - 2.0 * margin);
    };
    for (std::size_t img = 0; img < n; ++img) {
        std::vector<double> row(h * w, 0.0);
        const int strokes = n_strokes(rng);
        for (int s = 0; s < strokes; ++s) {
            // Quadratic Bezier rasterized as overlapping discs: smooth
            // pen-like arcs with wide pixel correlation.
            const double y0 = rand_coord(h), x0 = rand_coord(w);
            const double y1 = rand_coord(h), x1 = rand_coord(w);
            const double y2 = rand_coord(h), x2 = rand_coord(w);
            const double radius = 0.9 + 0.6 * uniform01(rng);
            const int steps = static_cast<int>(2 * (h + w));
            for (int t = 0; t <= steps; ++t) {
                const double u = static_cast<double>(t) / steps;
                const double a = (1 - u) * (1 - u), b = 2 * (1 - u) * u, c = u * u;
                const double py = a * y0 + b * y1 + c * y2;
                const double px = a * x0 + b * x1 + c * x2;
                const int rlo = std::max(0, static_cast<int>(std::floor(py - radius)));
                const int rhi = std::min(static_cast<int>(h) - 1,
                                         static_cast<int>(std::ceil(py + radius)));
                const int clo = std::max(0, static_cast<int>(std::floor(px - radius)));
                const int chi = std::min(static_cast<int>(w) - 1,
                                         static_cast<int>(std::ceil(px + radius)));
                for (int r = rlo; r <= rhi; ++r) {
                    for (int cc = clo; cc <= chi; ++cc) {
                        const double dy = r - py, dx = cc - px;
                        if (dy * dy + dx * dx <= radius * radius) {
                            row[static_cast<std::size_t>(r) * w + cc] = 1.0;
                        }
                    }
                }
            }
        }
        ds.rows.push_back(std::move(row));
    }
    return ds;
}

Dataset make_factor_table(std::size_t n, Rng& rng) {
    // 11 features share 3 latent factors; the last column is a noisy
    // nonlinear response. Loadings chosen once, fixed, moderately varied.
    static constexpr double kLoad[11][3] = {
        {0.9, 0.1, 0.0},  {0.8, -0.3, 0.2}, {0.0, 0.9, 0.1},  {-0.4, 0.7, 0.0},
        {0.3, 0.3, 0.8},  {0.0, -0.2, 0.9}, {0.7, 0.0, -0.5}, {-0.6, 0.5, 0.3},
        {0.2, 0.8, -0.4}, {0.5, -0.6, 0.4}, {-0.3, -0.3, 0.7},
    };
    static constexpr double kNoise[11] = {0.35, 0.4, 0.3, 0.45, 0.35, 0.4,
                                          0.35, 0.4, 0.3, 0.45, 0.35};
    Dataset ds;
    for (int j = 0; j < 11; ++j) {
        Feature f;
        f.name = "f" + std::to_string(j + 1);
        f.kind = FeatureKind::kReal;
        ds.schema.features.push_back(std::move(f));
    }
    Feature target;
    target.name = "y";
    target.kind = FeatureKind::kReal;
    ds.schema.features.push_back(std::move(target));
    ds.schema.target_index = 11;
    ds.rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double g1 = normal01(rng), g2 = normal01(rng), g3 = normal01(rng);
        std::vector<double> row(12);
        for (int j = 0; j < 11; ++j) {
            row[j] = kLoad[j][0] * g1 + kLoad[j][1] * g2 + kLoad[j][2] * g3 +
                     kNoise[j] * normal01(rng);
        }
        row[11] = g1 - 0.5 * g2 + 0.3 * g1 * g2 + 0.25 * g3 * g3 + 0.5 * normal01(rng);
        ds.rows.push_back(std::move(row));
    }
    return ds;
}

}  // namespace vaeac
