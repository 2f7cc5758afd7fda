#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "vaeac/checkpoint.hpp"
#include "vaeac/data.hpp"
#include "vaeac/evalharness.hpp"
#include "vaeac/marginalizer.hpp"
#include "vaeac/model.hpp"

namespace {

using vaeac::Dataset;
using vaeac::FeatureKind;
using vaeac::FeatureSchema;
using vaeac::KvConfig;
using vaeac::Mask;
using vaeac::MaskSpec;
using vaeac::Rng;
using vaeac::TrainConfig;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void echo_config(const std::string& command, KvConfig kv) {
    KvConfig full;
    full.set("command", command);
    for (auto& [k, v] : kv.entries) full.set(k, v);
    std::cout << "# resolved config\n" << full.render() << "# end config\n";
}

std::vector<std::size_t> parse_hidden(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = vaeac::trim(tok);
        if (tok.empty()) continue;
        char* end = nullptr;
        const long v = std::strtol(tok.c_str(), &end, 10);
        if (end == tok.c_str() || *end != '\0' || v <= 0) {
            throw vaeac::ConfigError("bad hidden layer width: '" + tok + "'");
        }
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty()) throw vaeac::ConfigError("hidden layer list is empty");
    return out;
}

std::string hidden_text(const std::vector<std::size_t>& widths) {
    std::string out;
    for (std::size_t w : widths) {
        if (!out.empty()) out += ',';
        out += std::to_string(w);
    }
    return out;
}

std::size_t feature_index_by_name(const FeatureSchema& schema, const std::string& name) {
    for (std::size_t j = 0; j < schema.size(); ++j) {
        if (schema.features[j].name == name) return j;
    }
    throw vaeac::ConfigError("no such column: '" + name + "'");
}

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Loads a dataset whose layout must match `conform` (label sets, kinds).
Dataset load_conforming(const std::string& path, const FeatureSchema& conform,
                        std::size_t image_h, std::size_t image_w) {
    if (has_suffix(path, ".idx")) {
        Dataset ds = vaeac::load_idx_images(path);
        if (ds.n_features() != conform.size()) {
            throw vaeac::ShapeError("image file feature count does not match the checkpoint");
        }
        ds.schema = conform;
        ds.image_h = image_h ? image_h : ds.image_h;
        ds.image_w = image_w ? image_w : ds.image_w;
        return ds;
    }
    return vaeac::load_csv_with_schema(path, conform);
}

std::string cell_text(const vaeac::Feature& f, double v) {
    if (vaeac::is_missing(v)) return "";
    if (f.kind == FeatureKind::kCategorical) return f.labels.at(static_cast<std::size_t>(v));
    char buf[40];  // full precision so emitted samples round-trip exactly
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct RunningStat {
    double sum{0.0}, sum2{0.0};
    std::size_t n{0};
    void add(double v) {
        sum += v;
        sum2 += v * v;
        ++n;
    }
    double mean() const { return n ? sum / double(n) : 0.0; }
    double sd() const {
        if (n < 2) return 0.0;
        const double m = mean();
        return std::sqrt(std::max(0.0, (sum2 - double(n) * m * m) / double(n - 1)));
    }
    double se() const { return n ? sd() / std::sqrt(double(n)) : 0.0; }
    std::vector<double> values;  // kept when per-split reporting is wanted
};

// Either trained model kind behind one sampling/likelihood surface.
struct LoadedModel {
    std::string kind;
    std::optional<vaeac::VaeacModel> v;
    std::optional<vaeac::UmModel> u;
    vaeac::VaeacCheckpointInfo info;

    const FeatureSchema& schema() const { return v ? v->schema : u->feats; }
    std::size_t image_h() const { return v ? v->image_h : u->image_h; }
    std::size_t image_w() const { return v ? v->image_w : u->image_w; }

    std::vector<std::vector<double>> sample(const std::vector<double>& x, const Mask& b,
                                            std::size_t n, Rng& rng, bool point) const {
        if (v) return vaeac::conditional_sample(*v, x, b, n, rng, point);
        return vaeac::um_conditional_sample(*u, x, b, n, rng, point);
    }

    double loglik(const std::vector<double>& x, const Mask& b, const std::string& estimator,
                  std::size_t s, Rng& rng) const {
        if (v) {
            if (estimator == "mc") return vaeac::log_lik_mc(*v, x, b, s, rng);
            return vaeac::log_lik_is(*v, x, b, s, rng);
        }
        return vaeac::um_log_lik(*u, x, b, rng);
    }
};

LoadedModel load_model(const std::string& path) {
    LoadedModel m;
    m.kind = vaeac::checkpoint_model_kind(path);
    if (m.kind == "vaeac") {
        m.v = vaeac::load_vaeac_checkpoint(path, &m.info);
    } else if (m.kind == "marginalizer") {
        m.u = vaeac::load_um_checkpoint(path, &m.info);
    } else {
        throw vaeac::IoError("unknown model kind in checkpoint: " + m.kind);
    }
    return m;
}

MaskSpec parse_mask_for(const std::string& text, std::size_t image_h, std::size_t image_w) {
    MaskSpec spec = MaskSpec::parse(text);
    if (spec.h == 0) {
        spec.h = image_h;
        spec.w = image_w;
    }
    return spec;
}

void write_sample_csv(const std::string& path, const FeatureSchema& schema,
                      const std::vector<std::vector<std::vector<double>>>& per_row,
                      const std::vector<std::vector<double>>* combined) {
    std::ofstream out(path);
    if (!out) throw vaeac::IoError("cannot open output: " + path);
    out << "row,sample";
    for (const auto& f : schema.features) out << ',' << f.name;
    out << '\n';
    for (std::size_t r = 0; r < per_row.size(); ++r) {
        for (std::size_t k = 0; k < per_row[r].size(); ++k) {
            out << r << ',' << k;
            for (std::size_t j = 0; j < schema.size(); ++j) {
                out << ',' << cell_text(schema.features[j], per_row[r][k][j]);
            }
            out << '\n';
        }
        if (combined) {
            out << r << ",combined";
            for (std::size_t j = 0; j < schema.size(); ++j) {
                out << ',' << cell_text(schema.features[j], (*combined)[r][j]);
            }
            out << '\n';
        }
    }
    if (!out.good()) throw vaeac::IoError("write failed: " + path);
}

// ---------------------------------------------------------------- synth ----

struct SynthArgs {
    long n{100000};
    long seed{1};
    std::string out;
    std::string means_out;
};

void cmd_synth(const SynthArgs& a) {
    KvConfig kv;
    kv.set("n", std::to_string(a.n));
    kv.set("seed", std::to_string(a.seed));
    kv.set("out", a.out);
    if (!a.means_out.empty()) kv.set("means_out", a.means_out);
    echo_config("synth", kv);

    Rng rng = vaeac::make_rng(static_cast<std::uint64_t>(a.seed), "synth");
    vaeac::SynthMixture mix = vaeac::synth_mixture(static_cast<std::size_t>(a.n), rng);
    vaeac::save_csv(mix.data, a.out);
    if (!a.means_out.empty()) {
        std::ofstream mo(a.means_out);
        if (!mo) throw vaeac::IoError("cannot open output: " + a.means_out);
        mo << "component,mean0,mean1\n";
        for (std::size_t c = 0; c < mix.means.size(); ++c) {
            mo << c << ',' << fmt(mix.means[c][0]) << ',' << fmt(mix.means[c][1]) << '\n';
        }
    }
    std::cout << "wrote " << a.n << " rows to " << a.out << "\n";
}

// -------------------------------------------------------------- prepare ----

struct PrepareArgs {
    std::string csv, idx, schema_config, make;
    long n{1000};
    long image_h{28}, image_w{28};
    std::string target;
    double drop{0.0};
    double split{0.0};
    long seed{1};
    std::string out;
    std::string schema_out;
};

void cmd_prepare(const PrepareArgs& a) {
    KvConfig kv;
    if (!a.csv.empty()) kv.set("csv", a.csv);
    if (!a.idx.empty()) kv.set("idx", a.idx);
    if (!a.schema_config.empty()) kv.set("schema_config", a.schema_config);
    if (!a.make.empty()) {
        kv.set("make", a.make);
        kv.set("n", std::to_string(a.n));
        if (a.make == "strokes") {
            kv.set("image_h", std::to_string(a.image_h));
            kv.set("image_w", std::to_string(a.image_w));
        }
    }
    if (!a.target.empty()) kv.set("target", a.target);
    kv.set("drop", fmt(a.drop));
    kv.set("split", fmt(a.split));
    kv.set("seed", std::to_string(a.seed));
    kv.set("out", a.out);

    Dataset ds;
    const auto seed = static_cast<std::uint64_t>(a.seed);
    if (!a.make.empty()) {
        Rng rng = vaeac::make_rng(seed, "prepare-make");
        if (a.make == "factor-table") {
            ds = vaeac::make_factor_table(static_cast<std::size_t>(a.n), rng);
        } else if (a.make == "strokes") {
            ds = vaeac::make_stroke_images(static_cast<std::size_t>(a.n),
                                           static_cast<std::size_t>(a.image_h),
                                           static_cast<std::size_t>(a.image_w), rng);
        } else {
            throw vaeac::ConfigError("unknown --make kind: '" + a.make +
                                     "' (factor-table | strokes)");
        }
    } else if (!a.idx.empty()) {
        ds = vaeac::load_idx_images(a.idx);
    } else if (!a.csv.empty()) {
        if (a.schema_config.empty()) {
            throw vaeac::ConfigError("--csv input needs --schema-config");
        }
        ds = vaeac::load_csv(a.csv, a.schema_config);
    } else {
        throw vaeac::ConfigError("prepare needs one of --csv, --idx, --make");
    }

    if (!a.target.empty()) ds.schema.target_index = feature_index_by_name(ds.schema, a.target);

    if (a.drop > 0.0) {
        Rng rng = vaeac::make_rng(seed, "prepare-drop");
        vaeac::corrupt(ds, a.drop, rng);
    }

    const std::string schema_out = a.schema_out.empty() ? a.out + ".schema" : a.schema_out;
    kv.set("schema_out", schema_out);
    echo_config("prepare", kv);

    if (a.split > 0.0) {
        Rng rng = vaeac::make_rng(seed, "prepare-split");
        auto [tr, te] = vaeac::train_test_split(ds, a.split, rng);
        vaeac::save_csv(tr, a.out + ".train.csv");
        vaeac::save_csv(te, a.out + ".test.csv");
        std::cout << "wrote " << tr.n_rows() << " train rows, " << te.n_rows()
                  << " test rows\n";
    } else {
        vaeac::save_csv(ds, a.out + ".csv");
        std::cout << "wrote " << ds.n_rows() << " rows\n";
    }

    KvConfig header;
    vaeac::schema_to_header(ds.schema, ds.image_h, ds.image_w, header);
    std::ofstream so(schema_out);
    if (!so) throw vaeac::IoError("cannot open output: " + schema_out);
    so << header.render();
    if (!so.good()) throw vaeac::IoError("write failed: " + schema_out);
}

// ---------------------------------------------------------------- train ----

struct TrainArgs {
    std::string config;
    std::string data, schema, model, out, target, hidden, mask;
    long epochs{-1}, batch{-1}, latent{-1}, is_samples{-1}, seed{-1};
    double lr{-1}, alpha{-1}, val_fraction{-1};
    long skip{-1}, learn_sigma{-1}, normalize{-1}, kl_warmup{-1};
    // which flags were actually passed, filled after parsing
    CLI::Option *o_data{}, *o_schema{}, *o_model{}, *o_out{}, *o_target{}, *o_hidden{},
        *o_mask{}, *o_epochs{}, *o_batch{}, *o_latent{}, *o_is{}, *o_seed{}, *o_lr{},
        *o_alpha{}, *o_val{}, *o_skip{}, *o_learn{}, *o_norm{}, *o_klw{};
};

const std::vector<std::string> kTrainKeys = {
    "data",   "schema", "model",        "out",        "target",     "normalize", "epochs",
    "batch",  "lr",     "latent",       "hidden",     "alpha",      "mask",      "seed",
    "val_fraction", "is_samples", "skip", "learn_sigma", "kl_warmup"};

KvConfig resolve_train_config(const TrainArgs& a) {
    const TrainConfig def;
    KvConfig kv;
    kv.set("data", "");
    kv.set("schema", "");
    kv.set("model", "vaeac");
    kv.set("out", "");
    kv.set("target", "");
    kv.set("normalize", "1");
    kv.set("epochs", std::to_string(def.epochs));
    kv.set("batch", std::to_string(def.batch));
    kv.set("lr", fmt(def.lr));
    kv.set("latent", std::to_string(def.latent_dim));
    kv.set("hidden", hidden_text(def.hidden));
    kv.set("alpha", fmt(def.alpha));
    kv.set("mask", def.mask_spec);
    kv.set("seed", std::to_string(def.seed));
    kv.set("val_fraction", fmt(def.val_fraction));
    kv.set("is_samples", std::to_string(def.is_samples));
    kv.set("skip", def.use_skip ? "1" : "0");
    kv.set("learn_sigma", def.learn_sigma ? "1" : "0");
    kv.set("kl_warmup", std::to_string(def.kl_warmup_epochs));

    if (!a.config.empty()) {
        KvConfig file = KvConfig::parse_file(a.config);
        for (auto& [k, v] : file.entries) {
            if (std::find(kTrainKeys.begin(), kTrainKeys.end(), k) == kTrainKeys.end()) {
                throw vaeac::ConfigError("unknown train config key: '" + k + "'");
            }
            kv.set(k, v);
        }
    }

    auto override_str = [&](CLI::Option* o, const char* key, const std::string& v) {
        if (o && o->count() > 0) kv.set(key, v);
    };
    override_str(a.o_data, "data", a.data);
    override_str(a.o_schema, "schema", a.schema);
    override_str(a.o_model, "model", a.model);
    override_str(a.o_out, "out", a.out);
    override_str(a.o_target, "target", a.target);
    override_str(a.o_hidden, "hidden", a.hidden);
    override_str(a.o_mask, "mask", a.mask);
    override_str(a.o_epochs, "epochs", std::to_string(a.epochs));
    override_str(a.o_batch, "batch", std::to_string(a.batch));
    override_str(a.o_latent, "latent", std::to_string(a.latent));
    override_str(a.o_is, "is_samples", std::to_string(a.is_samples));
    override_str(a.o_seed, "seed", std::to_string(a.seed));
    override_str(a.o_lr, "lr", fmt(a.lr));
    override_str(a.o_alpha, "alpha", fmt(a.alpha));
    override_str(a.o_val, "val_fraction", fmt(a.val_fraction));
    override_str(a.o_skip, "skip", std::to_string(a.skip));
    override_str(a.o_learn, "learn_sigma", std::to_string(a.learn_sigma));
    override_str(a.o_klw, "kl_warmup", std::to_string(a.kl_warmup));
    override_str(a.o_norm, "normalize", std::to_string(a.normalize));
    return kv;
}

TrainConfig train_config_from(const KvConfig& kv) {
    TrainConfig cfg;
    cfg.epochs = static_cast<std::size_t>(kv.get_long("epochs", 0));
    cfg.batch = static_cast<std::size_t>(kv.get_long("batch", 0));
    cfg.lr = kv.get_double("lr", 0.0);
    cfg.latent_dim = static_cast<std::size_t>(kv.get_long("latent", 0));
    cfg.hidden = parse_hidden(kv.get_string("hidden"));
    cfg.alpha = kv.get_double("alpha", 1.0);
    cfg.mask_spec = kv.get_string("mask");
    cfg.seed = static_cast<std::uint64_t>(kv.get_long("seed", 1));
    cfg.val_fraction = kv.get_double("val_fraction", 0.25);
    cfg.is_samples = static_cast<std::size_t>(kv.get_long("is_samples", 10));
    cfg.use_skip = kv.get_long("skip", 1) != 0;
    cfg.learn_sigma = kv.get_long("learn_sigma", 0) != 0;
    cfg.kl_warmup_epochs = static_cast<std::size_t>(kv.get_long("kl_warmup", 0));
    cfg.validate();
    return cfg;
}

void cmd_train(const TrainArgs& a) {
    KvConfig kv = resolve_train_config(a);
    const std::string data_path = kv.get_string("data");
    const std::string out_path = kv.get_string("out");
    const std::string model_kind = kv.get_string("model");
    if (data_path.empty()) throw vaeac::ConfigError("train: --data is required");
    if (out_path.empty()) throw vaeac::ConfigError("train: --out is required");
    if (model_kind != "vaeac" && model_kind != "um") {
        throw vaeac::ConfigError("train: --model must be vaeac or um");
    }
    echo_config("train", kv);

    Dataset ds;
    const std::string schema_path = kv.get_string("schema", "");
    if (has_suffix(data_path, ".idx")) {
        ds = vaeac::load_idx_images(data_path);
    } else if (!schema_path.empty()) {
        std::size_t ih = 0, iw = 0;
        const FeatureSchema schema =
            vaeac::schema_from_header(KvConfig::parse_file(schema_path), &ih, &iw);
        ds = vaeac::load_csv_with_schema(data_path, schema);
        ds.image_h = ih;
        ds.image_w = iw;
    } else {
        throw vaeac::ConfigError("train: csv data needs --schema (from prepare)");
    }

    const std::string target = kv.get_string("target", "");
    if (!target.empty()) ds.schema.target_index = feature_index_by_name(ds.schema, target);

    bool any_unnormalized_real = false;
    for (const auto& f : ds.schema.features) {
        if (f.kind == FeatureKind::kReal && !f.normalized) any_unnormalized_real = true;
    }
    if (kv.get_long("normalize", 1) != 0 && any_unnormalized_real) vaeac::normalize(ds);

    const TrainConfig cfg = train_config_from(kv);
    if (model_kind == "vaeac") {
        vaeac::TrainResult r = vaeac::train_vaeac(ds, cfg);
        for (std::size_t e = 0; e < r.epoch_objective.size(); ++e) {
            std::cout << "epoch=" << e + 1 << " objective=" << fmt(r.epoch_objective[e])
                      << " val_loglik=" << fmt(r.epoch_val_loglik[e]) << "\n";
        }
        vaeac::save_vaeac_checkpoint(out_path, r.model,
                                     {r.best_epoch, r.best_val_loglik});
        std::cout << "best_epoch=" << r.best_epoch << " best_val_loglik="
                  << fmt(r.best_val_loglik) << " checkpoint=" << out_path << "\n";
    } else {
        vaeac::UmTrainResult r = vaeac::um_train(ds, cfg);
        for (std::size_t e = 0; e < r.epoch_objective.size(); ++e) {
            std::cout << "epoch=" << e + 1 << " objective=" << fmt(r.epoch_objective[e])
                      << " val_objective=" << fmt(r.epoch_val_objective[e]) << "\n";
        }
        vaeac::save_um_checkpoint(out_path, r.model, {r.best_epoch, r.best_val_objective});
        std::cout << "best_epoch=" << r.best_epoch << " best_val_objective="
                  << fmt(r.best_val_objective) << " checkpoint=" << out_path << "\n";
    }
}

// --------------------------------------------------------------- impute ----

struct ImputeArgs {
    std::string checkpoint, data, out;
    long n{10};
    long seed{1};
    bool hide_target{false};
    bool point{false};
};

void cmd_impute(const ImputeArgs& a) {
    KvConfig kv;
    kv.set("checkpoint", a.checkpoint);
    kv.set("data", a.data);
    kv.set("out", a.out);
    kv.set("n", std::to_string(a.n));
    kv.set("seed", std::to_string(a.seed));
    kv.set("hide_target", a.hide_target ? "1" : "0");
    kv.set("point", a.point ? "1" : "0");
    echo_config("impute", kv);
    if (a.n < 1) throw vaeac::ConfigError("impute: --n must be at least 1");

    const LoadedModel m = load_model(a.checkpoint);
    const FeatureSchema& schema = m.schema();
    Dataset ds = load_conforming(a.data, schema, m.image_h(), m.image_w());
    if (a.hide_target && !schema.target_index) {
        throw vaeac::ConfigError("impute: --hide-target needs a schema with a target column");
    }

    Rng rng = vaeac::make_rng(static_cast<std::uint64_t>(a.seed), "impute");
    std::vector<std::vector<std::vector<double>>> per_row;
    std::vector<std::vector<double>> combined;
    for (const auto& original : ds.rows) {
        std::vector<double> x = original;
        if (a.hide_target) x[*schema.target_index] = vaeac::kMissing;
        const Mask b = vaeac::missing_mask(x);
        auto completions = m.sample(x, b, static_cast<std::size_t>(a.n), rng, a.point);
        for (const auto& c : completions) {
            for (std::size_t j = 0; j < b.size(); ++j) {
                if (b[j] == 0 && c[j] != original[j]) {
                    throw vaeac::NumericError("impute: sampler altered an observed cell");
                }
            }
        }
        std::vector<double> mix = vaeac::combine_imputations(schema, completions);
        // Observed cells are known exactly; combining is only for imputed cells.
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (b[j] == 0) mix[j] = x[j];
        }
        combined.push_back(std::move(mix));
        per_row.push_back(std::move(completions));
    }
    write_sample_csv(a.out, schema, per_row, &combined);
    std::cout << "imputed " << ds.n_rows() << " rows x " << a.n << " completions to " << a.out
              << "\n";
}

// --------------------------------------------------------------- sample ----

struct SampleArgs {
    std::string checkpoint, cond, out;
    long n{1};
    long seed{1};
    bool point{false};
};

void cmd_sample(const SampleArgs& a) {
    KvConfig kv;
    kv.set("checkpoint", a.checkpoint);
    if (!a.cond.empty()) kv.set("cond", a.cond);
    kv.set("out", a.out);
    kv.set("n", std::to_string(a.n));
    kv.set("seed", std::to_string(a.seed));
    kv.set("point", a.point ? "1" : "0");
    echo_config("sample", kv);
    if (a.n < 0) throw vaeac::ConfigError("sample: --n must be nonnegative");

    const LoadedModel m = load_model(a.checkpoint);
    const FeatureSchema& schema = m.schema();
    std::vector<std::vector<double>> rows;
    if (a.cond.empty()) {
        rows.push_back(std::vector<double>(schema.size(), vaeac::kMissing));
    } else {
        rows = load_conforming(a.cond, schema, m.image_h(), m.image_w()).rows;
    }

    Rng rng = vaeac::make_rng(static_cast<std::uint64_t>(a.seed), "sample");
    std::vector<std::vector<std::vector<double>>> per_row;
    for (const auto& x : rows) {
        const Mask b = vaeac::missing_mask(x);
        per_row.push_back(m.sample(x, b, static_cast<std::size_t>(a.n), rng, a.point));
    }
    write_sample_csv(a.out, schema, per_row, nullptr);
    std::cout << "sampled " << rows.size() << " x " << a.n << " rows to " << a.out << "\n";
}

// --------------------------------------------------------------- loglik ----

struct LoglikArgs {
    std::string checkpoint, data, mask, estimator{"is"}, out;
    long samples{10};
    long seed{1};
    bool hide_target{false};
};

void cmd_loglik(const LoglikArgs& a) {
    KvConfig kv;
    kv.set("checkpoint", a.checkpoint);
    kv.set("data", a.data);
    if (!a.mask.empty()) kv.set("mask", a.mask);
    kv.set("estimator", a.estimator);
    kv.set("samples", std::to_string(a.samples));
    kv.set("seed", std::to_string(a.seed));
    kv.set("hide_target", a.hide_target ? "1" : "0");
    if (!a.out.empty()) kv.set("out", a.out);
    echo_config("loglik", kv);
    if (a.estimator != "is" && a.estimator != "mc") {
        throw vaeac::ConfigError("loglik: --estimator must be is or mc");
    }
    if (a.samples < 1) throw vaeac::ConfigError("loglik: --samples must be at least 1");

    const LoadedModel m = load_model(a.checkpoint);
    const FeatureSchema& schema = m.schema();
    if (a.mask.empty() && !(a.hide_target && schema.target_index)) {
        throw vaeac::ConfigError("loglik: need --mask or --hide-target with a target column");
    }
    Dataset ds = load_conforming(a.data, schema, m.image_h(), m.image_w());

    std::optional<MaskSpec> spec;
    if (!a.mask.empty()) spec = parse_mask_for(a.mask, m.image_h(), m.image_w());
    const auto seed = static_cast<std::uint64_t>(a.seed);
    Rng mask_rng = vaeac::make_rng(seed, "loglik-mask");
    Rng est_rng = vaeac::make_rng(seed, "loglik-estimate");

    std::ofstream per_row;
    if (!a.out.empty()) {
        per_row.open(a.out);
        if (!per_row) throw vaeac::IoError("cannot open output: " + a.out);
        per_row << "row,loglik\n";
    }
    RunningStat stat;
    for (std::size_t r = 0; r < ds.n_rows(); ++r) {
        const std::vector<double>& x = ds.rows[r];
        Mask b;
        if (spec) {
            b = vaeac::sample_mask(*spec, x, mask_rng);
        } else {
            b = vaeac::missing_mask(x);
        }
        if (a.hide_target && schema.target_index) b[*schema.target_index] = 1;
        bool scoreable = false;
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (b[j] == 1 && !vaeac::is_missing(x[j])) scoreable = true;
        }
        if (!scoreable) continue;
        const double ll =
            m.loglik(x, b, a.estimator, static_cast<std::size_t>(a.samples), est_rng);
        stat.add(ll);
        if (per_row.is_open()) per_row << r << ',' << fmt(ll) << '\n';
    }
    if (stat.n == 0) throw vaeac::ShapeError("loglik: no row had scoreable cells");
    std::cout << "rows=" << stat.n << " mean_loglik=" << fmt(stat.mean())
              << " se=" << fmt(stat.se()) << " mean_nll=" << fmt(-stat.mean()) << "\n";
}

// ---------------------------------------------------------- eval-impute ----

struct EvalImputeArgs {
    std::string data, schema_config, target, model{"vaeac"}, report, dataset_name{"dataset"};
    std::string hidden{"256"}, mask{"bernoulli(0.2)"};
    long splits{5}, n{10}, epochs{30}, batch{64}, latent{8}, is_samples{10}, seed{1};
    double drop{0.5}, test_fraction{0.25}, lr{1e-3}, alpha{1.0}, val_fraction{0.25};
    bool learn_sigma{false};
    bool no_skip{false};
};

void cmd_eval_impute(const EvalImputeArgs& a) {
    KvConfig kv;
    kv.set("data", a.data);
    kv.set("schema_config", a.schema_config);
    kv.set("target", a.target);
    kv.set("model", a.model);
    kv.set("splits", std::to_string(a.splits));
    kv.set("n", std::to_string(a.n));
    kv.set("drop", fmt(a.drop));
    kv.set("test_fraction", fmt(a.test_fraction));
    kv.set("seed", std::to_string(a.seed));
    kv.set("dataset_name", a.dataset_name);
    if (!a.report.empty()) kv.set("report", a.report);
    if (a.model != "mean") {
        kv.set("epochs", std::to_string(a.epochs));
        kv.set("batch", std::to_string(a.batch));
        kv.set("lr", fmt(a.lr));
        kv.set("latent", std::to_string(a.latent));
        kv.set("hidden", a.hidden);
        kv.set("alpha", fmt(a.alpha));
        kv.set("mask", a.mask);
        kv.set("val_fraction", fmt(a.val_fraction));
        kv.set("is_samples", std::to_string(a.is_samples));
        kv.set("learn_sigma", a.learn_sigma ? "1" : "0");
        kv.set("skip", a.no_skip ? "0" : "1");
    }
    echo_config("eval-impute", kv);
    if (a.model != "vaeac" && a.model != "um" && a.model != "mean") {
        throw vaeac::ConfigError("eval-impute: --model must be vaeac, um, or mean");
    }
    if (a.splits < 1) throw vaeac::ConfigError("eval-impute: --splits must be at least 1");

    Dataset full = vaeac::load_csv(a.data, a.schema_config);
    if (!a.target.empty()) full.schema.target_index = feature_index_by_name(full.schema, a.target);
    const std::optional<std::size_t> target = full.schema.target_index;
    const FeatureSchema& schema = full.schema;

    std::vector<double> nrmse_vals, pfc_vals, score_vals;
    const auto seed = static_cast<std::uint64_t>(a.seed);
    for (long s = 0; s < a.splits; ++s) {
        const std::string tag = std::to_string(s);
        Rng split_rng = vaeac::make_rng(seed, "eval-split-" + tag);
        auto [tr, te] = vaeac::train_test_split(full, a.test_fraction, split_rng);
        const std::vector<std::vector<double>> train_truth = tr.rows;
        const std::vector<std::vector<double>> test_truth = te.rows;
        Rng drop_tr = vaeac::make_rng(seed, "eval-drop-train-" + tag);
        Rng drop_te = vaeac::make_rng(seed, "eval-drop-test-" + tag);
        vaeac::corrupt(tr, a.drop, drop_tr);
        vaeac::corrupt(te, a.drop, drop_te);
        std::vector<std::vector<double>> test_in = te.rows;
        if (target) {
            for (auto& row : test_in) row[*target] = vaeac::kMissing;
        }

        std::vector<vaeac::ImputedRow> imp_train, imp_test;
        if (a.model == "mean") {
            imp_train = vaeac::mean_impute_rows(schema, tr.rows, train_truth);
            imp_test = vaeac::mean_impute_rows(schema, test_in, test_truth, tr.rows);
        } else {
            TrainConfig cfg;
            cfg.epochs = static_cast<std::size_t>(a.epochs);
            cfg.batch = static_cast<std::size_t>(a.batch);
            cfg.lr = a.lr;
            cfg.latent_dim = static_cast<std::size_t>(a.latent);
            cfg.hidden = parse_hidden(a.hidden);
            cfg.alpha = a.alpha;
            cfg.mask_spec = a.mask;
            cfg.seed = seed + static_cast<std::uint64_t>(s);
            cfg.val_fraction = a.val_fraction;
            cfg.is_samples = static_cast<std::size_t>(a.is_samples);
            cfg.use_skip = !a.no_skip;
            cfg.learn_sigma = a.learn_sigma;
            cfg.validate();

            Dataset train_ds = tr;
            bool any_real = false;
            for (const auto& f : schema.features) {
                if (f.kind == FeatureKind::kReal) any_real = true;
            }
            if (any_real) vaeac::normalize(train_ds);

            vaeac::RowSampler sampler;
            if (a.model == "vaeac") {
                vaeac::TrainResult r = vaeac::train_vaeac(train_ds, cfg);
                auto model = std::make_shared<vaeac::VaeacModel>(std::move(r.model));
                sampler = [model](const std::vector<double>& x, const Mask& b, std::size_t n,
                                  Rng& rng) {
                    return vaeac::conditional_sample(*model, x, b, n, rng, false);
                };
            } else {
                vaeac::UmTrainResult r = vaeac::um_train(train_ds, cfg);
                auto model = std::make_shared<vaeac::UmModel>(std::move(r.model));
                sampler = [model](const std::vector<double>& x, const Mask& b, std::size_t n,
                                  Rng& rng) {
                    return vaeac::um_conditional_sample(*model, x, b, n, rng, false);
                };
            }
            Rng imp_tr = vaeac::make_rng(seed, "eval-impute-train-" + tag);
            Rng imp_te = vaeac::make_rng(seed, "eval-impute-test-" + tag);
            imp_train = vaeac::impute_rows(schema, sampler, tr.rows, train_truth,
                                           static_cast<std::size_t>(a.n), imp_tr);
            imp_test = vaeac::impute_rows(schema, sampler, test_in, test_truth,
                                          static_cast<std::size_t>(a.n), imp_te);
        }

        try {
            nrmse_vals.push_back(vaeac::nrmse(schema, imp_test, target));
        } catch (const vaeac::ShapeError&) {
        }
        try {
            pfc_vals.push_back(vaeac::pfc(schema, imp_test, target));
        } catch (const vaeac::ShapeError&) {
        }
        if (target) {
            score_vals.push_back(vaeac::downstream_eval(schema, *target, imp_train, imp_test));
        }
        std::cout << "split=" << s;
        if (!nrmse_vals.empty() && nrmse_vals.size() == static_cast<std::size_t>(s) + 1) {
            std::cout << " nrmse=" << fmt(nrmse_vals.back());
        }
        if (!pfc_vals.empty() && pfc_vals.size() == static_cast<std::size_t>(s) + 1) {
            std::cout << " pfc=" << fmt(pfc_vals.back());
        }
        if (target) std::cout << " downstream=" << fmt(score_vals.back());
        std::cout << "\n";
    }

    std::vector<vaeac::MetricRow> rows;
    if (!nrmse_vals.empty()) rows.push_back({"nrmse", a.dataset_name, nrmse_vals});
    if (!pfc_vals.empty()) rows.push_back({"pfc", a.dataset_name, pfc_vals});
    if (!score_vals.empty()) {
        const bool classification =
            schema.features[*target].kind == FeatureKind::kCategorical;
        rows.push_back({classification ? "accuracy" : "r2", a.dataset_name, score_vals});
    }
    if (!a.report.empty()) vaeac::write_metric_report(a.report, rows);
    for (const auto& row : rows) {
        RunningStat stat;
        for (double v : row.split_values) stat.add(v);
        std::cout << row.metric << " mean=" << fmt(stat.mean()) << " std=" << fmt(stat.sd())
                  << "\n";
    }
}

// --------------------------------------------------------- eval-inpaint ----

struct EvalInpaintArgs {
    std::string checkpoint, train_data, data, mask, report, dataset_name{"images"};
    long k{10}, nll_samples{100}, seed{1}, max_rows{0};
    double max_value{1.0};
};

void cmd_eval_inpaint(const EvalInpaintArgs& a) {
    KvConfig kv;
    kv.set("checkpoint", a.checkpoint);
    kv.set("train_data", a.train_data);
    kv.set("data", a.data);
    kv.set("mask", a.mask);
    kv.set("k", std::to_string(a.k));
    kv.set("nll_samples", std::to_string(a.nll_samples));
    kv.set("seed", std::to_string(a.seed));
    kv.set("max_rows", std::to_string(a.max_rows));
    kv.set("max_value", fmt(a.max_value));
    kv.set("dataset_name", a.dataset_name);
    if (!a.report.empty()) kv.set("report", a.report);
    echo_config("eval-inpaint", kv);
    if (a.k < 1) throw vaeac::ConfigError("eval-inpaint: --k must be at least 1");
    if (a.nll_samples < 1) throw vaeac::ConfigError("eval-inpaint: --nll-samples >= 1");

    const LoadedModel m = load_model(a.checkpoint);
    const FeatureSchema& schema = m.schema();
    Dataset test = load_conforming(a.data, schema, m.image_h(), m.image_w());
    Dataset train = load_conforming(a.train_data, schema, m.image_h(), m.image_w());

    MaskSpec spec = parse_mask_for(a.mask, m.image_h(), m.image_w());
    const auto seed = static_cast<std::uint64_t>(a.seed);
    Rng mask_rng = vaeac::make_rng(seed, "inpaint-mask");
    Rng sample_rng = vaeac::make_rng(seed, "inpaint-sample");
    Rng est_rng = vaeac::make_rng(seed, "inpaint-estimate");

    std::size_t limit = test.n_rows();
    if (a.max_rows > 0) limit = std::min(limit, static_cast<std::size_t>(a.max_rows));

    RunningStat psnr1, psnr_best, is_nll, mc_nll;
    std::size_t exact1 = 0, exact_best = 0;
    std::vector<std::pair<std::vector<double>, Mask>> nb_pairs;
    for (std::size_t r = 0; r < limit; ++r) {
        const std::vector<double>& x = test.rows[r];
        const Mask b = vaeac::sample_mask(spec, x, mask_rng);
        nb_pairs.emplace_back(x, b);
        const auto completions =
            m.sample(x, b, static_cast<std::size_t>(a.k), sample_rng, false);
        const double p1 = vaeac::psnr(x, completions[0], a.max_value);
        const double pb = vaeac::best_of_k_psnr(x, completions, a.max_value);
        if (std::isinf(p1)) {
            ++exact1;
        } else {
            psnr1.add(p1);
        }
        if (std::isinf(pb)) {
            ++exact_best;
        } else {
            psnr_best.add(pb);
        }
        is_nll.add(-m.loglik(x, b, "is", static_cast<std::size_t>(a.nll_samples), est_rng));
        if (m.kind == "vaeac") {
            mc_nll.add(-m.loglik(x, b, "mc", static_cast<std::size_t>(a.nll_samples), est_rng));
        }
    }
    if (nb_pairs.empty()) throw vaeac::ShapeError("eval-inpaint: no test rows");
    const double nb = vaeac::naive_bayes_nll(train.rows, nb_pairs);

    std::vector<vaeac::MetricRow> rows;
    rows.push_back({"psnr_1", a.dataset_name, {psnr1.mean()}});
    rows.push_back({"psnr_best_of_" + std::to_string(a.k), a.dataset_name, {psnr_best.mean()}});
    rows.push_back({"is_nll_" + std::to_string(a.nll_samples), a.dataset_name, {is_nll.mean()}});
    if (mc_nll.n > 0) {
        rows.push_back(
            {"mc_nll_" + std::to_string(a.nll_samples), a.dataset_name, {mc_nll.mean()}});
    }
    rows.push_back({"naive_bayes_nll", a.dataset_name, {nb}});
    if (!a.report.empty()) vaeac::write_metric_report(a.report, rows);

    std::cout << "rows=" << nb_pairs.size() << "\n";
    std::cout << "psnr_1 mean=" << fmt(psnr1.mean()) << " se=" << fmt(psnr1.se())
              << " exact=" << exact1 << "\n";
    std::cout << "psnr_best_of_" << a.k << " mean=" << fmt(psnr_best.mean())
              << " se=" << fmt(psnr_best.se()) << " exact=" << exact_best << "\n";
    std::cout << "is_nll_" << a.nll_samples << " mean=" << fmt(is_nll.mean())
              << " se=" << fmt(is_nll.se()) << "\n";
    if (mc_nll.n > 0) {
        std::cout << "mc_nll_" << a.nll_samples << " mean=" << fmt(mc_nll.mean())
                  << " se=" << fmt(mc_nll.se()) << "\n";
    }
    std::cout << "naive_bayes_nll mean=" << fmt(nb) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional generation toolkit: train one model of all conditionals, "
                 "then sample, impute, and evaluate"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* s_synth = app.add_subcommand("synth", "Write the 8-mode 2-D mixture benchmark");
    s_synth->add_option("--n", synth.n, "Rows to draw");
    s_synth->add_option("--seed", synth.seed, "Random seed");
    s_synth->add_option("--out", synth.out, "Output CSV")->required();
    s_synth->add_option("--means-out", synth.means_out, "Optional CSV of component means");

    PrepareArgs prep;
    CLI::App* s_prep = app.add_subcommand("prepare", "Build or convert a dataset");
    s_prep->add_option("--csv", prep.csv, "Input CSV");
    s_prep->add_option("--idx", prep.idx, "Input IDX image file");
    s_prep->add_option("--schema-config", prep.schema_config, "Column kinds for --csv");
    s_prep->add_option("--make", prep.make, "Generate a corpus: factor-table | strokes");
    s_prep->add_option("--n", prep.n, "Rows for --make");
    s_prep->add_option("--image-h", prep.image_h, "Stroke image height");
    s_prep->add_option("--image-w", prep.image_w, "Stroke image width");
    s_prep->add_option("--target", prep.target, "Mark a column as the prediction target");
    s_prep->add_option("--drop", prep.drop, "Fraction of non-target cells set missing");
    s_prep->add_option("--split", prep.split, "Test fraction; writes .train/.test CSVs");
    s_prep->add_option("--seed", prep.seed, "Random seed");
    s_prep->add_option("--out", prep.out, "Output path prefix")->required();
    s_prep->add_option("--schema-out", prep.schema_out, "Schema file (default <out>.schema)");

    TrainArgs tr;
    CLI::App* s_train = app.add_subcommand("train", "Train a model and save a checkpoint");
    s_train->add_option("--config", tr.config, "key=value config file; flags override");
    tr.o_data = s_train->add_option("--data", tr.data, "Training CSV or IDX file");
    tr.o_schema = s_train->add_option("--schema", tr.schema, "Schema file from prepare");
    tr.o_model = s_train->add_option("--model", tr.model, "vaeac | um");
    tr.o_out = s_train->add_option("--out", tr.out, "Checkpoint path");
    tr.o_target = s_train->add_option("--target", tr.target, "Target column name");
    tr.o_hidden = s_train->add_option("--hidden", tr.hidden, "Hidden widths, e.g. 256,256");
    tr.o_mask = s_train->add_option("--mask", tr.mask, "Training mask spec");
    tr.o_epochs = s_train->add_option("--epochs", tr.epochs, "Training epochs");
    tr.o_batch = s_train->add_option("--batch", tr.batch, "Minibatch size");
    tr.o_latent = s_train->add_option("--latent", tr.latent, "Latent dimension");
    tr.o_is = s_train->add_option("--is-samples", tr.is_samples, "Validation IS samples");
    tr.o_seed = s_train->add_option("--seed", tr.seed, "Random seed");
    tr.o_lr = s_train->add_option("--lr", tr.lr, "Learning rate");
    tr.o_alpha = s_train->add_option("--alpha", tr.alpha, "Hybrid objective weight");
    tr.o_val = s_train->add_option("--val-fraction", tr.val_fraction, "Validation share");
    tr.o_skip = s_train->add_option("--skip", tr.skip, "1 = skip connections (default)");
    tr.o_learn = s_train->add_option("--learn-sigma", tr.learn_sigma,
                                     "1 = learn output sigma, 0 = fixed at 1");
    tr.o_klw = s_train->add_option("--kl-warmup", tr.kl_warmup,
                                   "Ramp the latent-divergence weight over N epochs");
    tr.o_norm = s_train->add_option("--normalize", tr.normalize, "1 = normalize reals");

    ImputeArgs imp;
    CLI::App* s_imp = app.add_subcommand("impute", "Complete missing cells of a dataset");
    s_imp->add_option("--checkpoint", imp.checkpoint, "Model checkpoint")->required();
    s_imp->add_option("--data", imp.data, "Rows with missing cells")->required();
    s_imp->add_option("--out", imp.out, "Output CSV")->required();
    s_imp->add_option("--n", imp.n, "Completions per row");
    s_imp->add_option("--seed", imp.seed, "Random seed");
    s_imp->add_flag("--hide-target", imp.hide_target, "Also treat the target column as missing");
    s_imp->add_flag("--point", imp.point, "Point completions (means) for real features");

    SampleArgs smp;
    CLI::App* s_smp = app.add_subcommand("sample", "Draw conditional or joint samples");
    s_smp->add_option("--checkpoint", smp.checkpoint, "Model checkpoint")->required();
    s_smp->add_option("--cond", smp.cond, "Conditioning rows (empty cells generated); "
                                          "omit for joint samples");
    s_smp->add_option("--out", smp.out, "Output CSV")->required();
    s_smp->add_option("--n", smp.n, "Samples per conditioning row");
    s_smp->add_option("--seed", smp.seed, "Random seed");
    s_smp->add_flag("--point", smp.point, "Point samples (means) for real features");

    LoglikArgs ll;
    CLI::App* s_ll = app.add_subcommand("loglik", "Estimate conditional log-likelihood");
    s_ll->add_option("--checkpoint", ll.checkpoint, "Model checkpoint")->required();
    s_ll->add_option("--data", ll.data, "Ground-truth rows")->required();
    s_ll->add_option("--mask", ll.mask, "Mask spec drawn per row (cells to score)");
    s_ll->add_option("--estimator", ll.estimator, "is | mc (latent-variable model only)");
    s_ll->add_option("--samples", ll.samples, "Estimator samples per row");
    s_ll->add_option("--seed", ll.seed, "Random seed");
    s_ll->add_option("--out", ll.out, "Optional per-row CSV");
    s_ll->add_flag("--hide-target", ll.hide_target, "Score the target column");

    EvalImputeArgs ei;
    CLI::App* s_ei = app.add_subcommand(
        "eval-impute", "Drop values, train, impute, and score the full tabular protocol");
    s_ei->add_option("--data", ei.data, "Full CSV (no missing values needed)")->required();
    s_ei->add_option("--schema-config", ei.schema_config, "Column kinds file")->required();
    s_ei->add_option("--target", ei.target, "Target column for the downstream task");
    s_ei->add_option("--model", ei.model, "vaeac | um | mean");
    s_ei->add_option("--splits", ei.splits, "Independent repetitions");
    s_ei->add_option("--n", ei.n, "Completions per row");
    s_ei->add_option("--drop", ei.drop, "Fraction of cells dropped");
    s_ei->add_option("--test-fraction", ei.test_fraction, "Test share of each split");
    s_ei->add_option("--seed", ei.seed, "Random seed");
    s_ei->add_option("--report", ei.report, "Metric report CSV");
    s_ei->add_option("--dataset-name", ei.dataset_name, "Label in the report");
    s_ei->add_option("--epochs", ei.epochs, "Training epochs");
    s_ei->add_option("--batch", ei.batch, "Minibatch size");
    s_ei->add_option("--lr", ei.lr, "Learning rate");
    s_ei->add_option("--latent", ei.latent, "Latent dimension");
    s_ei->add_option("--hidden", ei.hidden, "Hidden widths");
    s_ei->add_option("--alpha", ei.alpha, "Hybrid objective weight");
    s_ei->add_option("--mask", ei.mask, "Training mask spec");
    s_ei->add_option("--val-fraction", ei.val_fraction, "Validation share");
    s_ei->add_option("--is-samples", ei.is_samples, "Validation IS samples");
    s_ei->add_flag("--learn-sigma", ei.learn_sigma, "Learn output sigma");
    s_ei->add_flag("--no-skip", ei.no_skip, "Disable skip connections");

    EvalInpaintArgs ep;
    CLI::App* s_ep = app.add_subcommand("eval-inpaint",
                                        "Score inpaintings: PSNR, estimator NLL, baseline");
    s_ep->add_option("--checkpoint", ep.checkpoint, "Model checkpoint")->required();
    s_ep->add_option("--train-data", ep.train_data, "Train images for the baseline")
        ->required();
    s_ep->add_option("--data", ep.data, "Test images")->required();
    s_ep->add_option("--mask", ep.mask, "Mask spec drawn per image")->required();
    s_ep->add_option("--k", ep.k, "Inpaintings per image");
    s_ep->add_option("--nll-samples", ep.nll_samples, "Estimator samples");
    s_ep->add_option("--seed", ep.seed, "Random seed");
    s_ep->add_option("--max-rows", ep.max_rows, "Cap on test rows (0 = all)");
    s_ep->add_option("--max-value", ep.max_value, "PSNR peak value");
    s_ep->add_option("--report", ep.report, "Metric report CSV");
    s_ep->add_option("--dataset-name", ep.dataset_name, "Label in the report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the usage error to stderr
        return 1;
    }

    try {
        if (s_synth->parsed()) {
            cmd_synth(synth);
        } else if (s_prep->parsed()) {
            cmd_prepare(prep);
        } else if (s_train->parsed()) {
            cmd_train(tr);
        } else if (s_imp->parsed()) {
            cmd_impute(imp);
        } else if (s_smp->parsed()) {
            cmd_sample(smp);
        } else if (s_ll->parsed()) {
            cmd_loglik(ll);
        } else if (s_ei->parsed()) {
            cmd_eval_impute(ei);
        } else if (s_ep->parsed()) {
            cmd_eval_inpaint(ep);
        }
    } catch (const vaeac::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
