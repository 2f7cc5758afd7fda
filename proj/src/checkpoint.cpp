#include "vaeac/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace vaeac {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void check_token(const std::string& s, const char* what) {
    if (s.find('|') != std::string::npos || s.find(',') != std::string::npos ||
        s.find('\n') != std::string::npos) {
        throw IoError(std::string("checkpoint: ") + what + " '" + s +
                      "' contains a reserved delimiter");
    }
}

double req_double(const KvConfig& kv, const std::string& key) {
    if (!kv.has(key)) throw IoError("checkpoint: missing header key '" + key + "'");
    return kv.get_double(key, 0.0);
}

long req_long(const KvConfig& kv, const std::string& key) {
    if (!kv.has(key)) throw IoError("checkpoint: missing header key '" + key + "'");
    return kv.get_long(key, 0);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void save_checkpoint_file(const std::string& path, const CheckpointData& ck) {
    std::ostringstream head;
    for (const auto& [k, v] : ck.header.entries) {
        if (k == "param_blob_doubles" || k.rfind("param_shape.", 0) == 0 || k == "param_count") {
            throw IoError("checkpoint: header key '" + k + "' is reserved");
        }
        head << k << "=" << v << "\n";
    }
    head << "param_count=" << ck.params.size() << "\n";
    std::size_t total = 0;
    for (std::size_t j = 0; j < ck.params.size(); ++j) {
        const Tensor& t = ck.params[j];
        head << "param_shape." << j << "=";
        for (std::size_t i = 0; i < t.shape.size(); ++i) head << (i ? "," : "") << t.shape[i];
        head << "\n";
        total += t.numel();
    }
    head << "param_blob_doubles=" << total << "\n";

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    const std::string h = head.str();
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const Tensor& t : ck.params) {
        for (double v : t.data) {
            const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
            unsigned char bytes[8];
            for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(u >> (8 * i));
            out.write(reinterpret_cast<const char*>(bytes), 8);
        }
    }
    if (!out) throw IoError("checkpoint: write to '" + path + "' failed");
}

CheckpointData load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");

    std::string header_text;
    std::string line;
    std::size_t blob_doubles = 0;
    bool saw_blob_marker = false;
    while (std::getline(in, line)) {
        header_text += line;
        header_text += "\n";
        if (line.rfind("param_blob_doubles=", 0) == 0) {
            blob_doubles = static_cast<std::size_t>(std::stoull(line.substr(19)));
            saw_blob_marker = true;
            break;
        }
    }
    if (!saw_blob_marker) throw IoError("checkpoint: '" + path + "' has no parameter blob marker");

    CheckpointData ck;
    ck.header = KvConfig::parse_text(header_text);

    const std::size_t count = static_cast<std::size_t>(req_long(ck.header, "param_count"));
    std::vector<std::vector<std::size_t>> shapes(count);
    std::size_t expect = 0;
    for (std::size_t j = 0; j < count; ++j) {
        const std::string key = "param_shape." + std::to_string(j);
        if (!ck.header.has(key)) throw IoError("checkpoint: missing '" + key + "'");
        for (const std::string& tok : split(ck.header.get_string(key), ',')) {
            shapes[j].push_back(static_cast<std::size_t>(std::stoull(tok)));
        }
        expect += Tensor::numel_of(shapes[j]);
    }
    if (expect != blob_doubles) {
        throw IoError("checkpoint: parameter shapes disagree with blob size");
    }

    std::vector<double> blob(blob_doubles);
    for (std::size_t i = 0; i < blob_doubles; ++i) {
        unsigned char bytes[8];
        if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
            throw IoError("checkpoint: '" + path + "' is truncated");
        }
        std::uint64_t u = 0;
        for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(bytes[k]) << (8 * k);
        blob[i] = std::bit_cast<double>(u);
    }

    std::size_t off = 0;
    for (std::size_t j = 0; j < count; ++j) {
        Tensor t;
        t.shape = shapes[j];
        t.data.assign(blob.begin() + off, blob.begin() + off + Tensor::numel_of(shapes[j]));
        off += t.numel();
        ck.params.push_back(std::move(t));
    }
    return ck;
}

void schema_to_header(const FeatureSchema& schema, std::size_t image_h, std::size_t image_w,
                      KvConfig& header) {
    header.set("n_features", std::to_string(schema.size()));
    header.set("image_h", std::to_string(image_h));
    header.set("image_w", std::to_string(image_w));
    if (schema.target_index) header.set("target_index", std::to_string(*schema.target_index));
    for (std::size_t i = 0; i < schema.size(); ++i) {
        const Feature& f = schema.features[i];
        check_token(f.name, "feature name");
        std::ostringstream v;
        if (f.kind == FeatureKind::kReal) {
            v << "real|" << f.name << "|" << fmt_double(f.mean) << "|" << fmt_double(f.std) << "|"
              << (f.normalized ? 1 : 0);
        } else {
            v << "categorical|" << f.name << "|";
            for (std::size_t k = 0; k < f.labels.size(); ++k) {
                check_token(f.labels[k], "category label");
                v << (k ? "," : "") << f.labels[k];
            }
        }
        header.set("feature." + std::to_string(i), v.str());
    }
}

FeatureSchema schema_from_header(const KvConfig& header, std::size_t* image_h,
                                 std::size_t* image_w) {
    FeatureSchema schema;
    const std::size_t n = static_cast<std::size_t>(req_long(header, "n_features"));
    if (image_h) *image_h = static_cast<std::size_t>(req_long(header, "image_h"));
    if (image_w) *image_w = static_cast<std::size_t>(req_long(header, "image_w"));
    if (header.has("target_index")) {
        schema.target_index = static_cast<std::size_t>(header.get_long("target_index", 0));
    }
    for (std::size_t i = 0; i < n; ++i) {
        const std::string key = "feature." + std::to_string(i);
        if (!header.has(key)) throw IoError("checkpoint: missing '" + key + "'");
        const std::vector<std::string> parts = split(header.get_string(key), '|');
        Feature f;
        if (parts.size() == 5 && parts[0] == "real") {
            f.kind = FeatureKind::kReal;
            f.name = parts[1];
            f.mean = std::stod(parts[2]);
            f.std = std::stod(parts[3]);
            f.normalized = parts[4] == "1";
        } else if (parts.size() == 3 && parts[0] == "categorical") {
            f.kind = FeatureKind::kCategorical;
            f.name = parts[1];
            f.labels = split(parts[2], ',');
        } else {
            throw IoError("checkpoint: malformed feature line '" + key + "'");
        }
        schema.features.push_back(std::move(f));
    }
    return schema;
}

namespace {

void config_to_header(const TrainConfig& c, const VaeacCheckpointInfo& info, KvConfig& h) {
    h.set("latent_dim", std::to_string(c.latent_dim));
    std::ostringstream hidden;
    for (std::size_t i = 0; i < c.hidden.size(); ++i) hidden << (i ? "," : "") << c.hidden[i];
    h.set("hidden", hidden.str());
    h.set("epochs", std::to_string(c.epochs));
    h.set("batch", std::to_string(c.batch));
    h.set("lr", fmt_double(c.lr));
    h.set("alpha", fmt_double(c.alpha));
    h.set("sigma_mu", fmt_double(c.sigma_mu));
    h.set("sigma_sigma", fmt_double(c.sigma_sigma));
    h.set("val_fraction", fmt_double(c.val_fraction));
    h.set("is_samples", std::to_string(c.is_samples));
    h.set("seed", std::to_string(c.seed));
    h.set("use_skip", c.use_skip ? "1" : "0");
    h.set("learn_sigma", c.learn_sigma ? "1" : "0");
    h.set("kl_warmup_epochs", std::to_string(c.kl_warmup_epochs));
    h.set("mask_spec", c.mask_spec);
    h.set("best_epoch", std::to_string(info.best_epoch));
    h.set("best_val_loglik", fmt_double(info.best_val_loglik));
}

TrainConfig config_from_header(const KvConfig& h, VaeacCheckpointInfo* info) {
    TrainConfig cfg;
    cfg.latent_dim = static_cast<std::size_t>(req_long(h, "latent_dim"));
    cfg.hidden.clear();
    for (const std::string& tok : split(h.get_string("hidden"), ',')) {
        if (!tok.empty()) cfg.hidden.push_back(static_cast<std::size_t>(std::stoull(tok)));
    }
    cfg.epochs = static_cast<std::size_t>(req_long(h, "epochs"));
    cfg.batch = static_cast<std::size_t>(req_long(h, "batch"));
    cfg.lr = req_double(h, "lr");
    cfg.alpha = req_double(h, "alpha");
    cfg.sigma_mu = req_double(h, "sigma_mu");
    cfg.sigma_sigma = req_double(h, "sigma_sigma");
    cfg.val_fraction = req_double(h, "val_fraction");
    cfg.is_samples = static_cast<std::size_t>(req_long(h, "is_samples"));
    cfg.seed = static_cast<std::uint64_t>(req_long(h, "seed"));
    cfg.use_skip = req_long(h, "use_skip") != 0;
    cfg.learn_sigma = req_long(h, "learn_sigma") != 0;
    // Absent in checkpoints written before the warm-up option existed.
    cfg.kl_warmup_epochs = static_cast<std::size_t>(h.get_long("kl_warmup_epochs", 0));
    cfg.mask_spec = h.get_string("mask_spec");
    if (info) {
        info->best_epoch = static_cast<std::size_t>(req_long(h, "best_epoch"));
        info->best_val_loglik = req_double(h, "best_val_loglik");
    }
    return cfg;
}

void copy_params_checked(std::vector<Tensor*> params, const std::vector<Tensor>& stored) {
    if (params.size() != stored.size()) {
        throw IoError("checkpoint: parameter count disagrees with the architecture");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->shape != stored[i].shape) {
            throw IoError("checkpoint: parameter " + std::to_string(i) + " has shape " +
                          stored[i].shape_str() + ", expected " + params[i]->shape_str());
        }
        *params[i] = stored[i];
    }
}

}  // namespace

void save_vaeac_checkpoint(const std::string& path, const VaeacModel& model,
                           const VaeacCheckpointInfo& info) {
    CheckpointData ck;
    KvConfig& h = ck.header;
    h.set("format", "conditional-generator-checkpoint-v1");
    h.set("model_kind", "vaeac");
    config_to_header(model.cfg, info, h);
    schema_to_header(model.schema, model.image_h, model.image_w, h);
    for (const Tensor* t : model.params()) ck.params.push_back(*t);
    save_checkpoint_file(path, ck);
}

VaeacModel load_vaeac_checkpoint(const std::string& path, VaeacCheckpointInfo* info) {
    const CheckpointData ck = load_checkpoint_file(path);
    const KvConfig& h = ck.header;
    if (h.get_string("model_kind", "") != "vaeac") {
        throw IoError("checkpoint: '" + path + "' does not hold a latent-variable model");
    }
    TrainConfig cfg = config_from_header(h, info);
    std::size_t ih = 0, iw = 0;
    FeatureSchema schema = schema_from_header(h, &ih, &iw);

    Rng dummy = make_rng(0, "checkpoint-shape");
    VaeacModel model = VaeacModel::make(std::move(schema), std::move(cfg), dummy, ih, iw);
    copy_params_checked(model.params(), ck.params);
    return model;
}

void save_um_checkpoint(const std::string& path, const UmModel& model,
                        const VaeacCheckpointInfo& info) {
    CheckpointData ck;
    KvConfig& h = ck.header;
    h.set("format", "conditional-generator-checkpoint-v1");
    h.set("model_kind", "marginalizer");
    config_to_header(model.cfg, info, h);
    schema_to_header(model.feats, model.image_h, model.image_w, h);
    for (const Tensor* t : model.params()) ck.params.push_back(*t);
    save_checkpoint_file(path, ck);
}

UmModel load_um_checkpoint(const std::string& path, VaeacCheckpointInfo* info) {
    const CheckpointData ck = load_checkpoint_file(path);
    const KvConfig& h = ck.header;
    if (h.get_string("model_kind", "") != "marginalizer") {
        throw IoError("checkpoint: '" + path + "' does not hold a marginalizer model");
    }
    TrainConfig cfg = config_from_header(h, info);
    std::size_t ih = 0, iw = 0;
    FeatureSchema schema = schema_from_header(h, &ih, &iw);

    Rng dummy = make_rng(0, "checkpoint-shape");
    UmModel model = UmModel::make(std::move(schema), std::move(cfg), dummy, ih, iw);
    copy_params_checked(model.params(), ck.params);
    return model;
}

std::string checkpoint_model_kind(const std::string& path) {
    return load_checkpoint_file(path).header.get_string("model_kind", "");
}

}  // namespace vaeac
