#pragma once

#include <string>
#include <vector>

#include "vaeac/config.hpp"
#include "vaeac/marginalizer.hpp"
#include "vaeac/model.hpp"
#include "vaeac/tensor.hpp"

namespace vaeac {

// On-disk model container: a text header (key=value lines, ending with
// `param_blob_doubles=<count>`) followed by the raw little-endian 64-bit
// parameter arrays, concatenated in declaration order. Round trips are
// bit-exact.
struct CheckpointData {
    KvConfig header;
    std::vector<Tensor> params;
};

void save_checkpoint_file(const std::string& path, const CheckpointData& ck);
CheckpointData load_checkpoint_file(const std::string& path);

// Schema <-> header helpers shared by all model kinds.
void schema_to_header(const FeatureSchema& schema, std::size_t image_h, std::size_t image_w,
                      KvConfig& header);
FeatureSchema schema_from_header(const KvConfig& header, std::size_t* image_h,
                                 std::size_t* image_w);

struct VaeacCheckpointInfo {
    std::size_t best_epoch{0};
    double best_val_loglik{0.0};
};

void save_vaeac_checkpoint(const std::string& path, const VaeacModel& model,
                           const VaeacCheckpointInfo& info);
VaeacModel load_vaeac_checkpoint(const std::string& path, VaeacCheckpointInfo* info = nullptr);

void save_um_checkpoint(const std::string& path, const UmModel& model,
                        const VaeacCheckpointInfo& info);
UmModel load_um_checkpoint(const std::string& path, VaeacCheckpointInfo* info = nullptr);

// The model-kind tag of a saved checkpoint ("vaeac" or "marginalizer"),
// read from the header alone.
std::string checkpoint_model_kind(const std::string& path);

}  // namespace vaeac
