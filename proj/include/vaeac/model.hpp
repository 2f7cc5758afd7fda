#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaeac/adam.hpp"
#include "vaeac/data.hpp"
#include "vaeac/distributions.hpp"
#include "vaeac/masks.hpp"
#include "vaeac/tape.hpp"

namespace vaeac {

struct TrainConfig {
    std::size_t epochs{30};
    std::size_t batch{64};
    double lr{1e-3};
    std::size_t latent_dim{8};
    std::vector<std::size_t> hidden{256};
    double alpha{1.0};        // objective mixture weight; 1 = pure VLB
    double sigma_mu{1e4};     // prior-mean regularizer scale
    double sigma_sigma{1e-4}; // prior-sigma regularizer scale
    double val_fraction{0.25};
    std::size_t is_samples{10};  // S for validation likelihood
    std::uint64_t seed{1};
    bool use_skip{true};      // concatenate [x_obs, b] into the decoder input
    bool learn_sigma{false};  // per-real-feature output sigma head (else fixed 1)
    // Linear ramp of the latent-divergence coefficient from 1/k to 1 over the
    // first k epochs (0 = off). Deep generative stacks can otherwise settle
    // into ignoring the latent code early, when the divergence term is cheap
    // to zero out but the decoder cannot yet exploit the code.
    std::size_t kl_warmup_epochs{0};
    std::string mask_spec{"bernoulli(0.2)"};

    void validate() const;
};

// Dense relu stack; linear output layer.
struct Mlp {
    std::vector<Tensor> weights;  // [in, out] per layer
    std::vector<Tensor> biases;   // [out] per layer

    // He-uniform init for weights, zero biases.
    static Mlp make(const std::vector<std::size_t>& widths, Rng& rng);

    std::size_t in_width() const { return weights.front().shape[0]; }
    std::size_t out_width() const { return weights.back().shape[1]; }
    void collect(std::vector<Tensor*>& out);
    void collect(std::vector<const Tensor*>& out) const;
};

// An Mlp bound onto a tape as gradient leaves.
struct BoundMlp {
    std::vector<Node> weights, biases;
    Node forward(Tape& t, Node x) const;
};
BoundMlp bind_mlp(Tape& t, const Mlp& m);

// Three-network conditional model: prior and proposal output diagonal
// Gaussian parameters over the latent code; the generative net outputs
// per-feature distribution parameters.
struct VaeacModel {
    FeatureSchema schema;
    TrainConfig cfg;
    std::size_t image_h{0}, image_w{0};
    Mlp prior, proposal, generative;

    static VaeacModel make(FeatureSchema schema, TrainConfig cfg, Rng& rng,
                           std::size_t image_h = 0, std::size_t image_w = 0);

    std::size_t n_features() const { return schema.size(); }
    // One-hot encoded instance width: 1 slot per real, K per categorical.
    std::size_t enc_width() const;
    // Generative head width: 1 (+1 with learn_sigma) per real, K logits per
    // categorical.
    std::size_t gen_width() const;
    // Column offset of feature i in the generative head.
    std::size_t gen_offset(std::size_t i) const;

    // All trainable tensors: prior, proposal, generative, layer by layer.
    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;
};

// Encode one instance into `out` (enc_width doubles): a slot is blanked when
// its feature is flagged in `zero` or the cell is missing.
void encode_row(const FeatureSchema& schema, const std::vector<double>& x, const Mask& zero,
                double* out);


// Per-feature output distribution parameters decoded from the raw head.
struct GenerativeOutput {
    std::vector<double> mean;                 // real features (by feature index)
    std::vector<double> sigma;                // real features; 1.0 when fixed
    std::vector<std::vector<double>> logits;  // categorical features
};

// Width/offset/decoding of a per-feature parameter head: one mean (plus one
// raw sigma slot when sigma_head) per real feature, K logits per categorical.
std::size_t feature_head_width(const FeatureSchema& schema, bool sigma_head);
std::size_t feature_head_offset(const FeatureSchema& schema, bool sigma_head, std::size_t i);
GenerativeOutput decode_feature_heads(const FeatureSchema& schema, bool sigma_head,
                                      const double* head);

// Enforces widths, 0/1 mask entries, and missing-implies-unobserved.
void check_mask_contract(const FeatureSchema& schema, const std::vector<double>& x, const Mask& b,
                         const char* who);

// Plain forward pass, values only.
Tensor mlp_value(const Mlp& m, const Tensor& x);

// Tape node of per-row sums of unobserved-and-present log-densities under the
// head block; selection is folded into constants so every other head slot
// gets an exactly-zero gradient.
Node reconstruction_rows(Tape& t, Node head, const FeatureSchema& schema, bool sigma_head,
                         const std::vector<std::vector<double>>& rows,
                         const std::vector<Mask>& masks);

// Single-instance forwards (tests, sampling, estimators).
GaussianParams prior_forward(const VaeacModel& m, const std::vector<double>& x, const Mask& b);
// The proposal additionally sees the missing mask (derived from x) and the
// full instance with only missing cells blanked. Enforces x_i missing => b_i=1.
GaussianParams proposal_forward(const VaeacModel& m, const std::vector<double>& x, const Mask& b);
GenerativeOutput generative_forward(const VaeacModel& m, const std::vector<double>& z,
                                    const std::vector<double>& x, const Mask& b);

// Sum of per-feature log-densities over unobserved-and-present cells.
double reconstruction_log_prob(const FeatureSchema& schema, const GenerativeOutput& out,
                               const std::vector<double>& x, const Mask& b);
double reconstruction_log_prob(const VaeacModel& m, const GenerativeOutput& out,
                               const std::vector<double>& x, const Mask& b);

// One regularizer term (per latent dimension) in the objective.
double prior_regularizer(double mu, double sigma, double sigma_mu, double sigma_sigma);

struct VlbParts {
    double recon{0.0}, kl{0.0}, reg{0.0};
    double total() const { return recon - kl + reg; }
};

// Single-sample variational bound at injected proposal noise.
VlbParts vaeac_vlb(const VaeacModel& m, const std::vector<double>& x, const Mask& b,
                   const std::vector<double>& eps);
// Reconstruction at a prior draw; the proposal plays no part.
double gsnn_objective(const VaeacModel& m, const std::vector<double>& x, const Mask& b,
                      const std::vector<double>& eps);
// alpha-weighted mix with independent noise draws per branch.
double hybrid_objective(const VaeacModel& m, const std::vector<double>& x, const Mask& b,
                        double alpha, Rng& rng);

// Minibatch objective on a tape: value + gradients for every parameter.
class BatchObjective {
  public:
    // eps_vlb: [n, d] proposal noise (alpha > 0); eps_gsnn: [n, d] prior
    // noise (alpha < 1); pass empty tensors for unused branches. kl_scale
    // multiplies the latent-divergence term only (warm-up schedules pass
    // values below 1); mean_parts() always reports the unscaled divergence.
    BatchObjective(const VaeacModel& model, const std::vector<std::vector<double>>& rows,
                   const std::vector<Mask>& masks, double alpha, const Tensor& eps_vlb,
                   const Tensor& eps_gsnn, double kl_scale = 1.0);

    double value() const;  // mean objective over the batch (maximized)
    const VlbParts& mean_parts() const { return parts_; }
    void backward();       // gradients of -value (descent direction)
    const Tensor& grad(std::size_t param_index) const;

  private:
    Tape tape_;
    Node loss_{};
    VlbParts parts_;
    std::vector<Node> param_nodes_;
};

// Completions: observed cells copied verbatim, unobserved drawn from the
// generative distribution given a fresh prior draw per completion. Inputs
// and outputs are in original (denormalized) units. point_mode replaces the
// Gaussian draw for reals by the mean.
std::vector<std::vector<double>> conditional_sample(const VaeacModel& m,
                                                    const std::vector<double>& x_obs,
                                                    const Mask& b, std::size_t n, Rng& rng,
                                                    bool point_mode = false);

// Log-likelihood estimators, reported in original feature units.
// MC: z from the prior. IS: z from the proposal with importance weights.
double log_lik_mc(const VaeacModel& m, const std::vector<double>& x, const Mask& b,
                  std::size_t S, Rng& rng);
double log_lik_is(const VaeacModel& m, const std::vector<double>& x, const Mask& b,
                  std::size_t S, Rng& rng);
// Normalized-space variants (used internally and for validation tracking).
double log_lik_mc_norm(const VaeacModel& m, const std::vector<double>& x_norm, const Mask& b,
                       std::size_t S, Rng& rng);
double log_lik_is_norm(const VaeacModel& m, const std::vector<double>& x_norm, const Mask& b,
                       std::size_t S, Rng& rng);

struct TrainResult {
    VaeacModel model;  // parameters of the best validation epoch
    std::size_t best_epoch{0};
    double best_val_loglik{0.0};
    std::vector<double> epoch_objective;    // mean train objective per epoch
    std::vector<double> epoch_val_loglik;   // validation IS estimate per epoch
};

// Adam over the hybrid objective with per-instance masks from cfg.mask_spec;
// 25%-style validation split with fixed masks; best epoch by validation
// importance-sampled log-likelihood. Dataset reals must be normalized.
TrainResult train_vaeac(const Dataset& data, const TrainConfig& cfg);

}  // namespace vaeac
