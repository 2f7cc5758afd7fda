#pragma once

#include <cstdint>
#include <vector>

#include "vaeac/data.hpp"
#include "vaeac/masks.hpp"
#include "vaeac/model.hpp"

namespace vaeac {

// Anything that yields per-feature marginal parameters for a partially
// observed instance. Calls are counted through this base so the chain-rule
// cost contract (exactly one pass per generated feature) stays testable.
class MarginalModel {
  public:
    virtual ~MarginalModel() = default;

    const FeatureSchema& schema() const { return schema_ref(); }
    GenerativeOutput marginals(const std::vector<double>& x, const Mask& b) const {
        ++forward_count;
        return compute_marginals(x, b);
    }

    mutable std::size_t forward_count{0};

  protected:
    virtual const FeatureSchema& schema_ref() const = 0;
    virtual GenerativeOutput compute_marginals(const std::vector<double>& x,
                                               const Mask& b) const = 0;
};

// Single feed-forward net from (x with unobserved cells blanked, b) to
// per-feature marginal parameters. Real features always carry a sigma head;
// a lone Gaussian per real marginal is a deliberate modeling limit.
class UmModel : public MarginalModel {
  public:
    FeatureSchema feats;
    TrainConfig cfg;  // uses hidden/epochs/batch/lr/val_fraction/seed/mask_spec
    std::size_t image_h{0}, image_w{0};
    Mlp net;

    static UmModel make(FeatureSchema schema, TrainConfig cfg, Rng& rng,
                        std::size_t image_h = 0, std::size_t image_w = 0);

    std::size_t enc_width() const;
    std::size_t head_width() const { return feature_head_width(feats, true); }
    std::vector<Tensor*> params();
    std::vector<const Tensor*> params() const;

  protected:
    const FeatureSchema& schema_ref() const override { return feats; }
    GenerativeOutput compute_marginals(const std::vector<double>& x,
                                       const Mask& b) const override;
};

// One forward pass: marginal parameters for every feature (only unobserved
// slots are meaningful).
GenerativeOutput um_forward(const MarginalModel& m, const std::vector<double>& x_obs,
                            const Mask& b);

// Masked marginal log-likelihood of one instance: sum of per-feature
// log-densities over unobserved-and-present cells.
double um_objective(const MarginalModel& m, const std::vector<double>& x, const Mask& b);

// Chain-rule completion in the model's value space: a uniformly random
// ordering of the unobserved set, sampling each feature in turn and moving
// it to the observed side. point_mode uses the mean for real features.
std::vector<double> um_chain_sample(const MarginalModel& m, const std::vector<double>& x_obs,
                                    const Mask& b, Rng& rng, bool point_mode = false);

// Sum of per-step conditional log-probabilities of x's actual values along
// `order`, which must cover exactly the unobserved cells holding values;
// missing cells stay hidden throughout.
double um_chain_log_lik(const MarginalModel& m, const std::vector<double>& x, const Mask& b,
                        const std::vector<std::size_t>& order);

// Uniformly random ordering of the scoreable (unobserved, present) cells.
std::vector<std::size_t> random_unobserved_order(const std::vector<double>& x, const Mask& b,
                                                 Rng& rng);

// Minibatch objective on a tape; gradients for every net parameter.
class UmBatchObjective {
  public:
    UmBatchObjective(const UmModel& model, const std::vector<std::vector<double>>& rows,
                     const std::vector<Mask>& masks);
    double value() const;  // mean masked log-likelihood (maximized)
    void backward();
    const Tensor& grad(std::size_t param_index) const;

  private:
    Tape tape_;
    Node loss_{};
    std::vector<Node> param_nodes_;
};

struct UmTrainResult {
    UmModel model;
    std::size_t best_epoch{0};
    double best_val_objective{0.0};
    std::vector<double> epoch_objective;
    std::vector<double> epoch_val_objective;
};

// Adam on the masked marginal log-likelihood. Training masks are drawn from
// cfg.mask_spec and thinned by the shared-u Bernoulli transform so every
// unobserved-count 0..D occurs; missing cells are re-forced unobserved after
// the thinning. Best epoch by the validation objective under fixed masks.
UmTrainResult um_train(const Dataset& data, const TrainConfig& cfg);

// Original-unit wrappers, mirroring the latent-variable model's sampler and
// estimator interfaces.
std::vector<std::vector<double>> um_conditional_sample(const UmModel& m,
                                                       const std::vector<double>& x_obs,
                                                       const Mask& b, std::size_t n, Rng& rng,
                                                       bool point_mode = false);
// One uniformly random ordering per evaluation.
double um_log_lik(const UmModel& m, const std::vector<double>& x, const Mask& b, Rng& rng);

}  // namespace vaeac
