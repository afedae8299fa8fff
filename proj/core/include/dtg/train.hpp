#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtg/augment.hpp"
#include "dtg/backbone.hpp"
#include "dtg/config.hpp"
#include "dtg/dataset.hpp"
#include "dtg/domadapt.hpp"
#include "dtg/metrics.hpp"

namespace dtg {

// Ablation modes. Augmented sequences join the localization loss in every
// mode except baseline; the domain and KL terms are switched per mode.
enum class TrainMode { baseline, aug_only, aug_ld, aug_lkl, full };
std::string_view to_string(TrainMode m);
TrainMode parse_train_mode(std::string_view name);

struct ModeTerms {
  bool augment = false;
  bool domain = false;
  bool kl = false;
};
ModeTerms mode_terms(TrainMode m);

struct TrainConfig {
  TrainMode mode = TrainMode::full;
  double lambda1 = 5.0;
  double lambda2 = 1.0;
  double lambda3 = 1.0;
  int epochs = 100;
  int batch_size = 64;
  double lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  double grl_lambda = 1.0;
  bool kl_clamp = true;
  bool kl_detach_original = false;
  std::uint64_t seed = 1;
  AugmentConfig augment;

  void validate() const;  // throws ConfigError
};

struct LossComponents {
  double l_g = 0.0;
  double l_cm = 0.0;
  double l_d = 0.0;
  double l_kl = 0.0;
};

// L_g + λ1 L_cm + λ2 L_d + λ3 L_kl, with terms the mode does not use taken
// as zero.
double total_loss(const LossComponents& c, const TrainConfig& cfg);

// Backbone plus domain discriminator sharing one parameter store. The
// discriminator is allocated in every mode so initial weights do not depend
// on the mode.
class DebiasedModel {
 public:
  DebiasedModel(const ModelConfig& cfg, std::uint64_t seed);

  DebiasedModel(const DebiasedModel&) = delete;
  DebiasedModel& operator=(const DebiasedModel&) = delete;

  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  const GroundingModel& backbone() const { return *backbone_; }
  const DomainDiscriminator& discriminator() const { return *discriminator_; }
  const ModelConfig& config() const { return backbone_->config(); }

  std::vector<Matrix> snapshot() const;
  void restore(const std::vector<Matrix>& values);

 private:
  std::unique_ptr<ParameterStore> store_;
  std::unique_ptr<GroundingModel> backbone_;
  std::unique_ptr<DomainDiscriminator> discriminator_;
};

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps);
  void step(ParameterStore& store);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

double global_grad_norm(const ParameterStore& store);

// Per-pair loss on one tape for the sequences of `pair`, already scaled by
// the batch-level denominators and loss weights.
struct PairLoss {
  ag::Var total;
  LossComponents weighted;  // this pair's share of each batch component
};

struct BatchDenominators {
  int sequences = 0;  // originals plus variants
  int originals = 0;
  int variants = 0;
  int pairs_with_variants = 0;
};
BatchDenominators batch_denominators(const BatchAugmentation& aug);

PairLoss pair_loss(ag::Tape& t, const DebiasedModel& model, const AugmentedPair& pair,
                   const BatchDenominators& den, const TrainConfig& cfg);

// Accumulates gradients of the batch objective into the parameter store and
// returns the batch components. Gradients are not zeroed first.
LossComponents accumulate_batch_gradients(const DebiasedModel& model,
                                          const BatchAugmentation& aug,
                                          const TrainConfig& cfg, bool training,
                                          std::uint64_t dropout_seed);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, int batch, const std::string& what)
      : std::runtime_error(what), epoch(epoch), batch(batch) {}
  int epoch;
  int batch;
};

// Predicts the training split's modal normalized (start, end) interval,
// scaled to each sample's length.
class TemporalPrior {
 public:
  static TemporalPrior fit(std::span<const Sample* const> train, int bins = 10);
  TemporalPrior() = default;
  TemporalPrior(double start_fraction, double end_fraction);

  Interval predict(int length) const;
  double start_fraction() const { return start_; }
  double end_fraction() const { return end_; }

 private:
  double start_ = 0.0;
  double end_ = 1.0;
};

struct EvalOptions {
  std::vector<double> thresholds{0.3, 0.5, 0.7};
  std::vector<int> n_values{1};
  std::string split;
  const TemporalPrior* prior = nullptr;  // adds "prior" rows when set
};

MetricTable evaluate(const GroundingModel& model, std::span<const Sample* const> samples,
                     const EvalOptions& opt);

struct EpochRecord {
  int epoch = 0;
  LossComponents components;
  double total = 0.0;
  double val_r1_iou05 = 0.0;
  double val_dr1_iou05 = 0.0;
  int variants = 0;
  int lengthening_skipped = 0;
  double wall_seconds = 0.0;

  std::string to_json() const;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val = -1.0;
  TrainMode mode = TrainMode::full;
  std::filesystem::path checkpoint;  // empty when nothing was written
  double wall_seconds = 0.0;

  std::string to_jsonl() const;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::filesystem::path checkpoint_dir;  // best.ckpt and last.ckpt when set
};

// Trains in place. On return the model holds the parameters of the epoch
// with the best validation R@1, IoU=0.5.
TrainReport train(DebiasedModel& model, const Dataset& data, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

// Model shape for a dataset: feature dimension and vocabulary size come from
// the data, everything else from `base`.
ModelConfig model_config_for(const Dataset& data, ModelConfig base);

// Config key mapping.
const std::set<std::string>& model_config_keys();
const std::set<std::string>& train_config_keys();
ModelConfig model_config_from(const KeyValueConfig& kv, ModelConfig base = {});
TrainConfig train_config_from(const KeyValueConfig& kv, TrainConfig base = {});
KeyValueConfig to_key_values(const ModelConfig& cfg);
KeyValueConfig to_key_values(const TrainConfig& cfg);

// Scaled-down settings for the synthetic benchmark.
ModelConfig synthetic_model_preset();
TrainConfig synthetic_train_preset();

}  // namespace dtg
