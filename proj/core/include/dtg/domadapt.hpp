#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dtg/augment.hpp"
#include "dtg/backbone.hpp"
#include "dtg/nn.hpp"

namespace dtg {

// Identity forward; gradient multiplied by -lambda backward.
inline ag::Var grl_apply(ag::Var x, double lambda_grl = 1.0) {
  return ag::gradient_reversal(x, lambda_grl);
}

struct GrlOptions {
  double lambda = 1.0;
  // Off only in tests that compare against the plain identity path.
  bool enabled = true;
};

// Classifies the aggregated representation m_q as original (0) or
// augmented (1): D -> D/2 -> 1 with a sigmoid output.
class DomainDiscriminator {
 public:
  DomainDiscriminator(int d_model, ParameterStore& store, Rng& rng);

  // aggregate: B × D. Returns B × 1 scores in (0, 1).
  ag::Var operator()(ag::Tape& t, ag::Var aggregate, const GrlOptions& grl = {}) const;

  const Mlp& layers() const { return mlp_; }

 private:
  Mlp mlp_;
};

// Sum of binary cross-entropies of scores against a constant label.
ag::Var bce_sum(std::span<const ag::Var> scores, double label);

// Mean BCE(originals, 0) + mean BCE(variants, 1); the variant term is dropped
// when there are no variants.
ag::Var loss_domain(std::span<const ag::Var> originals, std::span<const ag::Var> variants);
double loss_domain(std::span<const double> originals, std::span<const double> variants);

struct KlOptions {
  bool clamp = true;              // each KL term clamped to [0, 1]
  bool detach_original = false;   // stop gradients into the original's distributions
  double normalization_tol = 1e-4;
};

struct PairedSpanVars {
  SpanVars original;
  std::vector<std::pair<AugmentKind, SpanVars>> variants;
};

struct PairedPredictions {
  SpanPrediction original;
  std::vector<std::pair<AugmentKind, SpanPrediction>> variants;
};

// D_kl(p ∥ q) = Σ p (log p - log q) with both logs clamped at 1e-7. Inputs
// are 1 × K rows.
ag::Var kl_divergence(ag::Var p, ag::Var q);

// 1 - mean_v KL(p_s ∥ p_s^v) - mean_v KL(p_e ∥ p_e^v). Returns a zero
// constant when there are no variants. Throws std::invalid_argument when any
// distribution's mass differs from 1 by more than the tolerance.
ag::Var loss_kl(ag::Tape& t, const PairedSpanVars& paired, const KlOptions& opt = {});
double loss_kl(const PairedPredictions& paired, const KlOptions& opt = {});

}  // namespace dtg
