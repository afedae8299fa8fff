#pragma once

#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtg/dataset.hpp"
#include "dtg/rng.hpp"

namespace dtg {

class AugmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Query words implying long-range context; such videos are padded, never cut.
std::set<std::string> default_context_keywords();

struct AugmentConfig {
  int beta_sv = 10;  // minimum truncation length, clips
  int beta_lv = 10;  // minimum padding length, clips
  std::set<std::string> keywords = default_context_keywords();
  bool enable_sv = true;
  bool enable_lv = true;
  int t_max = 0;  // longest sequence the model accepts; 0 disables the check

  void validate() const;  // throws ConfigError
};

enum class AugmentKind { shortened, lengthened };
std::string_view to_string(AugmentKind k);  // "sv" / "lv"

struct AugmentedSample {
  Sample sample;
  AugmentKind kind = AugmentKind::shortened;
  int delta = 0;
  std::string origin_id;
};

bool eligible_for_shortening(const Sample& s, const AugmentConfig& cfg);

// δ_sv uniform on the integers [beta_sv, tau_s - 1].
int sample_truncation_length(int tau_s, int beta_sv, Rng& rng);
// δ_lv uniform on the integers [beta_lv, tau_s + beta_lv].
int sample_padding_length(int tau_s, int beta_lv, Rng& rng);

// Drops the first delta clips. Requires beta_sv <= delta < tau_s.
AugmentedSample shorten_video(const Sample& s, int delta, const AugmentConfig& cfg);
// Prepends delta all-zero clips. Requires delta >= beta_lv.
AugmentedSample lengthen_video(const Sample& s, int delta, const AugmentConfig& cfg);

struct AugmentedPair {
  const Sample* original = nullptr;
  std::vector<AugmentedSample> variants;
};

struct BatchAugmentation {
  std::vector<AugmentedPair> pairs;
  int lengthening_skipped = 0;  // draws that would have exceeded t_max
};

// Each sample and strategy draws from its own stream derived from
// (seed, sample id), so the result does not depend on batch composition.
BatchAugmentation augment_batch(std::span<const Sample* const> batch,
                                const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace dtg

namespace dtg {

struct DiversificationStats {
  TemporalHistogram before;  // originals
  TemporalHistogram after;   // originals and their variants
  double entropy_before = 0.0;
  double entropy_after = 0.0;
  int shortened = 0;
  int lengthened = 0;
  int lengthening_skipped = 0;
};

// Start-time histograms before and after one augmentation draw.
DiversificationStats diversification_stats(std::span<const Sample* const> samples,
                                           const AugmentConfig& cfg, std::uint64_t seed,
                                           int bins = 10);

}  // namespace dtg
