#include "dtg/augment.hpp"

#include <random>

namespace dtg {

std::set<std::string> default_context_keywords() {
  return {"first", "after", "before", "then", "again", "continue", "continues",
          "second", "finally"};
}

void AugmentConfig::validate() const {
  if (beta_sv < 1) throw ConfigError("beta_sv must be >= 1");
  if (beta_lv < 1) throw ConfigError("beta_lv must be >= 1");
  if (t_max < 0) throw ConfigError("t_max must be >= 0");
}

std::string_view to_string(AugmentKind k) {
  return k == AugmentKind::shortened ? "sv" : "lv";
}

bool eligible_for_shortening(const Sample& s, const AugmentConfig& cfg) {
  if (s.annotation.tau_s <= cfg.beta_sv) return false;
  for (const auto& w : tokenize(s.query.raw_text)) {
    if (cfg.keywords.contains(w)) return false;
  }
  return true;
}

int sample_truncation_length(int tau_s, int beta_sv, Rng& rng) {
  if (tau_s <= beta_sv) {
    throw AugmentError("shortening needs tau_s > beta_sv (tau_s=" + std::to_string(tau_s) +
                       ", beta_sv=" + std::to_string(beta_sv) + ")");
  }
  return std::uniform_int_distribution<int>(beta_sv, tau_s - 1)(rng);
}

int sample_padding_length(int tau_s, int beta_lv, Rng& rng) {
  return std::uniform_int_distribution<int>(beta_lv, tau_s + beta_lv)(rng);
}

AugmentedSample shorten_video(const Sample& s, int delta, const AugmentConfig& cfg) {
  if (delta < cfg.beta_sv || delta >= s.annotation.tau_s) {
    throw AugmentError("truncation length " + std::to_string(delta) + " outside [" +
                       std::to_string(cfg.beta_sv) + ", " +
                       std::to_string(s.annotation.tau_s) + ")");
  }
  AugmentedSample out;
  out.kind = AugmentKind::shortened;
  out.delta = delta;
  out.origin_id = s.id;
  out.sample.id = s.id + "#sv";
  out.sample.split = s.split;
  out.sample.query = s.query;
  out.sample.video.clips = s.video.clips.bottomRows(s.video.length() - delta);
  out.sample.annotation = {s.annotation.tau_s - delta, s.annotation.tau_e - delta};
  return out;
}

AugmentedSample lengthen_video(const Sample& s, int delta, const AugmentConfig& cfg) {
  if (delta < cfg.beta_lv) {
    throw AugmentError("padding length " + std::to_string(delta) + " below beta_lv " +
                       std::to_string(cfg.beta_lv));
  }
  AugmentedSample out;
  out.kind = AugmentKind::lengthened;
  out.delta = delta;
  out.origin_id = s.id;
  out.sample.id = s.id + "#lv";
  out.sample.split = s.split;
  out.sample.query = s.query;
  const int length = s.video.length();
  out.sample.video.clips = FeatureMatrix::Zero(length + delta, s.video.dim());
  out.sample.video.clips.bottomRows(length) = s.video.clips;
  out.sample.annotation = {s.annotation.tau_s + delta, s.annotation.tau_e + delta};
  return out;
}

BatchAugmentation augment_batch(std::span<const Sample* const> batch,
                                const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BatchAugmentation out;
  out.pairs.reserve(batch.size());
  for (const Sample* s : batch) {
    AugmentedPair pair;
    pair.original = s;
    if (cfg.enable_sv && eligible_for_shortening(*s, cfg)) {
      Rng rng = make_rng(seed, "augment-sv", hash_string(s->id));
      const int delta = sample_truncation_length(s->annotation.tau_s, cfg.beta_sv, rng);
      pair.variants.push_back(shorten_video(*s, delta, cfg));
    }
    if (cfg.enable_lv) {
      Rng rng = make_rng(seed, "augment-lv", hash_string(s->id));
      const int delta = sample_padding_length(s->annotation.tau_s, cfg.beta_lv, rng);
      if (cfg.t_max > 0 && s->video.length() + delta > cfg.t_max) {
        ++out.lengthening_skipped;
      } else {
        pair.variants.push_back(lengthen_video(*s, delta, cfg));
      }
    }
    out.pairs.push_back(std::move(pair));
  }
  return out;
}

DiversificationStats diversification_stats(std::span<const Sample* const> samples,
                                           const AugmentConfig& cfg, std::uint64_t seed,
                                           int bins) {
  const BatchAugmentation aug = augment_batch(samples, cfg, seed);
  std::vector<const Sample*> all(samples.begin(), samples.end());
  DiversificationStats st;
  for (const auto& pair : aug.pairs) {
    for (const auto& v : pair.variants) {
      all.push_back(&v.sample);
      if (v.kind == AugmentKind::shortened) {
        ++st.shortened;
      } else {
        ++st.lengthened;
      }
    }
  }
  st.lengthening_skipped = aug.lengthening_skipped;
  st.before = compute_temporal_distribution(samples, bins);
  st.after = compute_temporal_distribution(all, bins);
  st.entropy_before = distribution_entropy(st.before);
  st.entropy_after = distribution_entropy(st.after);
  return st;
}

}  // namespace dtg
