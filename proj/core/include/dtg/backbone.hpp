#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dtg/autograd.hpp"
#include "dtg/dataset.hpp"
#include "dtg/nn.hpp"

namespace dtg {

struct ModelConfig {
  int d_in = 16;         // clip feature dimension
  int d_model = 256;     // hidden width D
  int d_word = 64;       // word embedding width
  int t_max = 48;        // longest clip sequence, also the index vocabulary size
  int max_query_len = 32;
  int n_heads = 4;
  int n_layers_enc = 1;
  int n_layers_fusion = 2;
  int n_layers_dec = 2;
  int ffn_dim = 512;
  double dropout = 0.0;
  int vocab_size = 1;

  void validate() const;  // throws ConfigError
};

class SequenceLengthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EncodedVideo {
  ag::Var features;  // T × D, rows at or past `valid` are zero
  Eigen::Index valid = 0;
};

struct EncodedQuery {
  ag::Var words;     // N × D
  ag::Var sentence;  // 1 × D, mean over words
};

struct FusionOutputs {
  ag::Var gated;      // M̃ = c_m ⊙ M, T × D
  ag::Var fused;      // M, T × D
  ag::Var aggregate;  // m_q, 1 × D, the [CLS] output
  ag::Var relevance;  // c_m, T × 1
  Eigen::Index valid = 0;
};

// Start/end distributions over the t_max index vocabulary (1 × t_max each).
struct SpanVars {
  ag::Var p_start;
  ag::Var p_end;
  int start = 0;
  int end = 0;
};

struct SpanPrediction {
  Vector p_start;
  Vector p_end;
  int start = 0;
  int end = 0;
};

struct RankedSpan {
  int start = 0;
  int end = 0;
  double score = 0.0;
};

// Span-based grounding backbone: video and query encoders, co-attention and
// transformer fusion with relevance gating, and an index-token decoder that
// emits the start token, then the end token.
class GroundingModel {
 public:
  GroundingModel(const ModelConfig& cfg, ParameterStore& store, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  // `valid` counts leading real clips; later rows are treated as padding.
  EncodedVideo encode_video(ag::Tape& t, const FeatureMatrix& clips,
                            std::optional<Eigen::Index> valid = std::nullopt) const;
  EncodedQuery encode_query(ag::Tape& t, const Query& q) const;
  FusionOutputs fuse(ag::Tape& t, const EncodedVideo& video,
                     const EncodedQuery& query) const;
  // With teacher_start set the end step is conditioned on it (training);
  // otherwise the start is decoded greedily.
  SpanVars predict_span(ag::Tape& t, const FusionOutputs& fused,
                        std::optional<int> teacher_start = std::nullopt) const;

  struct Forward {
    FusionOutputs fusion;
    SpanVars span;
  };
  Forward forward(ag::Tape& t, const Sample& s, bool teacher_forcing) const;

  SpanPrediction predict(const Sample& s) const;
  // Top-k (start, end) pairs ranked by p_start[s] * p_end[e].
  std::vector<RankedSpan> predict_topk(const Sample& s, int k) const;

  // Final layer of the relevance gate; exposed for tests that pin the gate.
  const Linear& gate_output() const { return gate_.second; }

 private:
  ag::Var decode_logits(ag::Tape& t, const FusionOutputs& fused,
                        const std::vector<int>& tokens) const;

  ModelConfig cfg_;
  Mlp video_mlp_;
  Parameter* word_embedding_;
  Mlp query_mlp_;
  Parameter* query_position_;
  std::vector<EncoderLayer> query_layers_;
  LayerNorm query_norm_;
  Parameter* clip_position_;
  Parameter* coattn_w_video_;
  Parameter* coattn_w_query_;
  Parameter* coattn_w_joint_;
  Linear coattn_proj_;
  Parameter* cls_;
  std::vector<EncoderLayer> fusion_layers_;
  LayerNorm fusion_norm_;
  Mlp gate_;
  Parameter* token_embedding_;
  Parameter* step_position_;
  std::vector<DecoderLayer> decoder_layers_;
  LayerNorm decoder_norm_;
  Linear index_head_;
};

// Mean binary cross-entropy of c_m against the 0-1 moment mask over the
// first `valid` positions. Probabilities are clamped to [1e-7, 1-1e-7].
ag::Var loss_cm(ag::Var relevance, const Annotation& gold, Eigen::Index valid);
double loss_cm(const Vector& relevance, const Annotation& gold);

// ½(CE(p_s, τ_s) + CE(p_e, τ_e)).
ag::Var loss_grounding(const SpanVars& span, const Annotation& gold);
double loss_grounding(const Vector& p_start, const Vector& p_end, const Annotation& gold);

inline constexpr double kProbClamp = 1e-7;

}  // namespace dtg
