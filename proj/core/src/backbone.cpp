#include "dtg/backbone.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace dtg {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Matrix key_mask_row(Eigen::Index size, Eigen::Index valid) {
  Matrix m = Matrix::Zero(1, size);
  for (Eigen::Index j = valid; j < size; ++j) m(0, j) = kNegInf;
  return m;
}

// Index-vocabulary mask: only [lo, valid) may be emitted.
Matrix index_mask(int t_max, Eigen::Index lo, Eigen::Index valid) {
  Matrix m = Matrix::Zero(1, t_max);
  for (Eigen::Index j = 0; j < t_max; ++j) {
    if (j < lo || j >= valid) m(0, j) = kNegInf;
  }
  return m;
}

int argmax_row(const Matrix& row) {
  Eigen::Index idx = 0;
  row.row(0).maxCoeff(&idx);
  return static_cast<int>(idx);
}

}  // namespace

void ModelConfig::validate() const {
  if (d_in < 1) throw ConfigError("d_in must be >= 1");
  if (d_model < 2) throw ConfigError("d_model must be >= 2");
  if (d_word < 1) throw ConfigError("d_word must be >= 1");
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) +
                      ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  }
  if (t_max < 1) throw ConfigError("t_max must be >= 1");
  if (max_query_len < 1) throw ConfigError("max_query_len must be >= 1");
  if (n_layers_enc < 0 || n_layers_fusion < 0 || n_layers_dec < 1) {
    throw ConfigError("layer counts must be non-negative and the decoder needs one layer");
  }
  if (ffn_dim < 1) throw ConfigError("ffn_dim must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
}

GroundingModel::GroundingModel(const ModelConfig& cfg, ParameterStore& store, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const Eigen::Index d = cfg_.d_model;
  video_mlp_ = Mlp(store, "video.mlp", cfg_.d_in, d, d, rng);

  word_embedding_ = &store.create("query.embedding", cfg_.vocab_size, cfg_.d_word);
  init_normal(word_embedding_->value, 0.1, rng);
  query_mlp_ = Mlp(store, "query.mlp", cfg_.d_word, d, d, rng);
  query_position_ = &store.create("query.position", cfg_.max_query_len, d);
  init_normal(query_position_->value, 0.1, rng);
  for (int i = 0; i < cfg_.n_layers_enc; ++i) {
    query_layers_.emplace_back(store, "query.layer" + std::to_string(i), d, cfg_.n_heads,
                               cfg_.ffn_dim, cfg_.dropout, rng);
  }
  query_norm_ = LayerNorm(store, "query.norm", d);

  clip_position_ = &store.create("fusion.clip_position", cfg_.t_max, d);
  init_normal(clip_position_->value, 0.1, rng);
  coattn_w_video_ = &store.create("fusion.coattn.w_video", d, 1);
  coattn_w_query_ = &store.create("fusion.coattn.w_query", d, 1);
  coattn_w_joint_ = &store.create("fusion.coattn.w_joint", 1, d);
  init_xavier_uniform(coattn_w_video_->value, rng);
  init_xavier_uniform(coattn_w_query_->value, rng);
  init_xavier_uniform(coattn_w_joint_->value, rng);
  coattn_proj_ = Linear(store, "fusion.coattn.proj", 4 * d, d, rng);
  cls_ = &store.create("fusion.cls", 1, d);
  init_normal(cls_->value, 0.1, rng);
  for (int i = 0; i < cfg_.n_layers_fusion; ++i) {
    fusion_layers_.emplace_back(store, "fusion.layer" + std::to_string(i), d,
                                cfg_.n_heads, cfg_.ffn_dim, cfg_.dropout, rng);
  }
  fusion_norm_ = LayerNorm(store, "fusion.norm", d);
  gate_ = Mlp(store, "fusion.gate", 2 * d, d, 1, rng);

  token_embedding_ = &store.create("decoder.token_embedding", cfg_.t_max + 1, d);
  init_normal(token_embedding_->value, 0.1, rng);
  step_position_ = &store.create("decoder.step_position", 2, d);
  init_normal(step_position_->value, 0.1, rng);
  for (int i = 0; i < cfg_.n_layers_dec; ++i) {
    decoder_layers_.emplace_back(store, "decoder.layer" + std::to_string(i), d,
                                 cfg_.n_heads, cfg_.ffn_dim, cfg_.dropout, rng);
  }
  decoder_norm_ = LayerNorm(store, "decoder.norm", d);
  index_head_ = Linear(store, "decoder.index_head", d, cfg_.t_max, rng);
}

EncodedVideo GroundingModel::encode_video(ag::Tape& t, const FeatureMatrix& clips,
                                          std::optional<Eigen::Index> valid) const {
  if (clips.cols() != cfg_.d_in) {
    throw std::invalid_argument("encode_video: feature dimension " +
                                std::to_string(clips.cols()) + " but model expects " +
                                std::to_string(cfg_.d_in));
  }
  if (clips.rows() < 1) throw std::invalid_argument("encode_video: empty video");
  if (clips.rows() > cfg_.t_max) {
    throw SequenceLengthError("video has " + std::to_string(clips.rows()) +
                              " clips, model t_max is " + std::to_string(cfg_.t_max));
  }
  const Eigen::Index n_valid = valid.value_or(clips.rows());
  if (n_valid < 1 || n_valid > clips.rows()) {
    throw std::invalid_argument("encode_video: valid length out of range");
  }
  ag::Var x = t.constant(clips.cast<double>());
  ag::Var v = video_mlp_(t, x);
  if (n_valid < clips.rows()) {
    Matrix keep = Matrix::Zero(clips.rows(), 1);
    keep.topRows(n_valid).setOnes();
    v = ag::mul_col(v, t.constant(std::move(keep)));
  }
  return {v, n_valid};
}

EncodedQuery GroundingModel::encode_query(ag::Tape& t, const Query& q) const {
  const auto n = static_cast<Eigen::Index>(q.tokens.size());
  if (n < 1) throw std::invalid_argument("encode_query: empty query");
  if (n > cfg_.max_query_len) {
    throw SequenceLengthError("query has " + std::to_string(n) + " tokens, limit is " +
                              std::to_string(cfg_.max_query_len));
  }
  ag::Var x = ag::gather_rows(t.param(*word_embedding_), q.tokens);
  x = query_mlp_(t, x);
  x = ag::add(x, ag::slice_rows(t.param(*query_position_), 0, n));
  for (const auto& layer : query_layers_) x = layer(t, x, n);
  x = query_norm_(t, x);
  return {x, ag::mean_rows(x)};
}

FusionOutputs GroundingModel::fuse(ag::Tape& t, const EncodedVideo& video,
                                   const EncodedQuery& query) const {
  const Eigen::Index len = video.features.rows();
  const Eigen::Index valid = video.valid;
  ag::Var v = ag::add(video.features, ag::slice_rows(t.param(*clip_position_), 0, len));
  ag::Var q = query.words;

  // Trilinear similarity S[t,n] = w_v·v_t + w_q·q_n + w_j·(v_t ⊙ q_n).
  ag::Var sim = ag::matmul_nt(ag::mul_row(v, t.param(*coattn_w_joint_)), q);
  sim = ag::add_col(sim, ag::matmul(v, t.param(*coattn_w_video_)));
  sim = ag::add_row(sim, ag::transpose(ag::matmul(q, t.param(*coattn_w_query_))));

  ag::Var over_words = ag::softmax_rows(sim);
  const Matrix clip_mask = key_mask_row(len, valid);
  ag::Var over_clips = ag::softmax_rows(ag::transpose(sim), &clip_mask);
  ag::Var c2q = ag::matmul(over_words, q);
  ag::Var q2c = ag::matmul(over_words, ag::matmul(over_clips, v));
  ag::Var x = coattn_proj_(t, ag::concat_cols({v, c2q, ag::mul(v, c2q), ag::mul(v, q2c)}));

  x = ag::concat_rows({t.param(*cls_), x});
  for (const auto& layer : fusion_layers_) x = layer(t, x, valid + 1);
  x = fusion_norm_(t, x);

  FusionOutputs out;
  out.valid = valid;
  out.aggregate = ag::slice_rows(x, 0, 1);
  out.fused = ag::slice_rows(x, 1, len);
  ag::Var sentence = ag::matmul(t.constant(Matrix::Ones(len, 1)), query.sentence);
  ag::Var joint = ag::concat_cols({out.fused, sentence});
  out.relevance = ag::sigmoid(gate_(t, joint));
  out.gated = ag::mul_col(out.fused, out.relevance);
  return out;
}

ag::Var GroundingModel::decode_logits(ag::Tape& t, const FusionOutputs& fused,
                                      const std::vector<int>& tokens) const {
  const auto steps = static_cast<Eigen::Index>(tokens.size());
  ag::Var x = ag::gather_rows(t.param(*token_embedding_), tokens);
  x = ag::add(x, ag::slice_rows(t.param(*step_position_), 0, steps));
  for (const auto& layer : decoder_layers_) x = layer(t, x, fused.gated, fused.valid);
  x = decoder_norm_(t, x);
  return index_head_(t, x);
}

SpanVars GroundingModel::predict_span(ag::Tape& t, const FusionOutputs& fused,
                                      std::optional<int> teacher_start) const {
  const int bos = cfg_.t_max;
  const Eigen::Index valid = fused.valid;
  if (valid > cfg_.t_max) throw SequenceLengthError("predict_span: length exceeds t_max");
  const Matrix start_mask = index_mask(cfg_.t_max, 0, valid);

  SpanVars out;
  int start = 0;
  ag::Var end_logits;
  if (teacher_start) {
    start = *teacher_start;
    if (start < 0 || start >= valid) {
      throw std::invalid_argument("predict_span: teacher start outside the video");
    }
    ag::Var logits = decode_logits(t, fused, {bos, start});
    out.p_start = ag::softmax_rows(ag::slice_rows(logits, 0, 1), &start_mask);
    end_logits = ag::slice_rows(logits, 1, 1);
  } else {
    ag::Var first = decode_logits(t, fused, {bos});
    out.p_start = ag::softmax_rows(first, &start_mask);
    start = argmax_row(out.p_start.value());
    ag::Var logits = decode_logits(t, fused, {bos, start});
    end_logits = ag::slice_rows(logits, 1, 1);
  }
  const Matrix end_mask = index_mask(cfg_.t_max, start, valid);
  out.p_end = ag::softmax_rows(end_logits, &end_mask);
  out.start = start;
  out.end = argmax_row(out.p_end.value());
  return out;
}

GroundingModel::Forward GroundingModel::forward(ag::Tape& t, const Sample& s,
                                                bool teacher_forcing) const {
  EncodedVideo v = encode_video(t, s.video.clips);
  EncodedQuery q = encode_query(t, s.query);
  Forward f;
  f.fusion = fuse(t, v, q);
  f.span = predict_span(t, f.fusion,
                        teacher_forcing ? std::optional<int>(s.annotation.tau_s)
                                        : std::nullopt);
  return f;
}

SpanPrediction GroundingModel::predict(const Sample& s) const {
  ag::Tape t(false);
  Forward f = forward(t, s, false);
  SpanPrediction p;
  p.p_start = f.span.p_start.value().row(0).transpose();
  p.p_end = f.span.p_end.value().row(0).transpose();
  p.start = f.span.start;
  p.end = f.span.end;
  return p;
}

std::vector<RankedSpan> GroundingModel::predict_topk(const Sample& s, int k) const {
  if (k < 1) return {};
  ag::Tape t(false);
  EncodedVideo v = encode_video(t, s.video.clips);
  EncodedQuery q = encode_query(t, s.query);
  FusionOutputs fused = fuse(t, v, q);
  SpanVars first = predict_span(t, fused);
  const Matrix& ps = first.p_start.value();

  std::vector<int> starts(static_cast<std::size_t>(fused.valid));
  std::iota(starts.begin(), starts.end(), 0);
  std::stable_sort(starts.begin(), starts.end(),
                   [&](int a, int b) { return ps(0, a) > ps(0, b); });
  starts.resize(std::min<std::size_t>(starts.size(), static_cast<std::size_t>(k)));

  std::vector<RankedSpan> cands;
  for (int st : starts) {
    SpanVars cond = predict_span(t, fused, st);
    const Matrix& pe = cond.p_end.value();
    for (Eigen::Index e = st; e < fused.valid; ++e) {
      cands.push_back({st, static_cast<int>(e), ps(0, st) * pe(0, e)});
    }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const RankedSpan& a, const RankedSpan& b) { return a.score > b.score; });
  cands.resize(std::min<std::size_t>(cands.size(), static_cast<std::size_t>(k)));
  return cands;
}

// ---------------------------------------------------------------------------

ag::Var loss_cm(ag::Var relevance, const Annotation& gold, Eigen::Index valid) {
  ag::Tape& t = *relevance.tape;
  if (valid < 1 || valid > relevance.rows() || relevance.cols() != 1) {
    throw std::invalid_argument("loss_cm: relevance must be T x 1 with valid <= T");
  }
  Matrix target = Matrix::Zero(valid, 1);
  for (Eigen::Index i = gold.tau_s; i <= gold.tau_e && i < valid; ++i) target(i, 0) = 1.0;
  ag::Var c = ag::slice_rows(relevance, 0, valid);
  ag::Var log_c = ag::log_clamped(c, kProbClamp, 1.0 - kProbClamp);
  ag::Var log_1mc =
      ag::log_clamped(ag::add_scalar(ag::scale(c, -1.0), 1.0), kProbClamp, 1.0 - kProbClamp);
  ag::Var y = t.constant(target);
  ag::Var one_minus_y = t.constant(Matrix::Ones(valid, 1) - target);
  ag::Var ll = ag::add(ag::mul(y, log_c), ag::mul(one_minus_y, log_1mc));
  return ag::scale(ag::mean(ll), -1.0);
}

double loss_cm(const Vector& relevance, const Annotation& gold) {
  ag::Tape t;
  ag::Var c = t.constant(relevance);
  return loss_cm(c, gold, relevance.size()).scalar();
}

ag::Var loss_grounding(const SpanVars& span, const Annotation& gold) {
  ag::Var ls = ag::log_clamped(ag::element(span.p_start, 0, gold.tau_s), kProbClamp,
                               1.0 - kProbClamp);
  ag::Var le = ag::log_clamped(ag::element(span.p_end, 0, gold.tau_e), kProbClamp,
                               1.0 - kProbClamp);
  return ag::scale(ag::add(ls, le), -0.5);
}

double loss_grounding(const Vector& p_start, const Vector& p_end, const Annotation& gold) {
  ag::Tape t;
  SpanVars s;
  s.p_start = t.constant(p_start.transpose());
  s.p_end = t.constant(p_end.transpose());
  return loss_grounding(s, gold).scalar();
}

}  // namespace dtg
