#include "dtg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dtg/checkpoint.hpp"

namespace dtg {

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::baseline: return "baseline";
    case TrainMode::aug_only: return "aug_only";
    case TrainMode::aug_ld: return "aug_ld";
    case TrainMode::aug_lkl: return "aug_lkl";
    case TrainMode::full: return "full";
  }
  return "?";
}

TrainMode parse_train_mode(std::string_view name) {
  for (TrainMode m : {TrainMode::baseline, TrainMode::aug_only, TrainMode::aug_ld,
                      TrainMode::aug_lkl, TrainMode::full}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown mode '" + std::string(name) +
                    "' (expected baseline, aug_only, aug_ld, aug_lkl or full)");
}

ModeTerms mode_terms(TrainMode m) {
  switch (m) {
    case TrainMode::baseline: return {false, false, false};
    case TrainMode::aug_only: return {true, false, false};
    case TrainMode::aug_ld: return {true, true, false};
    case TrainMode::aug_lkl: return {true, false, true};
    case TrainMode::full: return {true, true, true};
  }
  return {};
}

void TrainConfig::validate() const {
  if (!(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0)) {
    throw ConfigError("loss weights must be >= 0");
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) throw ConfigError("adam_eps must be > 0");
  if (!(grad_clip >= 0)) throw ConfigError("grad_clip must be >= 0");
  if (!(grl_lambda >= 0)) throw ConfigError("grl_lambda must be >= 0");
  augment.validate();
}

double total_loss(const LossComponents& c, const TrainConfig& cfg) {
  const ModeTerms terms = mode_terms(cfg.mode);
  double l = c.l_g + cfg.lambda1 * c.l_cm;
  if (terms.domain) l += cfg.lambda2 * c.l_d;
  if (terms.kl) l += cfg.lambda3 * c.l_kl;
  return l;
}

// ---------------------------------------------------------------------------

DebiasedModel::DebiasedModel(const ModelConfig& cfg, std::uint64_t seed)
    : store_(std::make_unique<ParameterStore>()) {
  Rng rng = make_rng(seed, "init");
  backbone_ = std::make_unique<GroundingModel>(cfg, *store_, rng);
  discriminator_ = std::make_unique<DomainDiscriminator>(cfg.d_model, *store_, rng);
  store_->zero_grad();
}

std::vector<Matrix> DebiasedModel::snapshot() const {
  std::vector<Matrix> out;
  out.reserve(store_->all().size());
  for (const auto& p : store_->all()) out.push_back(p->value);
  return out;
}

void DebiasedModel::restore(const std::vector<Matrix>& values) {
  auto& params = store_->all();
  if (values.size() != params.size()) throw std::invalid_argument("restore: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParameterStore& store) {
  auto& params = store.all();
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double global_grad_norm(const ParameterStore& store) {
  double sq = 0.0;
  for (const auto& p : store.all()) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

// ---------------------------------------------------------------------------

BatchDenominators batch_denominators(const BatchAugmentation& aug) {
  BatchDenominators d;
  for (const auto& pair : aug.pairs) {
    ++d.originals;
    const int n = static_cast<int>(pair.variants.size());
    d.variants += n;
    if (n > 0) ++d.pairs_with_variants;
  }
  d.sequences = d.originals + d.variants;
  return d;
}

PairLoss pair_loss(ag::Tape& t, const DebiasedModel& model, const AugmentedPair& pair,
                   const BatchDenominators& den, const TrainConfig& cfg) {
  const ModeTerms terms = mode_terms(cfg.mode);
  const GroundingModel& net = model.backbone();
  const Sample& orig = *pair.original;

  auto fo = net.forward(t, orig, true);
  ag::Var sum_g = loss_grounding(fo.span, orig.annotation);
  ag::Var sum_cm = loss_cm(fo.fusion.relevance, orig.annotation, fo.fusion.valid);

  PairedSpanVars paired;
  paired.original = fo.span;
  std::vector<GroundingModel::Forward> variant_fwd;
  if (terms.augment) {
    for (const auto& v : pair.variants) {
      auto fv = net.forward(t, v.sample, true);
      sum_g = ag::add(sum_g, loss_grounding(fv.span, v.sample.annotation));
      sum_cm = ag::add(sum_cm, loss_cm(fv.fusion.relevance, v.sample.annotation,
                                       fv.fusion.valid));
      paired.variants.emplace_back(v.kind, fv.span);
      variant_fwd.push_back(std::move(fv));
    }
  }

  PairLoss out;
  const double w_seq = 1.0 / static_cast<double>(den.sequences);
  ag::Var l_g = ag::scale(sum_g, w_seq);
  ag::Var l_cm = ag::scale(sum_cm, w_seq);
  out.weighted.l_g = l_g.scalar();
  out.weighted.l_cm = l_cm.scalar();
  out.total = ag::add(l_g, ag::scale(l_cm, cfg.lambda1));

  if (terms.domain) {
    const GrlOptions grl{cfg.grl_lambda, true};
    std::vector<ag::Var> o{model.discriminator()(t, fo.fusion.aggregate, grl)};
    ag::Var l_d = ag::scale(bce_sum(o, 0.0), 1.0 / static_cast<double>(den.originals));
    if (!variant_fwd.empty()) {
      std::vector<ag::Var> scores;
      for (const auto& fv : variant_fwd) {
        scores.push_back(model.discriminator()(t, fv.fusion.aggregate, grl));
      }
      l_d = ag::add(l_d, ag::scale(bce_sum(scores, 1.0),
                                   1.0 / static_cast<double>(den.variants)));
    }
    out.weighted.l_d = l_d.scalar();
    out.total = ag::add(out.total, ag::scale(l_d, cfg.lambda2));
  }

  if (terms.kl && !paired.variants.empty()) {
    KlOptions opt;
    opt.clamp = cfg.kl_clamp;
    opt.detach_original = cfg.kl_detach_original;
    ag::Var l_kl = ag::scale(loss_kl(t, paired, opt),
                             1.0 / static_cast<double>(den.pairs_with_variants));
    out.weighted.l_kl = l_kl.scalar();
    out.total = ag::add(out.total, ag::scale(l_kl, cfg.lambda3));
  }
  return out;
}

LossComponents accumulate_batch_gradients(const DebiasedModel& model,
                                          const BatchAugmentation& aug,
                                          const TrainConfig& cfg, bool training,
                                          std::uint64_t dropout_seed) {
  const BatchDenominators den = batch_denominators(aug);
  LossComponents sum;
  for (std::size_t i = 0; i < aug.pairs.size(); ++i) {
    ag::Tape t(training, derive_seed(dropout_seed, "pair", i));
    PairLoss pl = pair_loss(t, model, aug.pairs[i], den, cfg);
    t.backward(pl.total);
    sum.l_g += pl.weighted.l_g;
    sum.l_cm += pl.weighted.l_cm;
    sum.l_d += pl.weighted.l_d;
    sum.l_kl += pl.weighted.l_kl;
  }
  return sum;
}

// ---------------------------------------------------------------------------

TemporalPrior::TemporalPrior(double start_fraction, double end_fraction)
    : start_(start_fraction), end_(end_fraction) {
  if (!(start_ >= 0 && start_ < end_ && end_ <= 1.0)) {
    throw std::invalid_argument("TemporalPrior: need 0 <= start < end <= 1");
  }
}

TemporalPrior TemporalPrior::fit(std::span<const Sample* const> train, int bins) {
  if (train.empty()) throw std::invalid_argument("TemporalPrior::fit: no samples");
  if (bins < 1) throw std::invalid_argument("TemporalPrior::fit: bins must be >= 1");
  std::map<std::pair<int, int>, std::vector<const Sample*>> cells;
  for (const Sample* s : train) {
    const int len = s->video.length();
    cells[{histogram_bin(s->annotation.tau_s, len, bins),
           histogram_bin(s->annotation.tau_e, len, bins)}]
        .push_back(s);
  }
  const std::vector<const Sample*>* best = nullptr;
  for (const auto& [key, members] : cells) {
    if (best == nullptr || members.size() > best->size()) best = &members;
  }
  double s_sum = 0.0;
  double e_sum = 0.0;
  for (const Sample* s : *best) {
    const double len = s->video.length();
    s_sum += s->annotation.tau_s / len;
    e_sum += (s->annotation.tau_e + 1) / len;
  }
  const double n = static_cast<double>(best->size());
  return TemporalPrior(s_sum / n, e_sum / n);
}

Interval TemporalPrior::predict(int length) const {
  if (length < 1) throw std::invalid_argument("TemporalPrior::predict: length < 1");
  const int s = std::clamp(static_cast<int>(std::floor(start_ * length)), 0, length - 1);
  const int e = std::clamp(static_cast<int>(std::ceil(end_ * length)) - 1, s, length - 1);
  return {s, e};
}

MetricTable evaluate(const GroundingModel& model, std::span<const Sample* const> samples,
                     const EvalOptions& opt) {
  MetricTable table;
  if (opt.thresholds.empty() || opt.n_values.empty()) return table;
  const int max_n = *std::max_element(opt.n_values.begin(), opt.n_values.end());

  std::vector<RankedIntervals> preds;
  std::vector<Interval> golds;
  std::vector<int> durations;
  preds.reserve(samples.size());
  for (const Sample* s : samples) {
    const SpanPrediction p = model.predict(*s);
    RankedIntervals ranked{{p.start, p.end}};
    if (max_n > 1) {
      for (const RankedSpan& r : model.predict_topk(*s, max_n)) {
        const Interval iv{r.start, r.end};
        if (std::find(ranked.begin(), ranked.end(), iv) == ranked.end()) ranked.push_back(iv);
        if (static_cast<int>(ranked.size()) == max_n) break;
      }
    }
    preds.push_back(std::move(ranked));
    golds.push_back({s->annotation.tau_s, s->annotation.tau_e});
    durations.push_back(s->video.length());
  }
  append_recall_rows(table, "model", opt.split, preds, golds, durations, opt.n_values,
                     opt.thresholds);

  if (opt.prior != nullptr) {
    std::vector<RankedIntervals> prior_preds;
    prior_preds.reserve(samples.size());
    for (const Sample* s : samples) prior_preds.push_back({opt.prior->predict(s->video.length())});
    append_recall_rows(table, "prior", opt.split, prior_preds, golds, durations,
                       opt.n_values, opt.thresholds);
  }
  return table;
}

// ---------------------------------------------------------------------------

std::string EpochRecord::to_json() const {
  nlohmann::json j{{"epoch", epoch},
                   {"l_g", components.l_g},
                   {"l_cm", components.l_cm},
                   {"l_d", components.l_d},
                   {"l_kl", components.l_kl},
                   {"total", total},
                   {"val_r1_iou0.5", val_r1_iou05},
                   {"val_dr1_iou0.5", val_dr1_iou05},
                   {"variants", variants},
                   {"lengthening_skipped", lengthening_skipped},
                   {"wall_seconds", wall_seconds}};
  return j.dump();
}

std::string TrainReport::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) out += e.to_json() + '\n';
  return out;
}

namespace {

bool all_finite(const LossComponents& c, double total) {
  return std::isfinite(c.l_g) && std::isfinite(c.l_cm) && std::isfinite(c.l_d) &&
         std::isfinite(c.l_kl) && std::isfinite(total);
}

}  // namespace

TrainReport train(DebiasedModel& model, const Dataset& data, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  using Clock = std::chrono::steady_clock;
  const auto t0 = Clock::now();

  const std::vector<const Sample*> train_set = data.split(Split::train);
  const std::vector<const Sample*> val_set = data.split(Split::val);
  if (train_set.empty()) throw ConfigError("dataset has no train split");
  if (val_set.empty()) throw ConfigError("dataset has no val split");

  const ModeTerms terms = mode_terms(cfg.mode);
  AugmentConfig acfg = cfg.augment;
  acfg.t_max = model.config().t_max;
  const TemporalPrior prior = TemporalPrior::fit(train_set);

  Adam opt(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  TrainReport report;
  report.mode = cfg.mode;
  std::vector<Matrix> best;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto e0 = Clock::now();
    Rng shuffle_rng = make_rng(cfg.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    int n_batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += batch) {
      const int b = n_batches++;
      std::vector<const Sample*> members;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + batch); ++i) {
        members.push_back(train_set[order[i]]);
      }
      BatchAugmentation aug;
      if (terms.augment) {
        aug = augment_batch(members, acfg, derive_seed(cfg.seed, "augment", epoch));
      } else {
        for (const Sample* s : members) aug.pairs.push_back({s, {}});
      }
      for (const auto& p : aug.pairs) rec.variants += static_cast<int>(p.variants.size());
      rec.lengthening_skipped += aug.lengthening_skipped;

      model.store().zero_grad();
      const LossComponents c = accumulate_batch_gradients(
          model, aug, cfg, true, derive_seed(cfg.seed, "dropout", epoch, b));
      const double total = total_loss(c, cfg);
      if (!all_finite(c, total)) {
        throw TrainingDiverged(epoch, b,
                               "non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(b));
      }
      if (cfg.grad_clip > 0) {
        const double norm = global_grad_norm(model.store());
        if (norm > cfg.grad_clip) {
          const double s = cfg.grad_clip / norm;
          for (auto& p : model.store().all()) p->grad *= s;
        }
      }
      opt.step(model.store());

      rec.components.l_g += c.l_g;
      rec.components.l_cm += c.l_cm;
      rec.components.l_d += c.l_d;
      rec.components.l_kl += c.l_kl;
      rec.total += total;
    }
    const double inv = 1.0 / n_batches;
    rec.components.l_g *= inv;
    rec.components.l_cm *= inv;
    rec.components.l_d *= inv;
    rec.components.l_kl *= inv;
    rec.total *= inv;

    EvalOptions eo;
    eo.thresholds = {0.5};
    eo.split = "val";
    const MetricTable val = evaluate(model.backbone(), val_set, eo);
    rec.val_r1_iou05 = val.find("model", "R", 1, 0.5).value_or(0.0);
    rec.val_dr1_iou05 = val.find("model", "dR", 1, 0.5).value_or(0.0);
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - e0).count();

    if (rec.val_r1_iou05 > report.best_val) {
      report.best_val = rec.val_r1_iou05;
      report.best_epoch = epoch;
      best = model.snapshot();
      if (!hooks.checkpoint_dir.empty()) {
        save_checkpoint(hooks.checkpoint_dir / "best.ckpt", model, data.vocab, prior);
      }
    }
    report.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }

  if (!hooks.checkpoint_dir.empty()) {
    save_checkpoint(hooks.checkpoint_dir / "last.ckpt", model, data.vocab, prior);
    report.checkpoint = hooks.checkpoint_dir / "best.ckpt";
  }
  model.restore(best);
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------

ModelConfig model_config_for(const Dataset& data, ModelConfig base) {
  base.d_in = data.feature_dim();
  base.vocab_size = static_cast<int>(data.vocab.size());
  const int longest = data.max_length();
  if (longest > base.t_max) {
    throw ConfigError("dataset has a video of " + std::to_string(longest) +
                      " clips but t_max is " + std::to_string(base.t_max));
  }
  base.validate();
  return base;
}

const std::set<std::string>& model_config_keys() {
  static const std::set<std::string> k{"d_model", "d_word",      "t_max",
                                       "max_query_len", "n_heads", "n_layers_enc",
                                       "n_layers_fusion", "n_layers_dec", "ffn_dim",
                                       "dropout"};
  return k;
}

const std::set<std::string>& train_config_keys() {
  static const std::set<std::string> k{
      "mode",       "lambda1",    "lambda2",   "lambda3",    "epochs",
      "batch_size", "lr",         "adam_beta1", "adam_beta2", "adam_eps",
      "grad_clip",  "lambda_grl", "kl_clamp",  "kl_detach_original", "seed",
      "beta_sv",    "beta_lv",    "enable_sv", "enable_lv",  "keywords"};
  return k;
}

ModelConfig model_config_from(const KeyValueConfig& kv, ModelConfig c) {
  c.d_model = kv.get_int("d_model", c.d_model);
  c.d_word = kv.get_int("d_word", c.d_word);
  c.t_max = kv.get_int("t_max", c.t_max);
  c.max_query_len = kv.get_int("max_query_len", c.max_query_len);
  c.n_heads = kv.get_int("n_heads", c.n_heads);
  c.n_layers_enc = kv.get_int("n_layers_enc", c.n_layers_enc);
  c.n_layers_fusion = kv.get_int("n_layers_fusion", c.n_layers_fusion);
  c.n_layers_dec = kv.get_int("n_layers_dec", c.n_layers_dec);
  c.ffn_dim = kv.get_int("ffn_dim", c.ffn_dim);
  c.dropout = kv.get_double("dropout", c.dropout);
  return c;
}

TrainConfig train_config_from(const KeyValueConfig& kv, TrainConfig c) {
  if (kv.has("mode")) c.mode = parse_train_mode(kv.get_string("mode", ""));
  c.lambda1 = kv.get_double("lambda1", c.lambda1);
  c.lambda2 = kv.get_double("lambda2", c.lambda2);
  c.lambda3 = kv.get_double("lambda3", c.lambda3);
  c.epochs = kv.get_int("epochs", c.epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.lr = kv.get_double("lr", c.lr);
  c.adam_beta1 = kv.get_double("adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv.get_double("adam_beta2", c.adam_beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.grad_clip = kv.get_double("grad_clip", c.grad_clip);
  c.grl_lambda = kv.get_double("lambda_grl", c.grl_lambda);
  c.kl_clamp = kv.get_bool("kl_clamp", c.kl_clamp);
  c.kl_detach_original = kv.get_bool("kl_detach_original", c.kl_detach_original);
  c.seed = kv.get_u64("seed", c.seed);
  c.augment.beta_sv = kv.get_int("beta_sv", c.augment.beta_sv);
  c.augment.beta_lv = kv.get_int("beta_lv", c.augment.beta_lv);
  c.augment.enable_sv = kv.get_bool("enable_sv", c.augment.enable_sv);
  c.augment.enable_lv = kv.get_bool("enable_lv", c.augment.enable_lv);
  if (kv.has("keywords")) {
    const auto words = kv.get_list("keywords", {});
    c.augment.keywords = std::set<std::string>(words.begin(), words.end());
  }
  return c;
}

namespace {

std::string num(double v) { return format_number(v); }

}  // namespace

KeyValueConfig to_key_values(const ModelConfig& c) {
  KeyValueConfig kv;
  kv.set("d_model", std::to_string(c.d_model));
  kv.set("d_word", std::to_string(c.d_word));
  kv.set("t_max", std::to_string(c.t_max));
  kv.set("max_query_len", std::to_string(c.max_query_len));
  kv.set("n_heads", std::to_string(c.n_heads));
  kv.set("n_layers_enc", std::to_string(c.n_layers_enc));
  kv.set("n_layers_fusion", std::to_string(c.n_layers_fusion));
  kv.set("n_layers_dec", std::to_string(c.n_layers_dec));
  kv.set("ffn_dim", std::to_string(c.ffn_dim));
  kv.set("dropout", num(c.dropout));
  return kv;
}

KeyValueConfig to_key_values(const TrainConfig& c) {
  KeyValueConfig kv;
  kv.set("mode", std::string(to_string(c.mode)));
  kv.set("lambda1", num(c.lambda1));
  kv.set("lambda2", num(c.lambda2));
  kv.set("lambda3", num(c.lambda3));
  kv.set("epochs", std::to_string(c.epochs));
  kv.set("batch_size", std::to_string(c.batch_size));
  kv.set("lr", num(c.lr));
  kv.set("adam_beta1", num(c.adam_beta1));
  kv.set("adam_beta2", num(c.adam_beta2));
  kv.set("adam_eps", num(c.adam_eps));
  kv.set("grad_clip", num(c.grad_clip));
  kv.set("lambda_grl", num(c.grl_lambda));
  kv.set("kl_clamp", c.kl_clamp ? "true" : "false");
  kv.set("kl_detach_original", c.kl_detach_original ? "true" : "false");
  kv.set("seed", std::to_string(c.seed));
  kv.set("beta_sv", std::to_string(c.augment.beta_sv));
  kv.set("beta_lv", std::to_string(c.augment.beta_lv));
  kv.set("enable_sv", c.augment.enable_sv ? "true" : "false");
  kv.set("enable_lv", c.augment.enable_lv ? "true" : "false");
  std::string words;
  for (const auto& w : c.augment.keywords) words += (words.empty() ? "" : ",") + w;
  kv.set("keywords", words);
  return kv;
}

ModelConfig synthetic_model_preset() {
  ModelConfig c;
  c.d_model = 64;
  c.d_word = 32;
  c.t_max = 48;
  c.n_heads = 2;
  c.n_layers_enc = 1;
  c.n_layers_fusion = 2;
  c.n_layers_dec = 2;
  c.ffn_dim = 128;
  return c;
}

TrainConfig synthetic_train_preset() {
  TrainConfig c;
  c.epochs = 30;
  c.batch_size = 32;
  c.lr = 1e-3;
  return c;
}

}  // namespace dtg
