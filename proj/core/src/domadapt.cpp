#include "dtg/domadapt.hpp"

#include <cmath>
#include <stdexcept>

namespace dtg {

DomainDiscriminator::DomainDiscriminator(int d_model, ParameterStore& store, Rng& rng)
    : mlp_(store, "discriminator", d_model, std::max(1, d_model / 2), 1, rng) {}

ag::Var DomainDiscriminator::operator()(ag::Tape& t, ag::Var aggregate,
                                        const GrlOptions& grl) const {
  ag::Var x = grl.enabled ? grl_apply(aggregate, grl.lambda) : aggregate;
  return ag::sigmoid(mlp_(t, x));
}

ag::Var bce_sum(std::span<const ag::Var> scores, double label) {
  if (scores.empty()) throw std::invalid_argument("bce_sum: no scores");
  std::vector<ag::Var> terms;
  terms.reserve(scores.size());
  for (const ag::Var& o : scores) {
    ag::Var p = label > 0.5 ? o : ag::add_scalar(ag::scale(o, -1.0), 1.0);
    terms.push_back(ag::log_clamped(p, kProbClamp, 1.0 - kProbClamp));
  }
  return ag::scale(ag::sum(ag::concat_rows(terms)), -1.0);
}

ag::Var loss_domain(std::span<const ag::Var> originals, std::span<const ag::Var> variants) {
  if (originals.empty()) throw std::invalid_argument("loss_domain: no original scores");
  ag::Var l = ag::scale(bce_sum(originals, 0.0), 1.0 / static_cast<double>(originals.size()));
  if (!variants.empty()) {
    l = ag::add(l, ag::scale(bce_sum(variants, 1.0),
                             1.0 / static_cast<double>(variants.size())));
  }
  return l;
}

double loss_domain(std::span<const double> originals, std::span<const double> variants) {
  ag::Tape t;
  std::vector<ag::Var> o;
  std::vector<ag::Var> v;
  for (double x : originals) o.push_back(t.constant_scalar(x));
  for (double x : variants) v.push_back(t.constant_scalar(x));
  return loss_domain(o, v).scalar();
}

ag::Var kl_divergence(ag::Var p, ag::Var q) {
  ag::Var log_p = ag::log_clamped(p, kProbClamp, 1.0);
  ag::Var log_q = ag::log_clamped(q, kProbClamp, 1.0);
  return ag::sum(ag::mul(p, ag::sub(log_p, log_q)));
}

namespace {

void check_normalized(const ag::Var& p, double tol, const char* what) {
  const double mass = p.value().sum();
  if (std::abs(mass - 1.0) > tol) {
    throw std::invalid_argument(std::string("loss_kl: ") + what + " sums to " +
                                std::to_string(mass));
  }
}

ag::Var detach(ag::Tape& t, ag::Var v) { return t.constant(v.value()); }

}  // namespace

ag::Var loss_kl(ag::Tape& t, const PairedSpanVars& paired, const KlOptions& opt) {
  if (paired.variants.empty()) return t.constant_scalar(0.0);
  ag::Var ps = paired.original.p_start;
  ag::Var pe = paired.original.p_end;
  check_normalized(ps, opt.normalization_tol, "original start distribution");
  check_normalized(pe, opt.normalization_tol, "original end distribution");
  if (opt.detach_original) {
    ps = detach(t, ps);
    pe = detach(t, pe);
  }
  std::vector<ag::Var> start_terms;
  std::vector<ag::Var> end_terms;
  for (const auto& [kind, span] : paired.variants) {
    if (span.p_start.cols() != ps.cols() || span.p_end.cols() != pe.cols()) {
      throw std::invalid_argument("loss_kl: distributions must share one support");
    }
    check_normalized(span.p_start, opt.normalization_tol, "variant start distribution");
    check_normalized(span.p_end, opt.normalization_tol, "variant end distribution");
    ag::Var ks = kl_divergence(ps, span.p_start);
    ag::Var ke = kl_divergence(pe, span.p_end);
    if (opt.clamp) {
      ks = ag::clamp(ks, 0.0, 1.0);
      ke = ag::clamp(ke, 0.0, 1.0);
    }
    start_terms.push_back(ks);
    end_terms.push_back(ke);
  }
  const double inv = 1.0 / static_cast<double>(paired.variants.size());
  ag::Var mean_start = ag::scale(ag::sum(ag::concat_rows(start_terms)), inv);
  ag::Var mean_end = ag::scale(ag::sum(ag::concat_rows(end_terms)), inv);
  return ag::add_scalar(ag::scale(ag::add(mean_start, mean_end), -1.0), 1.0);
}

double loss_kl(const PairedPredictions& paired, const KlOptions& opt) {
  ag::Tape t;
  auto to_vars = [&](const SpanPrediction& p) {
    SpanVars v;
    v.p_start = t.constant(p.p_start.transpose());
    v.p_end = t.constant(p.p_end.transpose());
    v.start = p.start;
    v.end = p.end;
    return v;
  };
  PairedSpanVars vars;
  vars.original = to_vars(paired.original);
  for (const auto& [kind, pred] : paired.variants) vars.variants.emplace_back(kind, to_vars(pred));
  return loss_kl(t, vars, opt).scalar();
}

}  // namespace dtg
