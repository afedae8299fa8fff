#include "dtg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dtg {

Parameter& ParameterStore::create(const std::string& name, Eigen::Index rows,
                                  Eigen::Index cols) {
  if (find(name) != nullptr) {
    throw std::logic_error("duplicate parameter name: " + name);
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void init_xavier_uniform(Matrix& w, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
}

void init_normal(Matrix& w, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
}

Linear::Linear(ParameterStore& store, const std::string& name, Eigen::Index in,
               Eigen::Index out, Rng& rng)
    : weight(&store.create(name + ".weight", in, out)),
      bias(&store.create(name + ".bias", 1, out)) {
  init_xavier_uniform(weight->value, rng);
}

ag::Var Linear::operator()(ag::Tape& t, ag::Var x) const {
  return ag::linear(x, t.param(*weight), t.param(*bias));
}

Mlp::Mlp(ParameterStore& store, const std::string& name, Eigen::Index in,
         Eigen::Index hidden, Eigen::Index out, Rng& rng)
    : first(store, name + ".fc1", in, hidden, rng),
      second(store, name + ".fc2", hidden, out, rng) {}

ag::Var Mlp::operator()(ag::Tape& t, ag::Var x) const {
  return second(t, ag::gelu(first(t, x)));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Eigen::Index dim)
    : gamma(&store.create(name + ".gamma", 1, dim)),
      beta(&store.create(name + ".beta", 1, dim)) {
  gamma->value.setOnes();
}

ag::Var LayerNorm::operator()(ag::Tape& t, ag::Var x) const {
  return ag::layer_norm_rows(x, t.param(*gamma), t.param(*beta));
}

Attention::Attention(ParameterStore& store, const std::string& name,
                     Eigen::Index dim, int heads, Rng& rng)
    : q(store, name + ".q", dim, dim, rng),
      k(store, name + ".k", dim, dim, rng),
      v(store, name + ".v", dim, dim, rng),
      o(store, name + ".o", dim, dim, rng),
      n_heads(heads) {}

ag::Var Attention::operator()(ag::Tape& t, ag::Var x, ag::Var memory,
                              Eigen::Index memory_valid, bool causal) const {
  ag::Var heads = ag::multi_head_attention(q(t, x), k(t, memory), v(t, memory),
                                           n_heads, memory_valid, causal);
  return o(t, heads);
}

EncoderLayer::EncoderLayer(ParameterStore& store, const std::string& name,
                           Eigen::Index dim, int heads, Eigen::Index ffn_dim,
                           double dropout_rate, Rng& rng)
    : norm_attn(store, name + ".norm_attn", dim),
      attn(store, name + ".attn", dim, heads, rng),
      norm_ffn(store, name + ".norm_ffn", dim),
      ffn(store, name + ".ffn", dim, ffn_dim, dim, rng),
      dropout(dropout_rate) {}

ag::Var EncoderLayer::operator()(ag::Tape& t, ag::Var x, Eigen::Index valid) const {
  ag::Var h = norm_attn(t, x);
  x = ag::add(x, ag::dropout(attn(t, h, h, valid, false), dropout));
  h = norm_ffn(t, x);
  return ag::add(x, ag::dropout(ffn(t, h), dropout));
}

DecoderLayer::DecoderLayer(ParameterStore& store, const std::string& name,
                           Eigen::Index dim, int heads, Eigen::Index ffn_dim,
                           double dropout_rate, Rng& rng)
    : norm_self(store, name + ".norm_self", dim),
      self_attn(store, name + ".self_attn", dim, heads, rng),
      norm_cross(store, name + ".norm_cross", dim),
      cross_attn(store, name + ".cross_attn", dim, heads, rng),
      norm_ffn(store, name + ".norm_ffn", dim),
      ffn(store, name + ".ffn", dim, ffn_dim, dim, rng),
      dropout(dropout_rate) {}

ag::Var DecoderLayer::operator()(ag::Tape& t, ag::Var x, ag::Var memory,
                                 Eigen::Index memory_valid) const {
  ag::Var h = norm_self(t, x);
  x = ag::add(x, ag::dropout(self_attn(t, h, h, h.rows(), true), dropout));
  h = norm_cross(t, x);
  x = ag::add(x, ag::dropout(cross_attn(t, h, memory, memory_valid, false), dropout));
  h = norm_ffn(t, x);
  return ag::add(x, ag::dropout(ffn(t, h), dropout));
}

}  // namespace dtg
