#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dtg/autograd.hpp"
#include "dtg/rng.hpp"

namespace dtg {

// Owns every trainable tensor of a model. Parameters live behind stable
// pointers so layers can hold raw Parameter* for the store's lifetime.
class ParameterStore {
 public:
  Parameter& create(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<std::unique_ptr<Parameter>>& all() { return params_; }
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }

  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

void init_xavier_uniform(Matrix& w, Rng& rng);
void init_normal(Matrix& w, double stddev, Rng& rng);

struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Eigen::Index in,
         Eigen::Index out, Rng& rng);
  ag::Var operator()(ag::Tape& t, ag::Var x) const;
};

// Two linear layers with a GELU in between.
struct Mlp {
  Linear first;
  Linear second;

  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, Eigen::Index in,
      Eigen::Index hidden, Eigen::Index out, Rng& rng);
  ag::Var operator()(ag::Tape& t, ag::Var x) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Eigen::Index dim);
  ag::Var operator()(ag::Tape& t, ag::Var x) const;
};

struct Attention {
  Linear q, k, v, o;
  int n_heads = 1;

  Attention() = default;
  Attention(ParameterStore& store, const std::string& name, Eigen::Index dim,
            int heads, Rng& rng);
  ag::Var operator()(ag::Tape& t, ag::Var x, ag::Var memory,
                     Eigen::Index memory_valid, bool causal) const;
};

// Pre-norm transformer encoder layer.
struct EncoderLayer {
  LayerNorm norm_attn;
  Attention attn;
  LayerNorm norm_ffn;
  Mlp ffn;
  double dropout = 0.0;

  EncoderLayer() = default;
  EncoderLayer(ParameterStore& store, const std::string& name, Eigen::Index dim,
               int heads, Eigen::Index ffn_dim, double dropout, Rng& rng);
  ag::Var operator()(ag::Tape& t, ag::Var x, Eigen::Index valid) const;
};

// Pre-norm transformer decoder layer: causal self-attention, cross-attention
// over a memory sequence, feed-forward.
struct DecoderLayer {
  LayerNorm norm_self;
  Attention self_attn;
  LayerNorm norm_cross;
  Attention cross_attn;
  LayerNorm norm_ffn;
  Mlp ffn;
  double dropout = 0.0;

  DecoderLayer() = default;
  DecoderLayer(ParameterStore& store, const std::string& name, Eigen::Index dim,
               int heads, Eigen::Index ffn_dim, double dropout, Rng& rng);
  ag::Var operator()(ag::Tape& t, ag::Var x, ag::Var memory,
                     Eigen::Index memory_valid) const;
};

}  // namespace dtg
