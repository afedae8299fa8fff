#include "dtg/autograd.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dtg::ag {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

bool any_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars) {
    if (v.tape->needs_grad(v.id)) return true;
  }
  return false;
}

}  // namespace

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant_scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var{this, it->second};
  Node n;
  n.ref = &p.value;
  n.param = &p;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var{this, id};
}

Var Tape::push(Matrix value, bool needs_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(int id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.value;
}

void Tape::backward(Var root, double seed) {
  if (root.tape != this) throw std::invalid_argument("backward: foreign var");
  if (!nodes_[root.id].needs_grad) return;
  const Matrix& rv = value(root.id);
  accum(root.id, Matrix::Constant(rv.rows(), rv.cols(), seed));
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      if (n.param->grad.size() == 0) n.param->zero_grad();
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  check_same_shape(a.value(), b.value(), "add");
  Matrix out = a.value() + b.value();
  return t.push(std::move(out), any_grad({a, b}),
                [ia = a.id, ib = b.id](Tape& t, int self) {
                  t.accum(ia, t.grad(self));
                  t.accum(ib, t.grad(self));
                });
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  check_same_shape(a.value(), b.value(), "sub");
  Matrix out = a.value() - b.value();
  return t.push(std::move(out), any_grad({a, b}),
                [ia = a.id, ib = b.id](Tape& t, int self) {
                  t.accum(ia, t.grad(self));
                  t.accum(ib, -t.grad(self));
                });
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  check_same_shape(a.value(), b.value(), "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return t.push(std::move(out), any_grad({a, b}),
                [ia = a.id, ib = b.id](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.needs_grad(ia)) t.accum(ia, g.cwiseProduct(t.value(ib)));
                  if (t.needs_grad(ib)) t.accum(ib, g.cwiseProduct(t.value(ia)));
                });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = a.value() * s;
  return t.push(std::move(out), any_grad({a}), [ia = a.id, s](Tape& t, int self) {
    t.accum(ia, t.grad(self) * s);
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = a.value().array() + s;
  return t.push(std::move(out), any_grad({a}), [ia = a.id](Tape& t, int self) {
    t.accum(ia, t.grad(self));
  });
}

Var add_row(Var a, Var row) {
  Tape& t = *a.tape;
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row: row must be 1x" +
                                std::to_string(a.cols()));
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(out), any_grad({a, row}),
                [ia = a.id, ir = row.id](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  t.accum(ia, g);
                  if (t.needs_grad(ir)) t.accum(ir, g.colwise().sum());
                });
}

Var add_col(Var a, Var col) {
  Tape& t = *a.tape;
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw std::invalid_argument("add_col: col must be " +
                                std::to_string(a.rows()) + "x1");
  }
  Matrix out = a.value().colwise() + col.value().col(0);
  return t.push(std::move(out), any_grad({a, col}),
                [ia = a.id, ic = col.id](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  t.accum(ia, g);
                  if (t.needs_grad(ic)) t.accum(ic, g.rowwise().sum());
                });
}

Var mul_row(Var a, Var row) {
  Tape& t = *a.tape;
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("mul_row: row must be 1x" +
                                std::to_string(a.cols()));
  }
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return t.push(
      std::move(out), any_grad({a, row}), [ia = a.id, ir = row.id](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        if (t.needs_grad(ia)) {
          t.accum(ia, (g.array().rowwise() * t.value(ir).row(0).array()).matrix());
        }
        if (t.needs_grad(ir)) {
          t.accum(ir, g.cwiseProduct(t.value(ia)).colwise().sum());
        }
      });
}

Var mul_col(Var a, Var col) {
  Tape& t = *a.tape;
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw std::invalid_argument("mul_col: col must be " +
                                std::to_string(a.rows()) + "x1");
  }
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return t.push(
      std::move(out), any_grad({a, col}), [ia = a.id, ic = col.id](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        if (t.needs_grad(ia)) {
          t.accum(ia, (g.array().colwise() * t.value(ic).col(0).array()).matrix());
        }
        if (t.needs_grad(ic)) {
          t.accum(ic, g.cwiseProduct(t.value(ia)).rowwise().sum());
        }
      });
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims");
  Matrix out;
  out.noalias() = a.value() * b.value();
  return t.push(std::move(out), any_grad({a, b}),
                [ia = a.id, ib = b.id](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.needs_grad(ia)) t.accum(ia, g * t.value(ib).transpose());
                  if (t.needs_grad(ib)) t.accum(ib, t.value(ia).transpose() * g);
                });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dims");
  Matrix out;
  out.noalias() = a.value() * b.value().transpose();
  return t.push(std::move(out), any_grad({a, b}),
                [ia = a.id, ib = b.id](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.needs_grad(ia)) t.accum(ia, g * t.value(ib));
                  if (t.needs_grad(ib)) t.accum(ib, g.transpose() * t.value(ia));
                });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().transpose();
  return t.push(std::move(out), any_grad({a}), [ia = a.id](Tape& t, int self) {
    t.accum(ia, t.grad(self).transpose());
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = *x.tape;
  if (x.cols() != weight.rows() || bias.rows() != 1 ||
      bias.cols() != weight.cols()) {
    throw std::invalid_argument("linear: shape mismatch, input has " +
                                std::to_string(x.cols()) + " features, weight " +
                                std::to_string(weight.rows()) + "x" +
                                std::to_string(weight.cols()));
  }
  Matrix out;
  out.noalias() = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return t.push(std::move(out), any_grad({x, weight, bias}),
                [ix = x.id, iw = weight.id, ib = bias.id](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  if (t.needs_grad(ix)) t.accum(ix, g * t.value(iw).transpose());
                  if (t.needs_grad(iw)) t.accum(iw, t.value(ix).transpose() * g);
                  if (t.needs_grad(ib)) t.accum(ib, g.colwise().sum());
                });
}

Var gelu(Var a) {
  Tape& t = *a.tape;
  const double k = kGeluK;
  const double c = kGeluC;
  const Matrix& x = a.value();
  Matrix th = (k * (x.array() + c * x.array().cube())).tanh().matrix();
  Matrix out = (0.5 * x.array() * (1.0 + th.array())).matrix();
  return t.push(std::move(out), any_grad({a}),
                [ia = a.id, th = std::move(th)](Tape& t, int self) {
                  const double k = kGeluK;
                  const double c = kGeluC;
                  const auto x = t.value(ia).array();
                  const auto tt = th.array();
                  auto d = 0.5 * (1.0 + tt) +
                           0.5 * x * (1.0 - tt.square()) * k * (1.0 + 3.0 * c * x.square());
                  t.accum(ia, (t.grad(self).array() * d).matrix());
                });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseMax(0.0);
  return t.push(std::move(out), any_grad({a}), [ia = a.id](Tape& t, int self) {
    t.accum(ia, (t.value(ia).array() > 0.0).select(t.grad(self), 0.0));
  });
}

Var sigmoid(Var a) {
  Tape& t = *a.tape;
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return t.push(std::move(out), any_grad({a}), [ia = a.id](Tape& t, int self) {
    const auto y = t.value(self).array();
    t.accum(ia, (t.grad(self).array() * y * (1.0 - y)).matrix());
  });
}

Var log_clamped(Var a, double lo, double hi) {
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi).array().log().matrix();
  return t.push(std::move(out), any_grad({a}), [ia = a.id, lo, hi](Tape& t, int self) {
    const auto x = t.value(ia).array();
    t.accum(ia, ((x >= lo) && (x <= hi)).select(t.grad(self).array() / x, 0.0).matrix());
  });
}

Var clamp(Var a, double lo, double hi) {
  Tape& t = *a.tape;
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.push(std::move(out), any_grad({a}), [ia = a.id, lo, hi](Tape& t, int self) {
    const auto x = t.value(ia).array();
    t.accum(ia, ((x >= lo) && (x <= hi)).select(t.grad(self).array(), 0.0).matrix());
  });
}

Var dropout(Var a, double rate) {
  Tape& t = *a.tape;
  if (!t.training() || rate <= 0.0) return a;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = keep(t.dropout_rng()) ? 1.0 / (1.0 - rate) : 0.0;
  }
  Matrix out = a.value().cwiseProduct(mask);
  return t.push(std::move(out), any_grad({a}),
                [ia = a.id, mask = std::move(mask)](Tape& t, int self) {
                  t.accum(ia, t.grad(self).cwiseProduct(mask));
                });
}

namespace {

void softmax_rows_inplace(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double mx = row.maxCoeff();
    row = (row.array() - mx).exp();
    row /= row.sum();
  }
}

}  // namespace

Var softmax_rows(Var a, const Matrix* additive_mask) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  if (additive_mask != nullptr) {
    if (additive_mask->rows() == 1 && additive_mask->cols() == out.cols()) {
      out.rowwise() += additive_mask->row(0);
    } else {
      check_same_shape(out, *additive_mask, "softmax_rows mask");
      out += *additive_mask;
    }
  }
  softmax_rows_inplace(out);
  return t.push(std::move(out), any_grad({a}), [ia = a.id](Tape& t, int self) {
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad(self);
    Vector dot = g.cwiseProduct(y).rowwise().sum();
    t.accum(ia, (y.array() * (g.colwise() - dot).array()).matrix());
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  Vector mu = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mu;
  Vector inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(n)) + eps)
          .rsqrt()
          .matrix();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return t.push(
      std::move(out), any_grad({x, gamma, beta}),
      [ix = x.id, ig = gamma.id, ib = beta.id, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        if (t.needs_grad(ig)) t.accum(ig, g.cwiseProduct(xhat).colwise().sum());
        if (t.needs_grad(ib)) t.accum(ib, g.colwise().sum());
        if (t.needs_grad(ix)) {
          Matrix dxhat = g.array().rowwise() * t.value(ig).row(0).array();
          Vector m1 = dxhat.rowwise().mean();
          Vector m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
          Matrix dx = dxhat.colwise() - m1;
          dx -= (xhat.array().colwise() * m2.array()).matrix();
          dx = dx.array().colwise() * inv_std.array();
          t.accum(ix, dx);
        }
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
    ng = ng || t.needs_grad(p.id);
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    layout.emplace_back(p.id, c);
    c += p.cols();
  }
  return t.push(std::move(out), ng, [layout = std::move(layout)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (const auto& [id, c0] : layout) {
      if (t.needs_grad(id)) t.accum(id, g.middleCols(c0, t.value(id).cols()));
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Tape& t = *parts.front().tape;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  bool ng = false;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: col mismatch");
    rows += p.rows();
    ng = ng || t.needs_grad(p.id);
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    layout.emplace_back(p.id, r);
    r += p.rows();
  }
  return t.push(std::move(out), ng, [layout = std::move(layout)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    for (const auto& [id, r0] : layout) {
      if (t.needs_grad(id)) t.accum(id, g.middleRows(r0, t.value(id).rows()));
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = *a.tape;
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::out_of_range("slice_rows: range out of bounds");
  }
  Matrix out = a.value().middleRows(start, count);
  return t.push(std::move(out), any_grad({a}), [ia = a.id, start](Tape& t, int self) {
    const Matrix& av = t.value(ia);
    Matrix g = Matrix::Zero(av.rows(), av.cols());
    g.middleRows(start, t.grad(self).rows()) = t.grad(self);
    t.accum(ia, g);
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  Tape& t = *a.tape;
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range out of bounds");
  }
  Matrix out = a.value().middleCols(start, count);
  return t.push(std::move(out), any_grad({a}), [ia = a.id, start](Tape& t, int self) {
    const Matrix& av = t.value(ia);
    Matrix g = Matrix::Zero(av.rows(), av.cols());
    g.middleCols(start, t.grad(self).cols()) = t.grad(self);
    t.accum(ia, g);
  });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  Tape& t = *table.tape;
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) +
                              " outside table of " + std::to_string(tv.rows()) +
                              " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  return t.push(std::move(out), any_grad({table}),
                [it = table.id, ids](Tape& t, int self) {
                  const Matrix& g = t.grad(self);
                  const Matrix& tv = t.value(it);
                  Matrix acc = Matrix::Zero(tv.rows(), tv.cols());
                  for (std::size_t i = 0; i < ids.size(); ++i) {
                    acc.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
                  }
                  t.accum(it, acc);
                });
}

Var element(Var a, Eigen::Index r, Eigen::Index c) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = a.value()(r, c);
  return t.push(std::move(out), any_grad({a}), [ia = a.id, r, c](Tape& t, int self) {
    const Matrix& av = t.value(ia);
    Matrix g = Matrix::Zero(av.rows(), av.cols());
    g(r, c) = t.grad(self)(0, 0);
    t.accum(ia, g);
  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), any_grad({a}), [ia = a.id](Tape& t, int self) {
    const Matrix& av = t.value(ia);
    t.accum(ia, Matrix::Constant(av.rows(), av.cols(), t.grad(self)(0, 0)));
  });
}

Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().colwise().mean();
  return t.push(std::move(out), any_grad({a}), [ia = a.id](Tape& t, int self) {
    const Matrix& av = t.value(ia);
    const double inv = 1.0 / static_cast<double>(av.rows());
    t.accum(ia, Matrix::Ones(av.rows(), 1) * (t.grad(self) * inv));
  });
}

Var gradient_reversal(Var a, double lambda) {
  Tape& t = *a.tape;
  Matrix out = a.value();
  return t.push(std::move(out), any_grad({a}), [ia = a.id, lambda](Tape& t, int self) {
    t.accum(ia, t.grad(self) * (-lambda));
  });
}

Var multi_head_attention(Var query, Var key, Var value, int n_heads,
                         Eigen::Index key_valid, bool causal) {
  Tape& t = *query.tape;
  const Matrix& q = query.value();
  const Matrix& k = key.value();
  const Matrix& v = value.value();
  const Eigen::Index d = q.cols();
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw std::invalid_argument("multi_head_attention: shape mismatch");
  }
  if (n_heads <= 0 || d % n_heads != 0) {
    throw std::invalid_argument("multi_head_attention: model width " +
                                std::to_string(d) + " not divisible by " +
                                std::to_string(n_heads) + " heads");
  }
  if (key_valid < 1 || key_valid > k.rows()) {
    throw std::invalid_argument("multi_head_attention: key_valid out of range");
  }
  const Eigen::Index tq = q.rows();
  const Eigen::Index tk = key_valid;
  const Eigen::Index dh = d / n_heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Matrix> probs(static_cast<std::size_t>(n_heads));
  Matrix out = Matrix::Zero(tq, d);
  for (int h = 0; h < n_heads; ++h) {
    Matrix s;
    s.noalias() = q.middleCols(h * dh, dh) * k.topRows(tk).middleCols(h * dh, dh).transpose();
    s *= sc;
    if (causal) {
      for (Eigen::Index i = 0; i < tq; ++i) {
        for (Eigen::Index j = i + 1; j < tk; ++j) s(i, j) = kNegInf;
      }
    }
    softmax_rows_inplace(s);
    out.middleCols(h * dh, dh).noalias() = s * v.topRows(tk).middleCols(h * dh, dh);
    probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  return t.push(
      std::move(out), any_grad({query, key, value}),
      [iq = query.id, ik = key.id, iv = value.id, n_heads, dh, tk, sc,
       probs = std::move(probs)](Tape& t, int self) {
        const Matrix& g = t.grad(self);
        const Matrix& q = t.value(iq);
        const Matrix& k = t.value(ik);
        const Matrix& v = t.value(iv);
        Matrix dq = Matrix::Zero(q.rows(), q.cols());
        Matrix dk = Matrix::Zero(k.rows(), k.cols());
        Matrix dv = Matrix::Zero(v.rows(), v.cols());
        for (int h = 0; h < n_heads; ++h) {
          const Matrix& p = probs[static_cast<std::size_t>(h)];
          auto gh = g.middleCols(h * dh, dh);
          Matrix dp;
          dp.noalias() = gh * v.topRows(tk).middleCols(h * dh, dh).transpose();
          dv.topRows(tk).middleCols(h * dh, dh).noalias() += p.transpose() * gh;
          Vector dot = dp.cwiseProduct(p).rowwise().sum();
          Matrix ds = (p.array() * (dp.colwise() - dot).array()).matrix() * sc;
          dq.middleCols(h * dh, dh).noalias() += ds * k.topRows(tk).middleCols(h * dh, dh);
          dk.topRows(tk).middleCols(h * dh, dh).noalias() +=
              ds.transpose() * q.middleCols(h * dh, dh);
        }
        t.accum(iq, dq);
        t.accum(ik, dk);
        t.accum(iv, dv);
      });
}

}  // namespace dtg::ag
