#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace dtg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ag {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

// Reverse-mode tape. Nodes are appended during the forward pass and replayed
// in reverse by backward(). Storage is a deque so node references stay valid
// while new nodes are pushed.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int)>;

  explicit Tape(bool training = false, std::uint64_t dropout_seed = 0)
      : training_(training), dropout_rng_(dropout_seed) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant_scalar(double v);
  // Leaf bound to a parameter; gradients flow into param.grad on backward().
  // Repeated calls for the same parameter return the same node.
  Var param(Parameter& p);
  Var push(Matrix value, bool needs_grad, BackwardFn fn);

  void backward(Var root, double seed = 1.0);

  const Matrix& value(int id) const;
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool has_grad(int id) const { return nodes_[id].grad.size() > 0; }

  template <typename Expr>
  void accum(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  bool training() const { return training_; }
  std::mt19937_64& dropout_rng() { return dropout_rng_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;
    Matrix grad;
    Parameter* param = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool training_;
  std::mt19937_64 dropout_rng_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

// Elementwise and structural ops. Shapes follow Eigen conventions; row
// vectors broadcast across rows, column vectors across columns.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var add_row(Var a, Var row);  // a + 1·row
Var add_col(Var a, Var col);  // a + col·1ᵀ
Var mul_row(Var a, Var row);  // each row of a scaled elementwise by row
Var mul_col(Var a, Var col);  // row t of a scaled by col[t]
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a · bᵀ
Var transpose(Var a);
Var linear(Var x, Var weight, Var bias);  // x·W + b

Var gelu(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var log_clamped(Var a, double lo, double hi);  // log(clamp(a)); zero grad where clamped
Var clamp(Var a, double lo, double hi);
Var dropout(Var a, double rate);

// Row-wise softmax of (a + additive_mask). The mask holds 0 or -inf and has
// either a's shape or a single row broadcast to every row.
Var softmax_rows(Var a, const Matrix* additive_mask = nullptr);
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var table, const std::vector<int>& ids);
Var element(Var a, Eigen::Index r, Eigen::Index c);

Var sum(Var a);
Var mean(Var a);
Var mean_rows(Var a);  // column-wise mean, result 1×cols

// Identity on the forward pass; multiplies the incoming gradient by
// -lambda on the way back.
Var gradient_reversal(Var a, double lambda);

// Multi-head scaled dot-product attention. query: Tq×D, key/value: Tk×D
// (already projected). key_valid masks out keys at or beyond that count;
// causal additionally hides keys with index greater than the query index.
Var multi_head_attention(Var query, Var key, Var value, int n_heads,
                         Eigen::Index key_valid, bool causal);

}  // namespace ag
}  // namespace dtg
