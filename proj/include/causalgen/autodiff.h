#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Values are matrices
// whose rows are batch items; scalars are 1x1. Calling Tape::backward() on a
// 1x1 node propagates gradients to all recorded nodes and accumulates them
// into the Parameter objects that were bound with Tape::param().

#include <Eigen/Dense>

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace causalgen::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Matrix init)
      : value(std::move(init)), grad(Matrix::Zero(value.rows(), value.cols())), name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  void zero_grad() const { grad.setZero(); }

  // Frozen parameters are bound as constants: no gradient reaches them.
  bool trainable = true;
  // Tapes copy the value at bind time; backward accumulates into grad.
  Matrix value;
  mutable Matrix grad;

 private:
  std::string name_;
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  // Receives the node's value and gradient; accumulates into its inputs.
  using Backward = std::function<void(Tape&, const Matrix& out, const Matrix& grad)>;

  // A tape built with enable_grad = false records values only (inference).
  explicit Tape(bool enable_grad = true) : enable_grad_(enable_grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Binds a parameter; repeated binds within one tape return the same node.
  Var param(const Parameter& p);
  Var record(Matrix value, bool requires_grad, Backward backward);

  // Seeds d(root)/d(root) = 1 and runs the reverse sweep. root must be 1x1.
  void backward(const Var& root);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient of a node after backward(); zero if it was never reached.
  Matrix grad(const Var& v) const;

  // Used by backward closures.
  template <typename Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad.array() += g.array();
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
    const Parameter* param = nullptr;
  };
  bool enable_grad_ = true;
  // A deque keeps value() references valid while the tape grows.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> bound_;
};

// ---- elementwise and linear algebra -------------------------------------

Var matmul(const Var& a, const Var& b);
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);  // Hadamard product
Var operator-(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var one_minus(const Var& a);
// x (B x C) + b (1 x C) broadcast over rows.
Var add_row(const Var& x, const Var& b);
// x (B x C) scaled row-wise by col (B x 1).
Var mul_col(const Var& x, const Var& col);

Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
// log(sigmoid(x)), computed without overflow.
Var log_sigmoid(const Var& a);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var col(const Var& a, Eigen::Index index);

// Row lookup: out.row(i) = table.row(ids[i]).
Var gather_rows(const Var& table, std::span<const int> ids);
// out(i, 0) = a(i, index[i]).
Var pick(const Var& a, std::span<const int> index);

Var sum_cols(const Var& a);   // B x C -> B x 1
Var mean_cols(const Var& a);  // B x C -> B x 1
Var sum_all(const Var& a);    // -> 1 x 1
Var mean_all(const Var& a);   // -> 1 x 1

Var stop_gradient(const Var& a);

}  // namespace causalgen::ad
