#include "causalgen/autodiff.h"

#include <cassert>
#include <stdexcept>

namespace causalgen::ad {

const Matrix& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::param(const Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  Var v = record(p.value, p.trainable, nullptr);
  nodes_[v.id_].param = &p;
  bound_.emplace(&p, v.id_);
  return v;
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && enable_grad_;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::backward(const Var& root) {
  if (root.tape_ != this) throw std::invalid_argument("backward: variable from another tape");
  Node& r = nodes_[root.id_];
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw std::invalid_argument("backward: root must be a 1x1 scalar");
  }
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(1, 1);
  for (int i = root.id_; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.value, n.grad);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id_];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.tape() != b.tape()) throw std::invalid_argument(std::string(op) + ": mixed tapes");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value() * b.value();
  return a.tape()->record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
                    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
                  });
}

Var operator+(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() + b.value(), a.requires_grad() || b.requires_grad(),
                          [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                            t.accumulate(ia, g);
                            t.accumulate(ib, g);
                          });
}

Var operator-(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value() - b.value(), a.requires_grad() || b.requires_grad(),
                          [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                            t.accumulate(ia, g);
                            t.accumulate(ib, -g);
                          });
}

Var operator*(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  const int ia = a.id(), ib = b.id();
  return a.tape()->record(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                          [ia, ib](Tape& t, const Matrix&, const Matrix& g) {
                            if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
                            if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
                          });
}

Var operator-(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value() * s, a.requires_grad(),
                          [ia, s](Tape& t, const Matrix&, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_scalar(const Var& a, double s) {
  const int ia = a.id();
  return a.tape()->record(a.value().array() + s, a.requires_grad(),
                          [ia](Tape& t, const Matrix&, const Matrix& g) { t.accumulate(ia, g); });
}

Var one_minus(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(1.0 - a.value().array(), a.requires_grad(),
                          [ia](Tape& t, const Matrix&, const Matrix& g) { t.accumulate(ia, -g); });
}

Var add_row(const Var& x, const Var& b) {
  if (b.rows() != 1 || b.cols() != x.cols()) throw std::invalid_argument("add_row: bias shape");
  const int ix = x.id(), ib = b.id();
  Matrix out = x.value().rowwise() + b.value().row(0);
  return x.tape()->record(std::move(out), x.requires_grad() || b.requires_grad(),
                          [ix, ib](Tape& t, const Matrix&, const Matrix& g) {
                            t.accumulate(ix, g);
                            if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
                          });
}

Var mul_col(const Var& x, const Var& c) {
  if (c.cols() != 1 || c.rows() != x.rows()) throw std::invalid_argument("mul_col: column shape");
  const int ix = x.id(), ic = c.id();
  Matrix out = x.value().array().colwise() * c.value().col(0).array();
  return x.tape()->record(std::move(out), x.requires_grad() || c.requires_grad(),
                          [ix, ic](Tape& t, const Matrix&, const Matrix& g) {
                            if (t.requires_grad(ix)) {
                              Matrix gx = g.array().colwise() * t.value(ic).col(0).array();
                              t.accumulate(ix, gx);
                            }
                            if (t.requires_grad(ic)) {
                              t.accumulate(ic, g.cwiseProduct(t.value(ix)).rowwise().sum());
                            }
                          });
}

Var sigmoid(const Var& a) {
  const int ia = a.id();
  Matrix out = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return a.tape()->record(std::move(out), a.requires_grad(),
                          [ia](Tape& t, const Matrix& y, const Matrix& g) {
                            t.accumulate(ia, g.array() * y.array() * (1.0 - y.array()));
                          });
}

Var tanh(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().array().tanh(), a.requires_grad(),
                          [ia](Tape& t, const Matrix& y, const Matrix& g) {
                            t.accumulate(ia, g.array() * (1.0 - y.array().square()));
                          });
}

Var exp(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().array().exp(), a.requires_grad(),
                          [ia](Tape& t, const Matrix& y, const Matrix& g) {
                            t.accumulate(ia, g.cwiseProduct(y));
                          });
}

Var log(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().array().log(), a.requires_grad(),
                          [ia](Tape& t, const Matrix&, const Matrix& g) {
                            t.accumulate(ia, g.array() / t.value(ia).array());
                          });
}

Var square(const Var& a) {
  const int ia = a.id();
  return a.tape()->record(a.value().array().square(), a.requires_grad(),
                          [ia](Tape& t, const Matrix&, const Matrix& g) {
                            t.accumulate(ia, 2.0 * g.array() * t.value(ia).array());
                          });
}

Var log_sigmoid(const Var& a) {
  const int ia = a.id();
  // log sigmoid(x) = min(x, 0) - log1p(exp(-|x|))
  Matrix out = a.value().unaryExpr(
      [](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); });
  return a.tape()->record(std::move(out), a.requires_grad(),
                          [ia](Tape& t, const Matrix&, const Matrix& g) {
                            // d/dx = sigmoid(-x)
                            Matrix d = t.value(ia).unaryExpr([](double x) {
                              if (x >= 0) {
                                const double e = std::exp(-x);
                                return e / (1.0 + e);
                              }
                              return 1.0 / (1.0 + std::exp(x));
                            });
                            t.accumulate(ia, g.cwiseProduct(d));
                          });
}

Var softmax_rows(const Var& a) {
  const int ia = a.id();
  Matrix out = (a.value().colwise() - a.value().rowwise().maxCoeff()).array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return a.tape()->record(std::move(out), a.requires_grad(),
                          [ia](Tape& t, const Matrix& y, const Matrix& g) {
                            Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
                            Matrix d = y.array() * (g.colwise() - dot).array();
                            t.accumulate(ia, d);
                          });
}

Var log_softmax_rows(const Var& a) {
  const int ia = a.id();
  Matrix shifted = a.value().colwise() - a.value().rowwise().maxCoeff();
  Eigen::VectorXd lse = shifted.array().exp().rowwise().sum().log();
  Matrix out = shifted.colwise() - lse;
  return a.tape()->record(std::move(out), a.requires_grad(),
                          [ia](Tape& t, const Matrix& y, const Matrix& g) {
                            Eigen::VectorXd gsum = g.rowwise().sum();
                            Matrix d = g - (y.array().exp().colwise() * gsum.array()).matrix();
                            t.accumulate(ia, d);
                          });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& tape = *parts[0].tape();
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  bool rg = false;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    if (p.tape() != &tape || p.rows() != rows) throw std::invalid_argument("concat_cols: shape mismatch");
    cols += p.cols();
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return tape.record(std::move(out), rg,
                     [ids = std::move(ids), widths = std::move(widths)](Tape& t, const Matrix&, const Matrix& g) {
                       Eigen::Index off = 0;
                       for (size_t k = 0; k < ids.size(); ++k) {
                         if (t.requires_grad(ids[k])) t.accumulate(ids[k], g.middleCols(off, widths[k]));
                         off += widths[k];
                       }
                     });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  const int ia = a.id();
  const Eigen::Index total = a.cols();
  return a.tape()->record(a.value().middleCols(start, count), a.requires_grad(),
                          [ia, start, count, total](Tape& t, const Matrix&, const Matrix& g) {
                            Matrix full = Matrix::Zero(g.rows(), total);
                            full.middleCols(start, count) = g;
                            t.accumulate(ia, full);
                          });
}

Var col(const Var& a, Eigen::Index index) { return slice_cols(a, index, 1); }

Var gather_rows(const Var& table, std::span<const int> ids) {
  const int it = table.id();
  const Matrix& tv = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) throw std::out_of_range("gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  const Eigen::Index table_rows = tv.rows();
  return table.tape()->record(std::move(out), table.requires_grad(),
                              [it, idx = std::move(idx), table_rows](Tape& t, const Matrix&, const Matrix& g) {
                                Matrix d = Matrix::Zero(table_rows, g.cols());
                                for (size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                                t.accumulate(it, d);
                              });
}

Var pick(const Var& a, std::span<const int> index) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) throw std::invalid_argument("pick: index length");
  const int ia = a.id();
  const Matrix& av = a.value();
  Matrix out(av.rows(), 1);
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    if (index[i] < 0 || index[i] >= av.cols()) throw std::out_of_range("pick: index out of range");
    out(i, 0) = av(i, index[i]);
  }
  std::vector<int> idx(index.begin(), index.end());
  const Eigen::Index cols = av.cols();
  return a.tape()->record(std::move(out), a.requires_grad(),
                          [ia, idx = std::move(idx), cols](Tape& t, const Matrix&, const Matrix& g) {
                            Matrix d = Matrix::Zero(static_cast<Eigen::Index>(idx.size()), cols);
                            for (size_t i = 0; i < idx.size(); ++i) d(static_cast<Eigen::Index>(i), idx[i]) = g(static_cast<Eigen::Index>(i), 0);
                            t.accumulate(ia, d);
                          });
}

Var sum_cols(const Var& a) {
  const int ia = a.id();
  const Eigen::Index cols = a.cols();
  return a.tape()->record(a.value().rowwise().sum(), a.requires_grad(),
                          [ia, cols](Tape& t, const Matrix&, const Matrix& g) {
                            t.accumulate(ia, g.col(0).replicate(1, cols));
                          });
}

Var mean_cols(const Var& a) { return scale(sum_cols(a), 1.0 / static_cast<double>(a.cols())); }

Var sum_all(const Var& a) {
  const int ia = a.id();
  const Eigen::Index rows = a.rows(), cols = a.cols();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), a.requires_grad(),
                          [ia, rows, cols](Tape& t, const Matrix&, const Matrix& g) {
                            t.accumulate(ia, Matrix::Constant(rows, cols, g(0, 0)));
                          });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

Var stop_gradient(const Var& a) { return a.tape()->constant(a.value()); }

}  // namespace causalgen::ad
