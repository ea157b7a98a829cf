#include "causalgen/nn.h"

#include <cmath>
#include <stdexcept>

namespace causalgen::nn {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = (2.0 * rng.uniform() - 1.0) * bound;
  }
  return m;
}

void set_trainable(const ParameterRefs& params, bool trainable) {
  for (const Parameter* p : params) const_cast<Parameter*>(p)->trainable = trainable;
}

void zero_grad(const ParameterRefs& params) {
  for (const Parameter* p : params) p->zero_grad();
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng, double init_scale)
    : weight_(name + ".weight", uniform_matrix(in, out, init_scale / std::sqrt(static_cast<double>(in)), rng)),
      bias_(name + ".bias", Matrix::Zero(1, out)) {}

Var Linear::operator()(Tape& tape, const Var& x) const {
  return ad::add_row(ad::matmul(x, tape.param(weight_)), tape.param(bias_));
}

void Linear::collect(ParameterRefs& out) const {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

Embedding::Embedding(const std::string& name, int vocab, int dim, Rng& rng)
    : table_(name + ".table", uniform_matrix(vocab, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng)) {}

Var Embedding::lookup(Tape& tape, std::span<const int> ids) const {
  return ad::gather_rows(tape.param(table_), ids);
}

Var Embedding::soft(Tape& tape, const Var& probs) const { return ad::matmul(probs, tape.param(table_)); }

void Embedding::collect(ParameterRefs& out) const { out.push_back(&table_); }

GRUCell::GRUCell(const std::string& name, int in, int hidden, Rng& rng)
    : hidden_(hidden),
      input_(name + ".input", in, 3 * hidden, rng),
      recurrent_(name + ".recurrent", hidden, 3 * hidden, rng) {}

Var GRUCell::step(Tape& tape, const Var& x, const Var& h) const {
  const Eigen::Index H = hidden_;
  Var gi = input_(tape, x);
  Var gh = recurrent_(tape, h);
  Var reset = ad::sigmoid(ad::slice_cols(gi, 0, H) + ad::slice_cols(gh, 0, H));
  Var update = ad::sigmoid(ad::slice_cols(gi, H, H) + ad::slice_cols(gh, H, H));
  Var cand = ad::tanh(ad::slice_cols(gi, 2 * H, H) + reset * ad::slice_cols(gh, 2 * H, H));
  // (1 - u) * n + u * h
  return cand + update * (h - cand);
}

Var GRUCell::masked_step(Tape& tape, const Var& x, const Var& h, const Var& mask) const {
  Var next = step(tape, x, h);
  return h + ad::mul_col(next - h, mask);
}

void GRUCell::collect(ParameterRefs& out) const {
  input_.collect(out);
  recurrent_.collect(out);
}

AdamW::AdamW(ParameterRefs params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  if (config_.learning_rate <= 0) throw std::invalid_argument("AdamW: learning_rate must be > 0");
  for (const Parameter* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step() {
  double sq = 0.0;
  for (const Parameter* p : params_) sq += p->grad.squaredNorm();
  last_grad_norm_ = std::sqrt(sq);
  const double clip =
      (config_.clip_norm > 0 && last_grad_norm_ > config_.clip_norm) ? config_.clip_norm / last_grad_norm_ : 1.0;

  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (size_t k = 0; k < params_.size(); ++k) {
    auto* p = const_cast<Parameter*>(params_[k]);
    if (!p->trainable) {
      p->zero_grad();
      continue;
    }
    const Matrix g = p->grad * clip;
    m_[k] = config_.beta1 * m_[k] + (1.0 - config_.beta1) * g;
    v_[k] = config_.beta2 * v_[k] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    if (config_.weight_decay > 0 && p->value.rows() > 1) {
      p->value *= 1.0 - config_.learning_rate * config_.weight_decay;
    }
    p->value.array() -= config_.learning_rate * (m_[k].array() / bc1) /
                        ((v_[k].array() / bc2).sqrt() + config_.eps);
    p->zero_grad();
  }
}

}  // namespace causalgen::nn
