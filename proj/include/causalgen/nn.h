#pragma once

// Small neural building blocks on top of the autodiff tape.

#include <string>
#include <vector>

#include "causalgen/autodiff.h"
#include "causalgen/rng.h"

namespace causalgen::nn {

using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

using ParameterRefs = std::vector<const Parameter*>;

// Uniform(-bound, bound) initialization.
Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng);

void set_trainable(const ParameterRefs& params, bool trainable);
void zero_grad(const ParameterRefs& params);

class Linear {
 public:
  Linear() = default;
  // Weights ~ U(-s/sqrt(in), s/sqrt(in)), biases zero.
  Linear(const std::string& name, int in, int out, Rng& rng, double init_scale = 1.0);

  Var operator()(Tape& tape, const Var& x) const;
  void collect(ParameterRefs& out) const;

  int in_features() const { return static_cast<int>(weight_.value.rows()); }
  int out_features() const { return static_cast<int>(weight_.value.cols()); }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }

 private:
  Parameter weight_;
  Parameter bias_;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, int vocab, int dim, Rng& rng);

  Var lookup(Tape& tape, std::span<const int> ids) const;
  // probs (B x V) times the table: the expected embedding under a soft token.
  Var soft(Tape& tape, const Var& probs) const;
  void collect(ParameterRefs& out) const;

  int vocab() const { return static_cast<int>(table_.value.rows()); }
  int dim() const { return static_cast<int>(table_.value.cols()); }

 private:
  Parameter table_;
};

class GRUCell {
 public:
  GRUCell() = default;
  GRUCell(const std::string& name, int in, int hidden, Rng& rng);

  Var step(Tape& tape, const Var& x, const Var& h) const;
  // Same as step() but row i keeps h where mask(i) is 0; mask is B x 1 in [0, 1].
  Var masked_step(Tape& tape, const Var& x, const Var& h, const Var& mask) const;
  void collect(ParameterRefs& out) const;

  int hidden() const { return hidden_; }

 private:
  int hidden_ = 0;
  Linear input_;
  Linear recurrent_;
};

struct AdamWConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  // Global gradient-norm clip; <= 0 disables.
  double clip_norm = 5.0;
};

// Adam with decoupled weight decay. Biases (1-row parameters) are not decayed.
class AdamW {
 public:
  AdamW(ParameterRefs params, AdamWConfig config);

  // Applies one update from the accumulated gradients, then zeroes them.
  void step();
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double last_grad_norm() const { return last_grad_norm_; }

 private:
  ParameterRefs params_;
  AdamWConfig config_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long step_ = 0;
  double last_grad_norm_ = 0.0;
};

}  // namespace causalgen::nn
