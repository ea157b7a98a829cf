#pragma once

// Parametric components of the causal text model.
//
//   decoder      p(x | a, z)   GRU language model conditioned on [a_vec, z]
//   heads        p(a | z)      two-layer MLP, hidden width z_dim + a_dim
//                p(c | z)      affine
//   posterior    q(z | x,a,c)  GRU reader + MLP -> (mu, logvar)
//   classifier   f(x, a)       GRU reader + logistic output
//
// Sequences enter either as hard token ids or as "soft" sequences: one
// B x V matrix per step whose rows lie on the probability simplex. Readers
// treat the <eos> mass of a soft row as the probability that the sequence
// has ended, so a one-hot soft sequence reads exactly like its hard twin.

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "causalgen/corpus.h"
#include "causalgen/nn.h"

namespace causalgen {

using ad::Matrix;
using ad::Tape;
using ad::Var;

struct ModelConfig {
  int vocab_size = 82;
  int a_dim = 4;
  int z_dim = 28;
  int hidden_dim = 64;
  int emb_dim = 32;
  int c_dim = 4;
  int n_layers = 1;
  uint64_t seed = 7;

  int cond_dim() const { return a_dim + z_dim; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class DecodeMode { kGreedy, kCategorical };

// All-zero (a = 0) or all-one (a = 1) conditioning vector.
Matrix attribute_vector(int a, int a_dim);
// One attribute vector per row.
Matrix attribute_matrix(std::span<const int> a, int a_dim);

// Index into the proxy embedding table: 0, 1, or 2 for ABSENT.
inline int proxy_index(const std::optional<int>& c) { return c ? *c : 2; }

// Gaussian parameters of q(z | ...), one row per batch item.
struct GaussianParams {
  Var mean;
  Var logvar;
};

// z = mu + exp(logvar / 2) * eps
Var reparameterize(const Var& mean, const Var& logvar, const Var& eps);

// softmax((logits + g) / tau); throws std::invalid_argument if tau <= 0.
Var gumbel_softmax(const Var& logits, double tau, const Matrix& gumbel);

// Per-row streams of standard Gumbel noise. Row i is seeded independently,
// so a row's noise does not depend on the rest of the batch.
class GumbelStream {
 public:
  GumbelStream(std::span<const uint64_t> row_seeds, int width);
  Matrix next();

 private:
  std::vector<Rng> rows_;
  int width_;
};

// Reads a hard or soft sequence into its final hidden state.
class SequenceReader {
 public:
  SequenceReader() = default;
  SequenceReader(const std::string& name, int vocab, int emb_dim, int hidden, Rng& rng);

  // Throws std::invalid_argument on an empty sequence.
  Var read(Tape& tape, std::span<const Tokens> x) const;
  Var read_soft(Tape& tape, std::span<const Var> rows) const;
  void collect(nn::ParameterRefs& out) const;
  int hidden() const { return gru_.hidden(); }

 private:
  nn::Embedding embedding_;
  nn::GRUCell gru_;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::string& name, int vocab, int cond_dim, int emb_dim, int hidden, Rng& rng);

  // Sum over steps of log softmax(logits)[x_t], teacher forced from <bos>
  // and including the final <eos>. Returns B x 1.
  Var log_prob(Tape& tape, const Var& cond, std::span<const Tokens> x) const;

  // Relaxed samples: exactly `steps` rows of B x V, each fed back as the
  // expected embedding. Gradients flow to the parameters and to cond.
  std::vector<Var> soft_sample(Tape& tape, const Var& cond, double tau, GumbelStream& noise, int steps) const;

  // Autoregressive decode until <eos> or max_len tokens. Categorical mode
  // uses the Gumbel-max trick on `noise`.
  std::vector<Tokens> sample(const Matrix& cond, DecodeMode mode, int max_len, GumbelStream* noise) const;

  void collect(nn::ParameterRefs& out) const;
  int vocab() const { return embedding_.vocab(); }
  int cond_dim() const { return cond_dim_; }

 private:
  Var initial_state(Tape& tape, const Var& cond) const;
  // Returns (next hidden, logits).
  std::pair<Var, Var> step(Tape& tape, const Var& input_emb, const Var& cond, const Var& h) const;

  int cond_dim_ = 0;
  nn::Embedding embedding_;
  nn::Linear init_;
  nn::GRUCell gru_;
  nn::Linear out_;
};

class PosteriorNet {
 public:
  PosteriorNet() = default;
  PosteriorNet(const ModelConfig& config, Rng& rng);

  GaussianParams infer(Tape& tape, std::span<const Tokens> x, std::span<const int> a,
                       std::span<const int> c_index) const;
  GaussianParams infer_soft(Tape& tape, std::span<const Var> x, std::span<const int> a,
                            std::span<const int> c_index) const;
  void collect(nn::ParameterRefs& out) const;

 private:
  GaussianParams project(Tape& tape, const Var& h, std::span<const int> a, std::span<const int> c_index) const;

  int a_dim_ = 0;
  SequenceReader reader_;
  nn::Embedding proxy_;
  nn::Linear hidden_;
  nn::Linear mean_;
  nn::Linear logvar_;
};

class LatentHeads {
 public:
  LatentHeads() = default;
  LatentHeads(const ModelConfig& config, Rng& rng);

  Var a_logit(Tape& tape, const Var& z) const;
  Var c_logit(Tape& tape, const Var& z) const;
  void collect_a(nn::ParameterRefs& out) const;
  void collect_c(nn::ParameterRefs& out) const;

  int a_hidden_width() const { return a_hidden_.out_features(); }

 private:
  nn::Linear a_hidden_;
  nn::Linear a_out_;
  nn::Linear c_out_;
};

// Binary sequence classifier with a single Bernoulli output. score(x, 1) is
// sigmoid(logit(x)); score(x, 0) is its complement.
class SequenceClassifier {
 public:
  SequenceClassifier() = default;
  SequenceClassifier(const std::string& name, int vocab, int emb_dim, int hidden, uint64_t seed);

  Var logit(Tape& tape, std::span<const Tokens> x) const;
  Var logit_soft(Tape& tape, std::span<const Var> x) const;
  // log f(x, label) per row from the logits.
  static Var log_score(const Var& logit, std::span<const int> label);

  double score(const Tokens& x, int label) const;
  double score_soft(std::span<const Matrix> x, int label) const;
  int predict(const Tokens& x) const;
  // Batched prediction, ids in corpus order.
  std::vector<int> predict_all(std::span<const Tokens> x, int batch_size = 256) const;

  nn::ParameterRefs parameters() const;

 private:
  SequenceReader reader_;
  nn::Linear out_;
};

// Signed label: +1 for label 1, -1 for label 0, as a B x 1 constant.
Matrix label_signs(std::span<const int> labels);

class CausalModel {
 public:
  CausalModel() = default;
  explicit CausalModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  GaussianParams posterior(Tape& tape, std::span<const Tokens> x, std::span<const int> a,
                           std::span<const int> c_index) const {
    return posterior_.infer(tape, x, a, c_index);
  }
  // Conditioning input [a_vec, z] of the decoder.
  Var condition(Tape& tape, std::span<const int> a, const Var& z) const;
  Var sequence_log_prob(Tape& tape, std::span<const Tokens> x, std::span<const int> a, const Var& z) const;

  const Decoder& decoder() const { return decoder_; }
  const PosteriorNet& posterior_net() const { return posterior_; }
  const LatentHeads& heads() const { return heads_; }
  LatentHeads& mutable_heads() { return heads_; }

  // decoder + heads.
  nn::ParameterRefs generative_parameters() const;
  nn::ParameterRefs posterior_parameters() const;
  nn::ParameterRefs parameters() const;

 private:
  ModelConfig config_;
  Decoder decoder_;
  LatentHeads heads_;
  PosteriorNet posterior_;
};

// ---- convenience wrappers for single records (no gradients) ------------

struct PosteriorValue {
  Eigen::VectorXd mean;
  Eigen::VectorXd logvar;
};

PosteriorValue posterior(const CausalModel& model, const Tokens& x, int a, std::optional<int> c);
double sequence_log_prob(const CausalModel& model, const Tokens& x, int a, const Eigen::VectorXd& z);
Tokens sample_sequence(const CausalModel& model, int a, const Eigen::VectorXd& z, DecodeMode mode, int max_len,
                       uint64_t seed);
std::vector<Matrix> soft_sample_sequence(const CausalModel& model, int a, const Eigen::VectorXd& z, double tau,
                                         int max_len, uint64_t seed);
std::pair<double, double> predict_heads(const CausalModel& model, const Eigen::VectorXd& z);
double classifier_score(const SequenceClassifier& f, const Tokens& x, int a);

}  // namespace causalgen
