#include "causalgen/seq_model.h"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace causalgen {

namespace {

enum Stream : uint64_t {
  kDecoderInit = 1,
  kHeadsInit = 2,
  kPosteriorInit = 3,
};

void check_nonempty(std::span<const Tokens> x, const char* what) {
  if (x.empty()) throw std::invalid_argument(std::string(what) + ": empty batch");
  for (const auto& seq : x) {
    if (seq.empty()) throw std::invalid_argument(std::string(what) + ": empty sequence");
  }
}

void check_vocab(std::span<const Tokens> x, int vocab, const char* what) {
  for (const auto& seq : x) {
    for (int t : seq) {
      if (t < 0 || t >= vocab) {
        throw std::out_of_range(std::string(what) + ": token id " + std::to_string(t) + " outside vocabulary of " +
                                std::to_string(vocab));
      }
    }
  }
}

size_t max_length(std::span<const Tokens> x) {
  size_t m = 0;
  for (const auto& s : x) m = std::max(m, s.size());
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 3) throw std::invalid_argument("model config: vocab_size must be >= 3");
  if (a_dim < 1 || z_dim < 1 || hidden_dim < 1 || emb_dim < 1 || c_dim < 1) {
    throw std::invalid_argument("model config: dimensions must be >= 1");
  }
  if (n_layers != 1) throw std::invalid_argument("model config: only single-layer recurrent networks are supported");
}

Matrix attribute_vector(int a, int a_dim) {
  if (a != 0 && a != 1) throw std::invalid_argument("attribute_vector: a must be 0 or 1, got " + std::to_string(a));
  return Matrix::Constant(1, a_dim, static_cast<double>(a));
}

Matrix attribute_matrix(std::span<const int> a, int a_dim) {
  Matrix m(static_cast<Eigen::Index>(a.size()), a_dim);
  for (size_t i = 0; i < a.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = attribute_vector(a[i], a_dim);
  return m;
}

Var reparameterize(const Var& mean, const Var& logvar, const Var& eps) {
  return mean + ad::exp(ad::scale(logvar, 0.5)) * eps;
}

Var gumbel_softmax(const Var& logits, double tau, const Matrix& gumbel) {
  if (!(tau > 0)) throw std::invalid_argument("gumbel_softmax: temperature must be > 0");
  Var perturbed = logits + logits.tape()->constant(gumbel);
  return ad::softmax_rows(ad::scale(perturbed, 1.0 / tau));
}

GumbelStream::GumbelStream(std::span<const uint64_t> row_seeds, int width) : width_(width) {
  rows_.reserve(row_seeds.size());
  for (uint64_t s : row_seeds) rows_.emplace_back(s);
}

Matrix GumbelStream::next() {
  Matrix g(static_cast<Eigen::Index>(rows_.size()), width_);
  for (size_t i = 0; i < rows_.size(); ++i) {
    for (int j = 0; j < width_; ++j) g(static_cast<Eigen::Index>(i), j) = rows_[i].gumbel();
  }
  return g;
}

// ---- SequenceReader ------------------------------------------------------

SequenceReader::SequenceReader(const std::string& name, int vocab, int emb_dim, int hidden, Rng& rng)
    : embedding_(name + ".embedding", vocab, emb_dim, rng), gru_(name + ".gru", emb_dim, hidden, rng) {}

Var SequenceReader::read(Tape& tape, std::span<const Tokens> x) const {
  check_nonempty(x, "sequence reader");
  check_vocab(x, embedding_.vocab(), "sequence reader");
  const auto B = static_cast<Eigen::Index>(x.size());
  const size_t T = max_length(x);
  Var h = tape.constant(Matrix::Zero(B, gru_.hidden()));
  std::vector<int> ids(x.size());
  for (size_t t = 0; t < T; ++t) {
    Matrix mask(B, 1);
    bool all_alive = true;
    for (size_t i = 0; i < x.size(); ++i) {
      const bool alive = t < x[i].size();
      ids[i] = alive ? x[i][t] : Vocabulary::kEos;
      mask(static_cast<Eigen::Index>(i), 0) = alive ? 1.0 : 0.0;
      all_alive = all_alive && alive;
    }
    Var emb = embedding_.lookup(tape, ids);
    h = all_alive ? gru_.step(tape, emb, h) : gru_.masked_step(tape, emb, h, tape.constant(std::move(mask)));
  }
  return h;
}

Var SequenceReader::read_soft(Tape& tape, std::span<const Var> rows) const {
  if (rows.empty()) throw std::invalid_argument("sequence reader: empty soft sequence");
  const Eigen::Index B = rows[0].rows();
  Var h = tape.constant(Matrix::Zero(B, gru_.hidden()));
  Var alive = tape.constant(Matrix::Ones(B, 1));
  for (const Var& y : rows) {
    if (y.cols() != embedding_.vocab()) throw std::invalid_argument("sequence reader: soft row width != vocab");
    alive = alive * ad::one_minus(ad::col(y, Vocabulary::kEos));
    h = gru_.masked_step(tape, embedding_.soft(tape, y), h, alive);
  }
  return h;
}

void SequenceReader::collect(nn::ParameterRefs& out) const {
  embedding_.collect(out);
  gru_.collect(out);
}

// ---- Decoder ---------------------------------------------------------------

Decoder::Decoder(const std::string& name, int vocab, int cond_dim, int emb_dim, int hidden, Rng& rng)
    : cond_dim_(cond_dim),
      embedding_(name + ".embedding", vocab, emb_dim, rng),
      init_(name + ".init", cond_dim, hidden, rng),
      gru_(name + ".gru", emb_dim + cond_dim, hidden, rng),
      out_(name + ".out", hidden, vocab, rng, 0.5) {}

Var Decoder::initial_state(Tape& tape, const Var& cond) const { return ad::tanh(init_(tape, cond)); }

std::pair<Var, Var> Decoder::step(Tape& tape, const Var& input_emb, const Var& cond, const Var& h) const {
  const Var parts[] = {input_emb, cond};
  Var next = gru_.step(tape, ad::concat_cols(parts), h);
  return {next, out_(tape, next)};
}

Var Decoder::log_prob(Tape& tape, const Var& cond, std::span<const Tokens> x) const {
  check_nonempty(x, "sequence_log_prob");
  check_vocab(x, embedding_.vocab(), "sequence_log_prob");
  if (cond.rows() != static_cast<Eigen::Index>(x.size()) || cond.cols() != cond_dim_) {
    throw std::invalid_argument("sequence_log_prob: conditioning shape mismatch");
  }
  const auto B = static_cast<Eigen::Index>(x.size());
  const size_t T = max_length(x) + 1;
  Var h = initial_state(tape, cond);
  Var total;
  std::vector<int> inputs(x.size()), targets(x.size());
  for (size_t t = 0; t < T; ++t) {
    Matrix mask(B, 1);
    bool all_alive = true;
    for (size_t i = 0; i < x.size(); ++i) {
      const size_t len = x[i].size();
      inputs[i] = t == 0 ? Vocabulary::kBos : (t - 1 < len ? x[i][t - 1] : Vocabulary::kEos);
      targets[i] = t < len ? x[i][t] : Vocabulary::kEos;
      const bool alive = t <= len;
      mask(static_cast<Eigen::Index>(i), 0) = alive ? 1.0 : 0.0;
      all_alive = all_alive && alive;
    }
    auto [next, logits] = step(tape, embedding_.lookup(tape, inputs), cond, h);
    h = next;
    Var lp = ad::pick(ad::log_softmax_rows(logits), targets);
    if (!all_alive) lp = ad::mul_col(lp, tape.constant(std::move(mask)));
    total = total.valid() ? total + lp : lp;
  }
  return total;
}

std::vector<Var> Decoder::soft_sample(Tape& tape, const Var& cond, double tau, GumbelStream& noise,
                                      int steps) const {
  if (steps < 1) throw std::invalid_argument("soft_sample: steps must be >= 1");
  const auto B = static_cast<size_t>(cond.rows());
  Var h = initial_state(tape, cond);
  std::vector<int> bos(B, Vocabulary::kBos);
  Var input = embedding_.lookup(tape, bos);
  // <bos> is never an output; keep the relaxed path consistent with sample().
  Matrix bos_mask = Matrix::Zero(1, embedding_.vocab());
  bos_mask(0, Vocabulary::kBos) = -1e30;
  const Var mask = tape.constant(std::move(bos_mask));
  std::vector<Var> rows;
  rows.reserve(steps);
  for (int t = 0; t < steps; ++t) {
    auto [next, logits] = step(tape, input, cond, h);
    h = next;
    Var y = gumbel_softmax(ad::add_row(logits, mask), tau, noise.next());
    rows.push_back(y);
    input = embedding_.soft(tape, y);
  }
  return rows;
}

std::vector<Tokens> Decoder::sample(const Matrix& cond, DecodeMode mode, int max_len, GumbelStream* noise) const {
  if (max_len < 1 || max_len > kMaxSequenceLength) throw std::invalid_argument("sample: max_len must be in [1, 20]");
  if (mode == DecodeMode::kCategorical && noise == nullptr) {
    throw std::invalid_argument("sample: categorical mode needs a noise stream");
  }
  const auto B = static_cast<size_t>(cond.rows());
  Tape tape(false);
  Var c = tape.constant(cond);
  Var h = initial_state(tape, c);
  std::vector<int> input(B, Vocabulary::kBos);
  std::vector<Tokens> out(B);
  std::vector<bool> done(B, false);
  for (int t = 0; t < max_len; ++t) {
    auto [next, logits] = step(tape, embedding_.lookup(tape, input), c, h);
    h = next;
    Matrix scores = logits.value();
    if (mode == DecodeMode::kCategorical) scores += noise->next();
    scores.col(Vocabulary::kBos).setConstant(-std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < B; ++i) {
      Eigen::Index best = 0;
      scores.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
      input[i] = static_cast<int>(best);
      if (done[i]) continue;
      if (best == Vocabulary::kEos) {
        done[i] = true;
      } else {
        out[i].push_back(static_cast<int>(best));
      }
    }
    if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
  }
  return out;
}

void Decoder::collect(nn::ParameterRefs& out) const {
  embedding_.collect(out);
  init_.collect(out);
  gru_.collect(out);
  out_.collect(out);
}

// ---- PosteriorNet ----------------------------------------------------------

PosteriorNet::PosteriorNet(const ModelConfig& config, Rng& rng)
    : a_dim_(config.a_dim),
      reader_("posterior.reader", config.vocab_size, config.emb_dim, config.hidden_dim, rng),
      proxy_("posterior.proxy", 3, config.c_dim, rng),
      hidden_("posterior.hidden", config.hidden_dim + config.a_dim + config.c_dim, config.hidden_dim, rng),
      mean_("posterior.mean", config.hidden_dim, config.z_dim, rng),
      logvar_("posterior.logvar", config.hidden_dim, config.z_dim, rng, 0.1) {}

GaussianParams PosteriorNet::project(Tape& tape, const Var& h, std::span<const int> a,
                                     std::span<const int> c_index) const {
  if (a.size() != static_cast<size_t>(h.rows()) || c_index.size() != a.size()) {
    throw std::invalid_argument("posterior: batch size mismatch");
  }
  for (int c : c_index) {
    if (c < 0 || c > 2) throw std::invalid_argument("posterior: proxy index must be 0, 1 or 2 (absent)");
  }
  const Var parts[] = {h, tape.constant(attribute_matrix(a, a_dim_)), proxy_.lookup(tape, c_index)};
  Var features = ad::tanh(hidden_(tape, ad::concat_cols(parts)));
  return {mean_(tape, features), logvar_(tape, features)};
}

GaussianParams PosteriorNet::infer(Tape& tape, std::span<const Tokens> x, std::span<const int> a,
                                   std::span<const int> c_index) const {
  return project(tape, reader_.read(tape, x), a, c_index);
}

GaussianParams PosteriorNet::infer_soft(Tape& tape, std::span<const Var> x, std::span<const int> a,
                                        std::span<const int> c_index) const {
  return project(tape, reader_.read_soft(tape, x), a, c_index);
}

void PosteriorNet::collect(nn::ParameterRefs& out) const {
  reader_.collect(out);
  proxy_.collect(out);
  hidden_.collect(out);
  mean_.collect(out);
  logvar_.collect(out);
}

// ---- LatentHeads -----------------------------------------------------------

LatentHeads::LatentHeads(const ModelConfig& config, Rng& rng)
    : a_hidden_("heads.a_hidden", config.z_dim, config.z_dim + config.a_dim, rng),
      a_out_("heads.a_out", config.z_dim + config.a_dim, 1, rng),
      c_out_("heads.c_out", config.z_dim, 1, rng) {}

Var LatentHeads::a_logit(Tape& tape, const Var& z) const { return a_out_(tape, ad::tanh(a_hidden_(tape, z))); }

Var LatentHeads::c_logit(Tape& tape, const Var& z) const { return c_out_(tape, z); }

void LatentHeads::collect_a(nn::ParameterRefs& out) const {
  a_hidden_.collect(out);
  a_out_.collect(out);
}

void LatentHeads::collect_c(nn::ParameterRefs& out) const { c_out_.collect(out); }

// ---- SequenceClassifier ------------------------------------------------------

Matrix label_signs(std::span<const int> labels) {
  Matrix s(static_cast<Eigen::Index>(labels.size()), 1);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("label must be 0 or 1");
    s(static_cast<Eigen::Index>(i), 0) = labels[i] == 1 ? 1.0 : -1.0;
  }
  return s;
}

SequenceClassifier::SequenceClassifier(const std::string& name, int vocab, int emb_dim, int hidden, uint64_t seed) {
  Rng rng(seed);
  reader_ = SequenceReader(name + ".reader", vocab, emb_dim, hidden, rng);
  out_ = nn::Linear(name + ".out", hidden, 1, rng);
}

Var SequenceClassifier::logit(Tape& tape, std::span<const Tokens> x) const { return out_(tape, reader_.read(tape, x)); }

Var SequenceClassifier::logit_soft(Tape& tape, std::span<const Var> x) const {
  return out_(tape, reader_.read_soft(tape, x));
}

Var SequenceClassifier::log_score(const Var& logit, std::span<const int> label) {
  return ad::log_sigmoid(logit * logit.tape()->constant(label_signs(label)));
}

double SequenceClassifier::score(const Tokens& x, int label) const {
  Tape tape(false);
  const Tokens batch[] = {x};
  const int labels[] = {label};
  return std::exp(log_score(logit(tape, batch), labels).scalar());
}

double SequenceClassifier::score_soft(std::span<const Matrix> x, int label) const {
  Tape tape(false);
  std::vector<Var> rows;
  for (const auto& m : x) rows.push_back(tape.constant(m));
  if (rows.empty()) throw std::invalid_argument("classifier: empty soft sequence");
  const int labels[] = {label};
  return std::exp(log_score(logit_soft(tape, rows), labels).scalar());
}

int SequenceClassifier::predict(const Tokens& x) const {
  Tape tape(false);
  const Tokens batch[] = {x};
  return logit(tape, batch).scalar() > 0 ? 1 : 0;
}

std::vector<int> SequenceClassifier::predict_all(std::span<const Tokens> x, int batch_size) const {
  std::vector<int> out;
  out.reserve(x.size());
  for (size_t start = 0; start < x.size(); start += batch_size) {
    const size_t n = std::min<size_t>(batch_size, x.size() - start);
    Tape tape(false);
    Var l = logit(tape, x.subspan(start, n));
    for (size_t i = 0; i < n; ++i) out.push_back(l.value()(static_cast<Eigen::Index>(i), 0) > 0 ? 1 : 0);
  }
  return out;
}

nn::ParameterRefs SequenceClassifier::parameters() const {
  nn::ParameterRefs out;
  reader_.collect(out);
  out_.collect(out);
  return out;
}

// ---- CausalModel -------------------------------------------------------------

CausalModel::CausalModel(const ModelConfig& config) : config_(config) {
  config.validate();
  Rng dec_rng(derive_seed(config.seed, kDecoderInit));
  decoder_ = Decoder("decoder", config.vocab_size, config.cond_dim(), config.emb_dim, config.hidden_dim, dec_rng);
  Rng heads_rng(derive_seed(config.seed, kHeadsInit));
  heads_ = LatentHeads(config, heads_rng);
  Rng post_rng(derive_seed(config.seed, kPosteriorInit));
  posterior_ = PosteriorNet(config, post_rng);
}

Var CausalModel::condition(Tape& tape, std::span<const int> a, const Var& z) const {
  if (z.cols() != config_.z_dim) throw std::invalid_argument("condition: z has wrong width");
  const Var parts[] = {tape.constant(attribute_matrix(a, config_.a_dim)), z};
  return ad::concat_cols(parts);
}

Var CausalModel::sequence_log_prob(Tape& tape, std::span<const Tokens> x, std::span<const int> a,
                                   const Var& z) const {
  return decoder_.log_prob(tape, condition(tape, a, z), x);
}

nn::ParameterRefs CausalModel::generative_parameters() const {
  nn::ParameterRefs out;
  decoder_.collect(out);
  heads_.collect_a(out);
  heads_.collect_c(out);
  return out;
}

nn::ParameterRefs CausalModel::posterior_parameters() const {
  nn::ParameterRefs out;
  posterior_.collect(out);
  return out;
}

nn::ParameterRefs CausalModel::parameters() const {
  nn::ParameterRefs out = generative_parameters();
  posterior_.collect(out);
  return out;
}

// ---- single-record wrappers ----------------------------------------------------

PosteriorValue posterior(const CausalModel& model, const Tokens& x, int a, std::optional<int> c) {
  Tape tape(false);
  const Tokens xs[] = {x};
  const int as[] = {a};
  const int cs[] = {proxy_index(c)};
  GaussianParams q = model.posterior(tape, xs, as, cs);
  return {q.mean.value().row(0).transpose(), q.logvar.value().row(0).transpose()};
}

double sequence_log_prob(const CausalModel& model, const Tokens& x, int a, const Eigen::VectorXd& z) {
  Tape tape(false);
  const Tokens xs[] = {x};
  const int as[] = {a};
  return model.sequence_log_prob(tape, xs, as, tape.constant(z.transpose())).scalar();
}

Tokens sample_sequence(const CausalModel& model, int a, const Eigen::VectorXd& z, DecodeMode mode, int max_len,
                       uint64_t seed) {
  Matrix cond(1, model.config().cond_dim());
  cond << attribute_vector(a, model.config().a_dim), z.transpose();
  const uint64_t seeds[] = {seed};
  GumbelStream noise(seeds, model.config().vocab_size);
  return model.decoder().sample(cond, mode, max_len, &noise).front();
}

std::vector<Matrix> soft_sample_sequence(const CausalModel& model, int a, const Eigen::VectorXd& z, double tau,
                                         int max_len, uint64_t seed) {
  if (max_len < 1 || max_len > kMaxSequenceLength) {
    throw std::invalid_argument("soft_sample_sequence: max_len must be in [1, 20]");
  }
  Tape tape(false);
  const int as[] = {a};
  const uint64_t seeds[] = {seed};
  GumbelStream noise(seeds, model.config().vocab_size);
  auto rows = model.decoder().soft_sample(tape, model.condition(tape, as, tape.constant(z.transpose())), tau,
                                          noise, max_len);
  std::vector<Matrix> out;
  for (const Var& r : rows) out.push_back(r.value());
  return out;
}

std::pair<double, double> predict_heads(const CausalModel& model, const Eigen::VectorXd& z) {
  Tape tape(false);
  Var zv = tape.constant(z.transpose());
  const double pa = ad::sigmoid(model.heads().a_logit(tape, zv)).scalar();
  const double pc = ad::sigmoid(model.heads().c_logit(tape, zv)).scalar();
  return {pa, pc};
}

double classifier_score(const SequenceClassifier& f, const Tokens& x, int a) { return f.score(x, a); }

}  // namespace causalgen
