#include "causalgen/objectives.h"

#include <cmath>
#include <stdexcept>

namespace causalgen {

namespace {

constexpr uint64_t kEpsilonStream = 0x657073ULL;
constexpr uint64_t kGumbelStream = 0x67756dULL;

bool in_grid(double v, std::initializer_list<double> grid) {
  for (double g : grid) {
    if (v == g) return true;
  }
  return false;
}

}  // namespace

void LossWeights::validate() const {
  if (lambda_a < 0 || lambda_c < 0 || gamma_a < 0 || gamma_z < 0 || gamma_c < 0) {
    throw std::invalid_argument("loss weights must be nonnegative");
  }
  if (!in_grid(lambda_a, {0.0, 0.01, 0.1, 1.0}) || !in_grid(lambda_c, {0.0, 0.01, 0.1, 1.0})) {
    throw std::invalid_argument("lambda_a and lambda_c must be chosen from {0.01, 0.1, 1}");
  }
  if (!in_grid(gamma_a, {0.0, 0.5, 1.0}) || !in_grid(gamma_z, {0.0, 0.5, 1.0}) || !in_grid(gamma_c, {0.0, 0.5, 1.0})) {
    throw std::invalid_argument("gamma weights must be 0.5 or 1.0 (or 0 when ablated)");
  }
}

void KLSchedule::validate() const {
  if (n_cycles < 1) throw std::invalid_argument("kl schedule: n_cycles must be >= 1");
  if (!(ramp_fraction > 0 && ramp_fraction <= 1)) throw std::invalid_argument("kl schedule: ramp_fraction in (0, 1]");
  if (total_steps < 1) throw std::invalid_argument("kl schedule: total_steps must be >= 1");
}

double kl_cyclic_weight(long step, const KLSchedule& schedule) {
  schedule.validate();
  if (step < 0 || step >= schedule.total_steps) {
    throw std::out_of_range("kl_cyclic_weight: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(schedule.total_steps) + ")");
  }
  const double cycle_len = static_cast<double>(schedule.total_steps) / schedule.n_cycles;
  const double pos = std::fmod(static_cast<double>(step), cycle_len);
  return std::min(1.0, pos / (cycle_len * schedule.ramp_fraction));
}

double gumbel_temperature(long step, long total_steps, double tau_start, double tau_end) {
  if (total_steps <= 1) return tau_end;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
  return tau_start + (tau_end - tau_start) * frac;
}

Var kl_gaussian(const Var& mean, const Var& logvar) {
  Var inner = ad::square(mean) + ad::exp(logvar) - logvar;
  return ad::scale(ad::add_scalar(sum_cols(inner), -static_cast<double>(mean.cols())), 0.5);
}

double kl_gaussian(const Eigen::VectorXd& mean, const Eigen::VectorXd& logvar) {
  if (mean.size() != logvar.size()) throw std::invalid_argument("kl_gaussian: shape mismatch");
  return 0.5 * (mean.array().square() + logvar.array().exp() - logvar.array() - 1.0).sum();
}

Eigen::VectorXd normalize_unit(const Eigen::VectorXd& target) {
  const double lo = target.minCoeff();
  const double hi = target.maxCoeff();
  if (!(hi > lo)) return Eigen::VectorXd::Constant(target.size(), 0.5);
  return (target.array() - lo) / (hi - lo);
}

Var z_match_distance(const Matrix& target, const Var& z_prime) {
  if (target.rows() != z_prime.rows() || target.cols() != z_prime.cols()) {
    throw std::invalid_argument("z_match_distance: shape mismatch");
  }
  Matrix unit(target.rows(), target.cols());
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    unit.row(i) = normalize_unit(target.row(i).transpose()).transpose();
  }
  Tape& tape = *z_prime.tape();
  Var zbar = tape.constant(unit);
  Var ll = zbar * ad::log_sigmoid(z_prime) + ad::one_minus(zbar) * ad::log_sigmoid(-z_prime);
  return -ad::mean_cols(ll);
}

double z_match_distance(const Eigen::VectorXd& target, const Eigen::VectorXd& z_prime) {
  Tape tape(false);
  return z_match_distance(Matrix(target.transpose()), tape.constant(z_prime.transpose())).scalar();
}

std::vector<int> Batch::proxy_indices() const {
  std::vector<int> out;
  for (const auto& ci : c) out.push_back(proxy_index(ci));
  return out;
}

Matrix Batch::proxy_mask() const {
  Matrix m(static_cast<Eigen::Index>(c.size()), 1);
  for (size_t i = 0; i < c.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = c[i] ? 1.0 : 0.0;
  return m;
}

std::vector<int> Batch::proxy_labels() const {
  std::vector<int> out;
  for (const auto& ci : c) out.push_back(ci.value_or(0));
  return out;
}

std::vector<int> Batch::flipped() const {
  std::vector<int> out;
  for (int v : a) out.push_back(1 - v);
  return out;
}

Batch make_batch(std::span<const Record> records) {
  Batch b;
  for (const auto& r : records) {
    b.x.push_back(r.tokens);
    b.a.push_back(r.a);
    b.c.push_back(r.c);
  }
  return b;
}

VaeTerms vae_objective(Tape& tape, const CausalModel& model, const Batch& batch, const GaussianParams& q,
                       const Var& z, const LossWeights& weights, double kl_weight) {
  VaeTerms t;
  t.log_px = model.sequence_log_prob(tape, batch.x, batch.a, z);
  t.log_pa = SequenceClassifier::log_score(model.heads().a_logit(tape, z), batch.a);
  t.log_pc = ad::mul_col(SequenceClassifier::log_score(model.heads().c_logit(tape, z), batch.proxy_labels()),
                         tape.constant(batch.proxy_mask()));
  t.kl = kl_gaussian(q.mean, q.logvar);
  t.objective = t.log_px + ad::scale(t.log_pa, weights.lambda_a) + ad::scale(t.log_pc, weights.lambda_c) -
                ad::scale(t.kl, kl_weight);
  return t;
}

CounterfactualSample cf_attribute_loss(Tape& tape, const CausalModel& model, const SequenceClassifier& f,
                                       std::span<const int> a_prime, const Var& z, double tau, GumbelStream& noise,
                                       int steps) {
  CounterfactualSample s;
  s.x_soft = model.decoder().soft_sample(tape, model.condition(tape, a_prime, z), tau, noise, steps);
  s.loss = -SequenceClassifier::log_score(f.logit_soft(tape, s.x_soft), a_prime);
  return s;
}

CounterfactualLatent cf_z_loss(Tape& tape, const CausalModel& model, std::span<const Var> x_soft,
                               std::span<const int> a_prime, std::span<const int> c_index,
                               const Matrix& z_target_mean) {
  CounterfactualLatent out;
  out.z_prime = model.posterior_net().infer_soft(tape, x_soft, a_prime, c_index).mean;
  out.loss = z_match_distance(z_target_mean, out.z_prime);
  return out;
}

Var cf_c_loss(Tape& tape, const CausalModel& model, const Var& z_prime, std::span<const int> c_labels,
              const Matrix& proxy_mask) {
  Var ll = SequenceClassifier::log_score(model.heads().c_logit(tape, z_prime), c_labels);
  return -ad::mul_col(ll, tape.constant(proxy_mask));
}

std::string LossBreakdown::first_nonfinite() const {
  const std::pair<const char*, double> terms[] = {{"recon_x", recon_x}, {"recon_a", recon_a}, {"recon_c", recon_c},
                                                  {"kl", kl},           {"cf_a", cf_a},       {"cf_z", cf_z},
                                                  {"cf_c", cf_c},       {"total", total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) return name;
  }
  return "";
}

TotalLoss total_loss(Tape& tape, const CausalModel& model, const SequenceClassifier& f, const Batch& batch,
                     const LossSettings& s, std::span<const uint64_t> row_seeds) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (row_seeds.size() != batch.size()) throw std::invalid_argument("total_loss: one seed per row required");
  const int z_dim = model.config().z_dim;

  const std::vector<int> c_index = batch.proxy_indices();
  GaussianParams q = model.posterior(tape, batch.x, batch.a, c_index);

  Matrix eps(B, z_dim);
  std::vector<uint64_t> gumbel_seeds;
  for (Eigen::Index i = 0; i < B; ++i) {
    Rng rng(derive_seed(row_seeds[i], kEpsilonStream));
    for (int j = 0; j < z_dim; ++j) eps(i, j) = rng.normal();
    gumbel_seeds.push_back(derive_seed(row_seeds[i], kGumbelStream));
  }
  Var z = reparameterize(q.mean, q.logvar, tape.constant(std::move(eps)));

  VaeTerms vae = vae_objective(tape, model, batch, q, z, s.weights, s.kl_weight);

  // Each entry is a per-row loss term (already weighted); total sums them.
  std::vector<std::pair<double*, Var>> terms;
  LossBreakdown bd;
  terms.emplace_back(&bd.recon_x, -vae.log_px);
  terms.emplace_back(&bd.recon_a, ad::scale(vae.log_pa, -s.weights.lambda_a));
  terms.emplace_back(&bd.recon_c, ad::scale(vae.log_pc, -s.weights.lambda_c));
  terms.emplace_back(&bd.kl, ad::scale(vae.kl, s.kl_weight));

  const double gamma_a = s.ablation.no_cf_a ? 0.0 : s.weights.gamma_a;
  const double gamma_z = s.ablation.no_cf_z ? 0.0 : s.weights.gamma_z;
  const double gamma_c = s.ablation.no_cf_c ? 0.0 : s.weights.gamma_c;

  if (gamma_a > 0 || gamma_z > 0 || gamma_c > 0) {
    const std::vector<int> a_prime = batch.flipped();
    GumbelStream noise(gumbel_seeds, model.config().vocab_size);
    CounterfactualSample cf = cf_attribute_loss(tape, model, f, a_prime, z, s.tau, noise, s.soft_steps);
    if (gamma_a > 0) terms.emplace_back(&bd.cf_a, ad::scale(cf.loss, gamma_a));
    if (gamma_z > 0 || gamma_c > 0) {
      // Copy: the tape grows inside cf_z_loss and may move node storage.
      const Matrix target = q.mean.value();
      CounterfactualLatent cz = cf_z_loss(tape, model, cf.x_soft, a_prime, c_index, target);
      if (gamma_z > 0) terms.emplace_back(&bd.cf_z, ad::scale(cz.loss, gamma_z));
      if (gamma_c > 0) {
        terms.emplace_back(&bd.cf_c, ad::scale(cf_c_loss(tape, model, cz.z_prime, batch.proxy_labels(),
                                                          batch.proxy_mask()),
                                               gamma_c));
      }
    }
  }

  Var per_row;
  for (auto& [slot, v] : terms) {
    *slot = v.value().mean();
    per_row = per_row.valid() ? per_row + v : v;
  }
  TotalLoss out;
  out.value = ad::mean_all(per_row);
  bd.total = out.value.scalar();
  bd.kl_raw = vae.kl.value().mean();
  out.breakdown = bd;
  return out;
}

}  // namespace causalgen
