#pragma once

// Training objectives of the causal model, all in minimized form: every term
// is a loss where lower is better.
//
//   total = -log p(x|a,z) - lambda_a log p(a|z) - lambda_c [c observed] log p(c|z)
//           + kl_weight * KL(q || N(0, I))
//           + gamma_a * cf_a + gamma_z * cf_z + gamma_c * cf_c
//
// The counterfactual terms decode a relaxed x' from (a' = 1 - a, z):
//   cf_a = -log f(x', a')                    (f frozen)
//   cf_z = BCE(normalize(mu), mu')           (mu' = posterior mean on x')
//   cf_c = -[c observed] log p(c | mu')

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "causalgen/seq_model.h"

namespace causalgen {

struct LossWeights {
  double lambda_a = 1.0;
  double lambda_c = 1.0;
  double gamma_a = 1.0;
  double gamma_z = 0.5;
  double gamma_c = 0.5;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct AblationFlags {
  bool no_cf_a = false;
  bool no_cf_z = false;
  bool no_cf_c = false;

  bool any() const { return no_cf_a || no_cf_z || no_cf_c; }
  bool operator==(const AblationFlags&) const = default;
};

struct KLSchedule {
  int n_cycles = 4;
  double ramp_fraction = 0.5;
  long total_steps = 1;

  void validate() const;
};

// Cyclic annealing: each of n_cycles equal cycles ramps 0 -> 1 linearly over
// its first ramp_fraction, then holds at 1. Throws std::out_of_range for
// steps outside [0, total_steps).
double kl_cyclic_weight(long step, const KLSchedule& schedule);

// Linear temperature schedule for the relaxed counterfactual decode.
double gumbel_temperature(long step, long total_steps, double tau_start, double tau_end);

// KL(N(mean, exp(logvar)) || N(0, I)) per row, B x 1.
Var kl_gaussian(const Var& mean, const Var& logvar);
double kl_gaussian(const Eigen::VectorXd& mean, const Eigen::VectorXd& logvar);

// Min-max normalizes target to [0, 1] (0.5 everywhere if constant).
Eigen::VectorXd normalize_unit(const Eigen::VectorXd& target);

// Mean binary cross-entropy between normalize_unit(target row) and
// sigmoid(z_prime row). target is a constant. Returns B x 1.
Var z_match_distance(const Matrix& target, const Var& z_prime);
double z_match_distance(const Eigen::VectorXd& target, const Eigen::VectorXd& z_prime);

// One training batch.
struct Batch {
  std::vector<Tokens> x;
  std::vector<int> a;
  std::vector<std::optional<int>> c;

  size_t size() const { return x.size(); }
  std::vector<int> proxy_indices() const;
  // B x 1 with 1 where c is observed.
  Matrix proxy_mask() const;
  std::vector<int> proxy_labels() const;  // 0 where absent
  std::vector<int> flipped() const;
};

Batch make_batch(std::span<const Record> records);

struct VaeTerms {
  Var log_px;     // log p(x | a, z)
  Var log_pa;     // log p(a | z)
  Var log_pc;     // [c observed] log p(c | z)
  Var kl;         // KL(q || p0), unweighted
  Var objective;  // log_px + la log_pa + lc log_pc - kl_weight kl
};

// Per-row terms of the variational objective (maximized form).
VaeTerms vae_objective(Tape& tape, const CausalModel& model, const Batch& batch, const GaussianParams& q,
                       const Var& z, const LossWeights& weights, double kl_weight);

struct CounterfactualSample {
  std::vector<Var> x_soft;
  Var loss;  // -log f(x', a') per row
};

// Relaxed decode of x' from (a', z) followed by the frozen classifier.
CounterfactualSample cf_attribute_loss(Tape& tape, const CausalModel& model, const SequenceClassifier& f,
                                       std::span<const int> a_prime, const Var& z, double tau, GumbelStream& noise,
                                       int steps);

struct CounterfactualLatent {
  Var z_prime;  // posterior mean on x'
  Var loss;     // z_match_distance(target, z_prime) per row
};

CounterfactualLatent cf_z_loss(Tape& tape, const CausalModel& model, std::span<const Var> x_soft,
                               std::span<const int> a_prime, std::span<const int> c_index,
                               const Matrix& z_target_mean);

// -[c observed] log p(c | z'), per row.
Var cf_c_loss(Tape& tape, const CausalModel& model, const Var& z_prime, std::span<const int> c_labels,
              const Matrix& proxy_mask);

struct LossBreakdown {
  double recon_x = 0;
  double recon_a = 0;
  double recon_c = 0;
  double kl = 0;
  double cf_a = 0;
  double cf_z = 0;
  double cf_c = 0;
  double total = 0;
  double kl_raw = 0;  // unweighted KL, for diagnostics only

  double sum_of_terms() const { return recon_x + recon_a + recon_c + kl + cf_a + cf_z + cf_c; }
  // Name of the first non-finite term, or empty.
  std::string first_nonfinite() const;
};

struct LossSettings {
  LossWeights weights;
  AblationFlags ablation;
  double kl_weight = 1.0;
  double tau = 1.0;
  int soft_steps = 12;
};

struct TotalLoss {
  Var value;  // 1 x 1, mean over the batch
  LossBreakdown breakdown;
};

// Minimized total objective. Each row i draws its reparameterization and
// Gumbel noise from row_seeds[i].
TotalLoss total_loss(Tape& tape, const CausalModel& model, const SequenceClassifier& f, const Batch& batch,
                     const LossSettings& settings, std::span<const uint64_t> row_seeds);

}  // namespace causalgen
