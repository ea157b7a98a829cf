#pragma once

// Small GAN over the aggregated posterior, used as the sampler for p(z).
//
// Generator: affine noise -> hidden (width z_dim), tanh, affine -> z.
// Discriminator: logistic regression over the features [z, z^2].
// Both work in standardized coordinates; the data shift and scale are
// frozen at training time and stored with the weights.

#include <cstdint>
#include <vector>

#include "causalgen/seq_model.h"

namespace causalgen {

// Row i is the posterior mean on record i.
Matrix aggregate_posterior_means(const CausalModel& model, const Corpus& corpus);

struct GanConfig {
  int steps = 6000;
  int batch_size = 256;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double holdout_fraction = 0.1;
  uint64_t seed = 13;

  void validate() const;
};

struct GanHistory {
  std::vector<double> d_loss;
  std::vector<double> g_loss;
  // Held-out real rows vs an equal number of fresh generated rows.
  double holdout_disc_accuracy = 0;
};

class LatentGAN {
 public:
  LatentGAN() = default;
  LatentGAN(int z_dim, uint64_t seed);

  int z_dim() const { return z_dim_; }
  int noise_dim() const { return z_dim_; }

  // noise (n x noise_dim) -> z (n x z_dim), in data coordinates.
  Matrix generate(const Matrix& noise) const;
  Var generate_standardized(Tape& tape, const Var& noise) const;
  Var discriminator_logit(Tape& tape, const Var& z_standardized) const;

  void set_normalization(const Eigen::RowVectorXd& shift, const Eigen::RowVectorXd& scale);
  Matrix standardize(const Matrix& z) const;

  nn::ParameterRefs generator_parameters() const;
  nn::ParameterRefs discriminator_parameters() const;
  // Everything persisted, including the frozen normalization.
  nn::ParameterRefs parameters() const;

 private:
  int z_dim_ = 0;
  nn::Linear g_hidden_;
  nn::Linear g_out_;
  nn::Linear d_;
  ad::Parameter shift_;
  ad::Parameter scale_;
};

struct GanTrainResult {
  LatentGAN gan;
  GanHistory history;
};

// Requires at least 100 rows. Throws TrainingDiverged-style runtime_error on NaN.
GanTrainResult train_latent_gan(const Matrix& z, const GanConfig& config);

// n samples; row i uses noise seeded from (seed, i).
Matrix sample_z(const LatentGAN& gan, int n, uint64_t seed);

// Diagnostic fallback: independent Gaussians fitted per dimension.
struct DiagonalGaussian {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stddev;

  static DiagonalGaussian fit(const Matrix& z);
  Matrix sample(int n, uint64_t seed) const;
};

struct ColumnMoments {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stddev;
};
ColumnMoments column_moments(const Matrix& z);

}  // namespace causalgen
