#include "causalgen/latent_gan.h"

#include <cmath>
#include <stdexcept>

namespace causalgen {

namespace {

constexpr uint64_t kNoiseStream = 0x67616eULL;
constexpr uint64_t kBatchStream = 0x626174ULL;

Matrix noise_rows(int n, int dim, uint64_t seed) {
  Matrix out(n, dim);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, kNoiseStream, static_cast<uint64_t>(i)));
    for (int j = 0; j < dim; ++j) out(i, j) = rng.normal();
  }
  return out;
}

Matrix gather(const Matrix& z, std::span<const size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), z.cols());
  for (size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = z.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

}  // namespace

Matrix aggregate_posterior_means(const CausalModel& model, const Corpus& corpus) {
  const auto n = static_cast<Eigen::Index>(corpus.records.size());
  Matrix out(n, model.config().z_dim);
  constexpr size_t kBatch = 256;
  for (size_t start = 0; start < corpus.records.size(); start += kBatch) {
    const size_t end = std::min(corpus.records.size(), start + kBatch);
    std::vector<Tokens> x;
    std::vector<int> a, c;
    for (size_t i = start; i < end; ++i) {
      x.push_back(corpus.records[i].tokens);
      a.push_back(corpus.records[i].a);
      c.push_back(proxy_index(corpus.records[i].c));
    }
    Tape tape(false);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        model.posterior(tape, x, a, c).mean.value();
  }
  return out;
}

void GanConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("gan steps must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("gan batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("gan learning_rate must be > 0");
  if (!(holdout_fraction >= 0 && holdout_fraction < 1)) throw std::invalid_argument("gan holdout_fraction in [0, 1)");
}

LatentGAN::LatentGAN(int z_dim, uint64_t seed) : z_dim_(z_dim) {
  if (z_dim < 1) throw std::invalid_argument("LatentGAN: z_dim must be >= 1");
  Rng rng(derive_seed(seed, 1));
  g_hidden_ = nn::Linear("gan.g_hidden", z_dim, z_dim, rng);
  g_out_ = nn::Linear("gan.g_out", z_dim, z_dim, rng);
  d_ = nn::Linear("gan.d", 2 * z_dim, 1, rng, 0.1);
  shift_ = ad::Parameter("gan.shift", Matrix::Zero(1, z_dim));
  scale_ = ad::Parameter("gan.scale", Matrix::Ones(1, z_dim));
  shift_.trainable = false;
  scale_.trainable = false;
}

Var LatentGAN::generate_standardized(Tape& tape, const Var& noise) const {
  return g_out_(tape, ad::tanh(g_hidden_(tape, noise)));
}

Matrix LatentGAN::generate(const Matrix& noise) const {
  if (noise.cols() != z_dim_) throw std::invalid_argument("LatentGAN::generate: noise width mismatch");
  if (noise.rows() == 0) return Matrix(0, z_dim_);
  Tape tape(false);
  Matrix zs = generate_standardized(tape, tape.constant(noise)).value();
  return (zs.array().rowwise() * scale_.value.row(0).array()).rowwise() + shift_.value.row(0).array();
}

Var LatentGAN::discriminator_logit(Tape& tape, const Var& z) const {
  const Var parts[] = {z, ad::square(z)};
  return d_(tape, ad::concat_cols(parts));
}

void LatentGAN::set_normalization(const Eigen::RowVectorXd& shift, const Eigen::RowVectorXd& scale) {
  shift_.value = shift;
  scale_.value = scale;
}

Matrix LatentGAN::standardize(const Matrix& z) const {
  return (z.array().rowwise() - shift_.value.row(0).array()).rowwise() / scale_.value.row(0).array();
}

nn::ParameterRefs LatentGAN::generator_parameters() const {
  nn::ParameterRefs out;
  g_hidden_.collect(out);
  g_out_.collect(out);
  return out;
}

nn::ParameterRefs LatentGAN::discriminator_parameters() const {
  nn::ParameterRefs out;
  d_.collect(out);
  return out;
}

nn::ParameterRefs LatentGAN::parameters() const {
  nn::ParameterRefs out = generator_parameters();
  d_.collect(out);
  out.push_back(&shift_);
  out.push_back(&scale_);
  return out;
}

ColumnMoments column_moments(const Matrix& z) {
  ColumnMoments m;
  const double n = static_cast<double>(z.rows());
  m.mean = z.colwise().mean();
  m.stddev = ((z.rowwise() - m.mean).array().square().colwise().sum() / n).sqrt();
  return m;
}

GanTrainResult train_latent_gan(const Matrix& z, const GanConfig& config) {
  config.validate();
  if (z.rows() < 100) throw std::invalid_argument("train_latent_gan: need at least 100 rows");
  const int dim = static_cast<int>(z.cols());
  GanTrainResult result{LatentGAN(dim, config.seed), {}};
  LatentGAN& gan = result.gan;

  // Split off a held-out slice for the final discriminator check.
  std::vector<size_t> order(static_cast<size_t>(z.rows()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(derive_seed(config.seed, 2));
  split_rng.shuffle(order.begin(), order.end());
  const size_t n_hold = static_cast<size_t>(std::floor(config.holdout_fraction * static_cast<double>(order.size())));
  const std::vector<size_t> hold(order.begin(), order.begin() + static_cast<long>(n_hold));
  const std::vector<size_t> fit(order.begin() + static_cast<long>(n_hold), order.end());

  const ColumnMoments moments = column_moments(gather(z, fit));
  Eigen::RowVectorXd scale = moments.stddev;
  for (Eigen::Index j = 0; j < scale.size(); ++j) {
    if (!(scale(j) > 1e-8)) scale(j) = 1.0;
  }
  gan.set_normalization(moments.mean, scale);
  const Matrix data = gan.standardize(gather(z, fit));

  nn::AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  opt_cfg.beta1 = config.beta1;
  opt_cfg.weight_decay = 0.0;
  nn::AdamW opt_g(gan.generator_parameters(), opt_cfg);
  nn::AdamW opt_d(gan.discriminator_parameters(), opt_cfg);

  const auto ones = [](Eigen::Index n) { return std::vector<int>(static_cast<size_t>(n), 1); };
  const auto zeros = [](Eigen::Index n) { return std::vector<int>(static_cast<size_t>(n), 0); };

  for (int step = 0; step < config.steps; ++step) {
    Rng batch_rng(derive_seed(config.seed, kBatchStream, static_cast<uint64_t>(step)));
    Matrix real(config.batch_size, dim);
    for (int i = 0; i < config.batch_size; ++i) {
      real.row(i) = data.row(static_cast<Eigen::Index>(batch_rng.uniform_int(static_cast<uint64_t>(data.rows()))));
    }
    const Matrix noise = noise_rows(config.batch_size, dim, derive_seed(config.seed, 3, static_cast<uint64_t>(step)));
    const Eigen::Index B = config.batch_size;

    double d_loss, g_loss;
    {
      Tape tape;
      Var fake = ad::stop_gradient(gan.generate_standardized(tape, tape.constant(noise)));
      Var lr = SequenceClassifier::log_score(gan.discriminator_logit(tape, tape.constant(real)), ones(B));
      Var lf = SequenceClassifier::log_score(gan.discriminator_logit(tape, fake), zeros(B));
      Var loss = -(ad::mean_all(lr) + ad::mean_all(lf));
      d_loss = loss.scalar();
      tape.backward(loss);
      opt_d.step();
      nn::zero_grad(gan.generator_parameters());
    }
    {
      Tape tape;
      Var fake = gan.generate_standardized(tape, tape.constant(noise));
      Var loss = -ad::mean_all(SequenceClassifier::log_score(gan.discriminator_logit(tape, fake), ones(B)));
      g_loss = loss.scalar();
      tape.backward(loss);
      opt_g.step();
      nn::zero_grad(gan.discriminator_parameters());
    }
    if (!std::isfinite(d_loss) || !std::isfinite(g_loss)) {
      throw std::runtime_error("latent GAN diverged at step " + std::to_string(step));
    }
    result.history.d_loss.push_back(d_loss);
    result.history.g_loss.push_back(g_loss);
  }

  if (n_hold > 0) {
    const Matrix held = gan.standardize(gather(z, hold));
    const Matrix fake_noise = noise_rows(static_cast<int>(n_hold), dim, derive_seed(config.seed, 4));
    Tape tape(false);
    Matrix fake = gan.generate_standardized(tape, tape.constant(fake_noise)).value();
    Matrix lr = gan.discriminator_logit(tape, tape.constant(held)).value();
    Matrix lf = gan.discriminator_logit(tape, tape.constant(fake)).value();
    const double correct = static_cast<double>((lr.array() > 0).count() + (lf.array() <= 0).count());
    result.history.holdout_disc_accuracy = correct / static_cast<double>(2 * n_hold);
  }
  return result;
}

Matrix sample_z(const LatentGAN& gan, int n, uint64_t seed) {
  if (n < 0) throw std::invalid_argument("sample_z: n must be >= 0");
  return gan.generate(noise_rows(n, gan.noise_dim(), seed));
}

DiagonalGaussian DiagonalGaussian::fit(const Matrix& z) {
  if (z.rows() < 1) throw std::invalid_argument("DiagonalGaussian::fit: empty matrix");
  const ColumnMoments m = column_moments(z);
  return {m.mean, m.stddev};
}

Matrix DiagonalGaussian::sample(int n, uint64_t seed) const {
  Matrix eps = noise_rows(n, static_cast<int>(mean.size()), seed);
  return (eps.array().rowwise() * stddev.array()).rowwise() + mean.array();
}

}  // namespace causalgen
