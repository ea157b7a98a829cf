#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "causalgen/latent_gan.h"
#include "causalgen/training.h"

namespace causalgen {

// Longest decode used by every generation routine (tokens, excluding <eos>).
inline constexpr int kDefaultMaxDecode = kMaxSequenceLength;

// x ~ p(x | do(a)): z from the GAN, then decode with a fixed by the
// intervention. The p(a | z) head is never evaluated.
std::vector<Tokens> sample_interventional(const CausalModel& model, const LatentGAN& gan, int a, int n,
                                          uint64_t seed, DecodeMode mode = DecodeMode::kCategorical,
                                          int max_len = kDefaultMaxDecode);

// Same decode from explicit latent rows (n x z_dim).
std::vector<Tokens> decode_from_latents(const CausalModel& model, const Matrix& z, int a, uint64_t seed,
                                        DecodeMode mode, int max_len = kDefaultMaxDecode);

// x ~ p(x | a) under an associational baseline. The full variant draws its
// confounder label from p(c_hat | a) of the imputed training labels.
std::vector<Tokens> sample_conditional(const ConditionalLM& lm, int a, int n, uint64_t seed,
                                       DecodeMode mode = DecodeMode::kCategorical,
                                       int max_len = kDefaultMaxDecode);

struct TransferResult {
  Tokens x;
  int a = 0;
  std::optional<int> c;
  int a_prime = 1;
  Tokens x_prime;
  Eigen::VectorXd z;
  DecodeMode mode = DecodeMode::kGreedy;
  std::string error;  // nonempty when the record failed

  bool ok() const { return error.empty(); }
};

// Abduction (posterior mean), action (a := a'), prediction (decode).
// Categorical mode draws its noise from seed.
TransferResult counterfactual_transfer(const CausalModel& model, const Tokens& x, int a, std::optional<int> c,
                                       int a_prime, DecodeMode mode = DecodeMode::kGreedy, uint64_t seed = 0,
                                       int max_len = kDefaultMaxDecode);

// a' = 1 - a for every record; failures are reported per record.
std::vector<TransferResult> batch_transfer(const CausalModel& model, const Corpus& corpus,
                                           DecodeMode mode = DecodeMode::kGreedy, uint64_t seed = 0,
                                           int max_len = kDefaultMaxDecode);

struct AbductionReport {
  size_t evaluated = 0;
  size_t closer = 0;  // z'' nearer to z than a random record's z
  double fraction() const { return evaluated ? static_cast<double>(closer) / static_cast<double>(evaluated) : 0.0; }
};

// Re-abducts z'' from (x', a') and compares z_match_distance(z, z'') with
// the distance from z to a randomly chosen other record's z.
AbductionReport abduction_idempotence(const CausalModel& model, std::span<const TransferResult> results,
                                      uint64_t seed);

}  // namespace causalgen
