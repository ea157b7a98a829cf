#include "causalgen/inference.h"

#include <algorithm>
#include <stdexcept>

namespace causalgen {

namespace {

constexpr uint64_t kLatentStream = 0x6c6174ULL;
constexpr uint64_t kDecodeStream = 0x646563ULL;
constexpr uint64_t kConfounderStream = 0x636e66ULL;
constexpr size_t kBatch = 256;

void check_attribute(int a) {
  if (a != 0 && a != 1) throw std::invalid_argument("attribute must be 0 or 1");
}

// Decodes cond rows in batches; row i's noise depends only on (seed, i).
std::vector<Tokens> decode_rows(const Decoder& decoder, const Matrix& cond, uint64_t seed, DecodeMode mode,
                                int max_len) {
  std::vector<Tokens> out;
  out.reserve(static_cast<size_t>(cond.rows()));
  for (Eigen::Index start = 0; start < cond.rows(); start += static_cast<Eigen::Index>(kBatch)) {
    const Eigen::Index len = std::min<Eigen::Index>(static_cast<Eigen::Index>(kBatch), cond.rows() - start);
    std::vector<uint64_t> seeds;
    for (Eigen::Index i = 0; i < len; ++i) {
      seeds.push_back(derive_seed(seed, kDecodeStream, static_cast<uint64_t>(start + i)));
    }
    GumbelStream noise(seeds, decoder.vocab());
    auto part = decoder.sample(cond.middleRows(start, len), mode, max_len,
                               mode == DecodeMode::kCategorical ? &noise : nullptr);
    for (auto& t : part) out.push_back(std::move(t));
  }
  return out;
}

Matrix causal_condition(const CausalModel& model, const Matrix& z, std::span<const int> a) {
  Tape tape(false);
  return model.condition(tape, a, tape.constant(z)).value();
}

}  // namespace

std::vector<Tokens> decode_from_latents(const CausalModel& model, const Matrix& z, int a, uint64_t seed,
                                        DecodeMode mode, int max_len) {
  check_attribute(a);
  if (z.rows() == 0) return {};
  const std::vector<int> attrs(static_cast<size_t>(z.rows()), a);
  return decode_rows(model.decoder(), causal_condition(model, z, attrs), seed, mode, max_len);
}

std::vector<Tokens> sample_interventional(const CausalModel& model, const LatentGAN& gan, int a, int n,
                                          uint64_t seed, DecodeMode mode, int max_len) {
  check_attribute(a);
  if (n < 0) throw std::invalid_argument("sample_interventional: n must be >= 0");
  if (n == 0) return {};
  if (gan.z_dim() != model.config().z_dim) throw std::invalid_argument("GAN and model latent sizes differ");
  const Matrix z = sample_z(gan, n, derive_seed(seed, kLatentStream));
  return decode_from_latents(model, z, a, seed, mode, max_len);
}

std::vector<Tokens> sample_conditional(const ConditionalLM& lm, int a, int n, uint64_t seed, DecodeMode mode,
                                       int max_len) {
  check_attribute(a);
  if (n < 0) throw std::invalid_argument("sample_conditional: n must be >= 0");
  if (n == 0) return {};
  const std::vector<int> attrs(static_cast<size_t>(n), a);
  std::vector<int> conf;
  if (lm.variant() == LMVariant::kFull) {
    const auto& p = lm.confounder_given_attribute();
    if (p.size() != 2) throw std::invalid_argument("full conditional LM lacks p(c | a)");
    for (int i = 0; i < n; ++i) {
      Rng rng(derive_seed(seed, kConfounderStream, static_cast<uint64_t>(i)));
      conf.push_back(rng.bernoulli(p[a]) ? 1 : 0);
    }
  }
  Tape tape(false);
  Matrix cond = lm.condition(tape, attrs, conf).value();
  return decode_rows(lm.decoder(), cond, seed, mode, max_len);
}

TransferResult counterfactual_transfer(const CausalModel& model, const Tokens& x, int a, std::optional<int> c,
                                       int a_prime, DecodeMode mode, uint64_t seed, int max_len) {
  check_attribute(a);
  check_attribute(a_prime);
  if (a_prime == a) throw std::invalid_argument("counterfactual_transfer: target attribute equals the original");
  if (x.empty()) throw std::invalid_argument("counterfactual_transfer: empty sequence");
  TransferResult r;
  r.x = x;
  r.a = a;
  r.c = c;
  r.a_prime = a_prime;
  r.mode = mode;
  r.z = posterior(model, x, a, c).mean;
  r.x_prime = sample_sequence(model, a_prime, r.z, mode, max_len, seed);
  return r;
}

std::vector<TransferResult> batch_transfer(const CausalModel& model, const Corpus& corpus, DecodeMode mode,
                                           uint64_t seed, int max_len) {
  std::vector<TransferResult> results(corpus.records.size());
  // Valid records are processed in batches; invalid ones become failures.
  std::vector<size_t> valid;
  for (size_t i = 0; i < corpus.records.size(); ++i) {
    const Record& rec = corpus.records[i];
    TransferResult& r = results[i];
    r.x = rec.tokens;
    r.a = rec.a;
    r.c = rec.c;
    r.a_prime = 1 - rec.a;
    r.mode = mode;
    if (rec.a != 0 && rec.a != 1) {
      r.error = "attribute must be 0 or 1";
    } else if (rec.tokens.empty()) {
      r.error = "empty sequence";
    } else if (std::any_of(rec.tokens.begin(), rec.tokens.end(),
                           [&](int t) { return t < 0 || t >= model.config().vocab_size; })) {
      r.error = "token id out of range";
    } else {
      valid.push_back(i);
    }
  }

  for (size_t start = 0; start < valid.size(); start += kBatch) {
    const size_t end = std::min(valid.size(), start + kBatch);
    std::vector<Tokens> x;
    std::vector<int> a, a_prime, c;
    for (size_t k = start; k < end; ++k) {
      const Record& rec = corpus.records[valid[k]];
      x.push_back(rec.tokens);
      a.push_back(rec.a);
      a_prime.push_back(1 - rec.a);
      c.push_back(proxy_index(rec.c));
    }
    Tape tape(false);
    const Matrix z = model.posterior(tape, x, a, c).mean.value();
    const Matrix cond = model.condition(tape, a_prime, tape.constant(z)).value();
    std::vector<uint64_t> seeds;
    for (size_t k = start; k < end; ++k) seeds.push_back(derive_seed(seed, kDecodeStream, valid[k]));
    GumbelStream noise(seeds, model.config().vocab_size);
    auto decoded = model.decoder().sample(cond, mode, max_len, mode == DecodeMode::kCategorical ? &noise : nullptr);
    for (size_t k = start; k < end; ++k) {
      TransferResult& r = results[valid[k]];
      r.z = z.row(static_cast<Eigen::Index>(k - start)).transpose();
      r.x_prime = std::move(decoded[k - start]);
    }
  }
  return results;
}

AbductionReport abduction_idempotence(const CausalModel& model, std::span<const TransferResult> results,
                                      uint64_t seed) {
  AbductionReport rep;
  std::vector<size_t> ok;
  for (size_t i = 0; i < results.size(); ++i) {
    if (results[i].ok() && !results[i].x_prime.empty()) ok.push_back(i);
  }
  if (ok.size() < 2) return rep;
  Rng rng(derive_seed(seed, 9));
  for (size_t i : ok) {
    const TransferResult& r = results[i];
    const Eigen::VectorXd z2 = posterior(model, r.x_prime, r.a_prime, r.c).mean;
    size_t other = i;
    while (other == i) other = ok[rng.uniform_int(ok.size())];
    const double own = z_match_distance(r.z, z2);
    const double random = z_match_distance(r.z, results[other].z);
    ++rep.evaluated;
    rep.closer += own < random;
  }
  return rep;
}

}  // namespace causalgen
