#pragma once

// Additively smoothed n-gram model over token ids, used as the fluency judge.

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "causalgen/corpus.h"
#include "causalgen/rng.h"

namespace causalgen {

struct NgramConfig {
  int order = 3;
  double alpha = 0.1;
  // Score (and sample) the end-of-sequence symbol.
  bool score_eos = true;
};

class NgramLM {
 public:
  // symbols: the predictable token ids (excluding bos and eos).
  NgramLM(std::vector<int> symbols, int bos, int eos, NgramConfig config = {});

  // Reference model over a corpus vocabulary.
  static NgramLM for_vocabulary(const Vocabulary& vocab, NgramConfig config = {});

  void fit(std::span<const Tokens> sequences);

  // (count(h, w) + alpha) / (count(h) + alpha * |outcomes|)
  double prob(std::span<const int> history, int next) const;
  // Sum of -log prob over tokens (and eos when scored).
  double neg_log_likelihood(std::span<const int> tokens) const;
  // Number of scored positions in a sequence.
  size_t scored_positions(std::span<const int> tokens) const;
  // exp(total NLL / total scored positions). Throws on an empty set.
  double perplexity(std::span<const Tokens> sequences) const;

  // Ancestral sample, at most max_len tokens. Requires score_eos.
  Tokens sample(Rng& rng, int max_len) const;

  size_t num_outcomes() const { return outcomes_.size(); }
  const NgramConfig& config() const { return config_; }

 private:
  uint64_t context_key(std::span<const int> history) const;
  int symbol_index(int token) const;

  std::vector<int> outcomes_;  // symbols plus eos when scored
  std::unordered_map<int, int> index_;
  int bos_;
  int eos_;
  NgramConfig config_;
  std::unordered_map<uint64_t, double> context_counts_;
  std::unordered_map<uint64_t, double> ngram_counts_;
};

// Trigram reference model trained on an unbiased (correlation 0.5) corpus of
// n_records generated from spec with the given seed.
NgramLM train_reference_lm(const CorpusSpec& spec, int n_records, uint64_t seed, NgramConfig config = {});

}  // namespace causalgen
