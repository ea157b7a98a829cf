#include "causalgen/ngram_lm.h"

#include <cmath>
#include <stdexcept>

namespace causalgen {

NgramLM::NgramLM(std::vector<int> symbols, int bos, int eos, NgramConfig config)
    : outcomes_(std::move(symbols)), bos_(bos), eos_(eos), config_(config) {
  if (config_.order < 1 || config_.order > 4) throw std::invalid_argument("n-gram order must be in [1, 4]");
  if (!(config_.alpha > 0)) throw std::invalid_argument("n-gram alpha must be > 0");
  if (config_.score_eos) outcomes_.push_back(eos_);
  if (outcomes_.empty()) throw std::invalid_argument("n-gram model needs at least one outcome");
  for (size_t i = 0; i < outcomes_.size(); ++i) {
    if (outcomes_[i] < 0 || outcomes_[i] >= (1 << 15)) throw std::invalid_argument("n-gram symbol id out of range");
    if (!index_.emplace(outcomes_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate n-gram symbol");
    }
  }
}

NgramLM NgramLM::for_vocabulary(const Vocabulary& vocab, NgramConfig config) {
  std::vector<int> symbols;
  for (int id = 0; id < vocab.size(); ++id) {
    if (id != Vocabulary::kBos && id != Vocabulary::kEos) symbols.push_back(id);
  }
  return NgramLM(std::move(symbols), Vocabulary::kBos, Vocabulary::kEos, config);
}

// Histories are packed 16 bits per token, padded with bos on the left.
uint64_t NgramLM::context_key(std::span<const int> history) const {
  const int n = config_.order - 1;
  uint64_t key = static_cast<uint64_t>(n) << 60;
  for (int k = 0; k < n; ++k) {
    const long pos = static_cast<long>(history.size()) - n + k;
    const int tok = pos >= 0 ? history[static_cast<size_t>(pos)] : bos_;
    key |= static_cast<uint64_t>(tok & 0xffff) << (16 * k);
  }
  return key;
}

int NgramLM::symbol_index(int token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw std::out_of_range("token " + std::to_string(token) + " is not an n-gram outcome");
  return it->second;
}

void NgramLM::fit(std::span<const Tokens> sequences) {
  for (const auto& seq : sequences) {
    Tokens history;
    auto add = [&](int tok) {
      symbol_index(tok);
      const uint64_t ctx = context_key(history);
      context_counts_[ctx] += 1;
      ngram_counts_[ctx * 0x9e3779b97f4a7c15ULL ^ static_cast<uint64_t>(tok)] += 1;
    };
    for (int tok : seq) {
      add(tok);
      history.push_back(tok);
    }
    if (config_.score_eos) add(eos_);
  }
}

double NgramLM::prob(std::span<const int> history, int next) const {
  symbol_index(next);
  const uint64_t ctx = context_key(history);
  auto c = context_counts_.find(ctx);
  auto g = ngram_counts_.find(ctx * 0x9e3779b97f4a7c15ULL ^ static_cast<uint64_t>(next));
  const double hc = c == context_counts_.end() ? 0.0 : c->second;
  const double gc = g == ngram_counts_.end() ? 0.0 : g->second;
  return (gc + config_.alpha) / (hc + config_.alpha * static_cast<double>(outcomes_.size()));
}

double NgramLM::neg_log_likelihood(std::span<const int> tokens) const {
  double nll = 0;
  for (size_t t = 0; t < tokens.size(); ++t) nll -= std::log(prob(tokens.subspan(0, t), tokens[t]));
  if (config_.score_eos) nll -= std::log(prob(tokens, eos_));
  return nll;
}

size_t NgramLM::scored_positions(std::span<const int> tokens) const {
  return tokens.size() + (config_.score_eos ? 1 : 0);
}

double NgramLM::perplexity(std::span<const Tokens> sequences) const {
  double nll = 0;
  size_t n = 0;
  for (const auto& s : sequences) {
    nll += neg_log_likelihood(s);
    n += scored_positions(s);
  }
  if (n == 0) throw std::invalid_argument("perplexity of an empty sample set");
  return std::exp(nll / static_cast<double>(n));
}

Tokens NgramLM::sample(Rng& rng, int max_len) const {
  if (!config_.score_eos) throw std::logic_error("sampling needs an end-of-sequence outcome");
  Tokens out;
  while (static_cast<int>(out.size()) < max_len) {
    const double u = rng.uniform();
    double acc = 0;
    int pick = outcomes_.back();
    for (int tok : outcomes_) {
      acc += prob(out, tok);
      if (u < acc) {
        pick = tok;
        break;
      }
    }
    if (pick == eos_) break;
    out.push_back(pick);
  }
  return out;
}

NgramLM train_reference_lm(const CorpusSpec& spec, int n_records, uint64_t seed, NgramConfig config) {
  CorpusSpec ref = spec;
  ref.correlation = 0.5;
  ref.n_train = n_records;
  ref.seed = seed;
  const Corpus corpus = generate_corpus(ref, Split::kTrain);
  NgramLM lm = NgramLM::for_vocabulary(Vocabulary(ref), config);
  std::vector<Tokens> seqs;
  seqs.reserve(corpus.records.size());
  for (const auto& r : corpus.records) seqs.push_back(r.tokens);
  lm.fit(seqs);
  return lm;
}

}  // namespace causalgen
