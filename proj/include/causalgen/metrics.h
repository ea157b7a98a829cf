#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "causalgen/corpus.h"
#include "causalgen/ngram_lm.h"

namespace causalgen {

class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct Sample {
  Tokens tokens;
  int target = 0;
};

struct ControlCounts {
  size_t match = 0;
  size_t mismatch = 0;
  size_t tie = 0;
  size_t total() const { return match + mismatch + tie; }
};

ControlCounts control_counts(std::span<const Sample> samples, const Vocabulary& vocab);
// Fraction whose oracle attribute equals the target; ties count as wrong.
double control_accuracy(std::span<const Sample> samples, const Vocabulary& vocab);

struct BiasResult {
  double value = 0;
  size_t counted = 0;
  size_t ties = 0;
};
// Fraction whose oracle confounder equals the target, ties excluded.
// Throws UndefinedMetric when every sample ties.
BiasResult bias_score(std::span<const Sample> samples, const Vocabulary& vocab);

double fluency_perplexity(std::span<const Sample> samples, const NgramLM& lm);

// |unique n-grams| / |n-grams| over the whole set.
template <typename T>
double distinct_n(std::span<const std::vector<T>> sequences, int n) {
  if (n < 1) throw std::invalid_argument("distinct_n: n must be >= 1");
  std::set<std::vector<T>> unique;
  size_t total = 0;
  for (const auto& s : sequences) {
    for (size_t i = 0; i + static_cast<size_t>(n) <= s.size(); ++i) {
      unique.emplace(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(i) + n);
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("distinct_n: no sequence has " + std::to_string(n) + " tokens");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

// Sentence BLEU. Unigram precision is unsmoothed; higher orders with no
// match use (0 + 1) / (total + 1). Orders beyond the candidate length are
// skipped. Brevity penalty uses the closest reference length (shorter wins
// ties).
template <typename T>
double bleu(std::span<const T> candidate, std::span<const std::vector<T>> references, int max_order = 4) {
  if (candidate.empty()) throw std::invalid_argument("bleu: empty candidate");
  if (references.empty()) throw std::invalid_argument("bleu: no references");
  if (max_order < 1) throw std::invalid_argument("bleu: max_order must be >= 1");
  const int orders = std::min<int>(max_order, static_cast<int>(candidate.size()));
  double log_sum = 0;
  for (int n = 1; n <= orders; ++n) {
    std::map<std::vector<T>, int> cand;
    for (size_t i = 0; i + n <= candidate.size(); ++i) {
      ++cand[std::vector<T>(candidate.begin() + static_cast<long>(i), candidate.begin() + static_cast<long>(i) + n)];
    }
    std::map<std::vector<T>, int> max_ref;
    for (const auto& ref : references) {
      std::map<std::vector<T>, int> counts;
      for (size_t i = 0; i + n <= ref.size(); ++i) {
        ++counts[std::vector<T>(ref.begin() + static_cast<long>(i), ref.begin() + static_cast<long>(i) + n)];
      }
      for (const auto& [g, c] : counts) max_ref[g] = std::max(max_ref[g], c);
    }
    long matches = 0, total = 0;
    for (const auto& [g, c] : cand) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matches += std::min(c, it->second);
    }
    double p;
    if (matches > 0) {
      p = static_cast<double>(matches) / static_cast<double>(total);
    } else if (n == 1) {
      return 0.0;
    } else {
      p = 1.0 / static_cast<double>(total + 1);
    }
    log_sum += std::log(p);
  }
  const long c = static_cast<long>(candidate.size());
  long r = static_cast<long>(references[0].size());
  for (const auto& ref : references) {
    const long len = static_cast<long>(ref.size());
    if (std::abs(len - c) < std::abs(r - c) || (std::abs(len - c) == std::abs(r - c) && len < r)) r = len;
  }
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_sum / orders);
}

template <typename T>
double bleu(const std::vector<T>& candidate, const std::vector<std::vector<T>>& references, int max_order = 4) {
  return bleu<T>(std::span<const T>(candidate), std::span<const std::vector<T>>(references), max_order);
}

std::vector<std::string> split_words(const std::string& text);

// ---- generation dumps ---------------------------------------------------

enum class DumpKind { kConditionalGen, kTransfer };
std::string dump_kind_name(DumpKind k);
DumpKind parse_dump_kind(const std::string& s);

struct DumpEntry {
  std::string mode;  // interventional, conditional, transfer
  int a = 0;         // target attribute (a' for transfer)
  std::optional<int> source_a;
  Tokens tokens;
  std::optional<Tokens> original;
  std::string error;
};

struct GenerationDump {
  DumpKind kind = DumpKind::kConditionalGen;
  std::string source;       // model label
  std::string config_hash;  // experiment that produced it
  std::vector<DumpEntry> entries;
};

void write_dump(const std::string& path, const GenerationDump& dump);
GenerationDump read_dump(const std::string& path);

// ---- reports --------------------------------------------------------------

struct MetricReport {
  std::string label;
  size_t n_samples = 0;
  size_t n_failures = 0;
  double control_accuracy = 0;
  ControlCounts control;
  // Absent when every sample ties on the confounder oracle.
  std::optional<double> bias;
  size_t bias_ties = 0;
  double fluency_perplexity = 0;
  std::map<int, double> distinct;
  std::optional<double> self_bleu;
  std::optional<double> ref_bleu;
  // Transfer only: fraction of flipped records that keep the confounder.
  std::optional<double> confounder_preservation;

  std::string to_text() const;
  static std::string tsv_header();
  std::string to_tsv() const;
};

// golden: optional reference texts, one per dump entry, for ref-BLEU.
MetricReport evaluate_generation(const GenerationDump& dump, const Vocabulary& vocab, const NgramLM& reference_lm,
                                 DumpKind expected, const std::vector<Tokens>* golden = nullptr);

// Mean BLEU of each candidate against its paired reference; empty
// candidates score 0.
double mean_pair_bleu(std::span<const Tokens> candidates, std::span<const Tokens> references);

}  // namespace causalgen
