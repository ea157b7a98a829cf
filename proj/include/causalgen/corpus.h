#pragma once

// Synthetic biased corpora with exact attribute/confounder oracles.
//
// Every record carries an attribute a and a latent confounder class u. The
// text contains 1-3 marker tokens of class ATTR_a, exactly one marker of
// CONF_u, and filler tokens drawn from a u-dependent distribution. a agrees
// with u with probability rho (the correlation strength); only a fraction of
// training records expose u as the proxy label c.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace causalgen {

using Tokens = std::vector<int>;

enum class Split { kTrain, kVal, kTest };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

struct CorpusSpec {
  int n_attr_tokens_per_class = 8;
  int n_conf_tokens_per_class = 8;
  int n_filler_tokens = 48;
  double correlation = 0.9;
  double proxy_fraction = 0.02;
  int n_train = 20000;
  int n_val = 2000;
  int n_test = 2000;
  int min_len = 6;
  int max_len = 12;
  uint64_t seed = 1;

  // Throws std::invalid_argument naming the violated constraint.
  void validate() const;
  int size_of(Split split) const;
  // Correlation strength that applies to a split; the test split is balanced.
  double correlation_for(Split split) const;
  std::string canonical() const;
  uint64_t hash() const;

  bool operator==(const CorpusSpec&) const = default;
};

inline constexpr int kMaxSequenceLength = 20;

enum class TokenClass { kSpecial, kAttr0, kAttr1, kConf0, kConf1, kFiller };

// Token id layout: <bos>, <eos>, ATTR0, ATTR1, CONF0, CONF1, FILLER.
class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;

  Vocabulary() = default;
  explicit Vocabulary(const CorpusSpec& spec);

  int size() const { return static_cast<int>(strings_.size()); }
  TokenClass classify(int id) const;
  int attr_token(int cls, int k) const;
  int conf_token(int cls, int k) const;
  int filler_token(int k) const;
  int n_attr() const { return n_attr_; }
  int n_conf() const { return n_conf_; }
  int n_filler() const { return n_filler_; }
  const std::string& str(int id) const { return strings_.at(id); }
  const std::vector<std::string>& strings() const { return strings_; }

  std::string render(std::span<const int> tokens) const;

  // One token string per line; line number is the id.
  void write(const std::filesystem::path& path) const;
  static std::vector<std::string> read_strings(const std::filesystem::path& path);

 private:
  int n_attr_ = 0;
  int n_conf_ = 0;
  int n_filler_ = 0;
  std::vector<std::string> strings_;
};

struct Record {
  Tokens tokens;
  int a = 0;
  std::optional<int> c;
  // Ground-truth confounder class kept by the generator; -1 when unknown.
  // Never consumed by model training, only by diagnostics and evaluation.
  int u = -1;

  bool operator==(const Record&) const = default;
};

struct Corpus {
  CorpusSpec spec;
  Split split = Split::kTrain;
  std::vector<Record> records;
  // Hash of the experiment configuration that produced the file (optional).
  std::string config_hash;

  bool operator==(const Corpus&) const = default;
};

class OracleTie : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorpusFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VocabularyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Corpus generate_corpus(const CorpusSpec& spec, Split split);

// Majority vote over marker tokens; OracleTie when counts are equal.
int oracle_attribute(std::span<const int> tokens, const Vocabulary& vocab);
int oracle_confounder(std::span<const int> tokens, const Vocabulary& vocab);

// Fraction of records whose attribute equals the confounder class (u, or c
// when u is unknown).
double empirical_correlation(const Corpus& corpus);

void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);
Corpus corpus_roundtrip(const Corpus& corpus, const std::filesystem::path& path);

// Records with c stripped; used to check that a consumer ignores c.
Corpus strip_proxy(Corpus corpus);

}  // namespace causalgen
