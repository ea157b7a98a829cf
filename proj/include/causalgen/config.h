#pragma once

// Flat key=value experiment configuration. Lines are `key = value`; `#`
// starts a comment. Unknown keys and malformed values are rejected.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "causalgen/inference.h"

namespace causalgen {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct EvalConfig {
  int samples_per_class = 1000;
  int reference_records = 100000;
  double ngram_alpha = 0.1;
  DecodeMode transfer_mode = DecodeMode::kGreedy;
  int max_decode = kDefaultMaxDecode;

  bool operator==(const EvalConfig&) const = default;
};

struct ExperimentConfig {
  // Master seed; every component seed is derived from it.
  uint64_t seed = 1;
  CorpusSpec corpus;
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  int lm_epochs = 10;
  ClassifierConfig attr_classifier{1, 64, 1e-3, 100, 0};
  ClassifierConfig confounder_classifier{20, 64, 1e-3, 0, 0};
  GanConfig gan;
  EvalConfig eval;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Copies the master seed into every component and sizes the model to the
  // corpus vocabulary.
  ExperimentConfig resolved() const;
  void validate() const;

  // Sorted key=value lines; the hash covers exactly this text.
  std::string canonical() const;
  std::string hash() const;
};

// Named component seeds derived from the master seed.
struct SeedRegistry {
  uint64_t corpus = 0;
  uint64_t model = 0;
  uint64_t train = 0;
  uint64_t attr_classifier = 0;
  uint64_t confounder_classifier = 0;
  uint64_t lm = 0;
  uint64_t gan = 0;
  uint64_t sampling = 0;
  uint64_t reference_lm = 0;

  static SeedRegistry from_master(uint64_t seed);
  std::string to_text() const;
};

ExperimentConfig parse_config(std::istream& in, const std::string& origin = "config");
ExperimentConfig load_config(const std::string& path);
void write_config(std::ostream& out, const ExperimentConfig& config);

std::string decode_mode_name(DecodeMode m);
DecodeMode parse_decode_mode(const std::string& s);

}  // namespace causalgen
