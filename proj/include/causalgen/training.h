#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "causalgen/objectives.h"

namespace causalgen {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 3e-4;
  double weight_decay = 0.01;
  uint64_t seed = 11;
  AblationFlags ablation;
  double tau_start = 1.0;
  double tau_end = 0.3;
  int kl_cycles = 4;
  double kl_ramp_fraction = 0.5;
  // Upper end of the cyclic KL weight.
  double kl_ceiling = 0.05;
  int log_every = 50;
  // Records used for validation metrics; 0 means the whole split.
  int val_limit = 0;

  void validate() const;
};

struct ClassifierConfig {
  int epochs = 1;
  int batch_size = 64;
  double learning_rate = 1e-3;
  // Stops after this many updates when > 0.
  int max_steps = 0;
  uint64_t seed = 5;

  void validate() const;
};

// Per-epoch shuffle; identical for identical (seed, epoch).
std::vector<size_t> epoch_permutation(size_t n, uint64_t seed, int epoch);

struct ClassifierReport {
  double train_accuracy = 0;
  double balanced_test_accuracy = 0;
  double final_loss = 0;
  long steps = 0;
};

double classifier_accuracy(const SequenceClassifier& clf, std::span<const Record> records, bool confounder);

// Cross-entropy training of f(x, a) on the biased training split.
SequenceClassifier pretrain_attribute_classifier(const Corpus& train, const ModelConfig& model,
                                                 const ClassifierConfig& config, const Corpus* balanced_test,
                                                 ClassifierReport* report = nullptr);

// 0.9 for records whose proxy disagrees with the attribute, 0.1 otherwise.
std::vector<double> confounder_weights(std::span<const Record> records);

// Predicts c from x on the proxy-labeled subset. reweight=false trains the
// plain variant. Warnings (e.g. a single agreement class) go to *warnings.
SequenceClassifier train_reweighted_confounder_classifier(const Corpus& train, const ModelConfig& model,
                                                          const ClassifierConfig& config, bool reweight,
                                                          std::vector<std::string>* warnings = nullptr);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochSummary {
  int epoch = 0;  // 0 is the untrained model
  LossBreakdown mean_train;
  double val_recon_log_prob = 0;  // mean log p(x | a, mu) per record
  double val_kl = 0;
};

struct CausalTrainResult {
  CausalModel model;
  std::vector<EpochSummary> epochs;
  long steps = 0;
};

// Minimizes total_loss over the training split. Writes line-delimited JSON
// records to *log when given. Throws TrainingDiverged on a non-finite term.
CausalTrainResult train_causal_model(const Corpus& train, const Corpus& val, const SequenceClassifier& f,
                                     const ModelConfig& model, const TrainConfig& config,
                                     const LossWeights& weights, std::ostream* log = nullptr);

EpochSummary evaluate_causal_model(const CausalModel& model, const Corpus& corpus, int limit);

enum class LMVariant { kPlain, kFull };
std::string variant_name(LMVariant v);
LMVariant parse_variant(const std::string& s);

// Associational baseline p(x | a) or p(x | a, c_hat).
class ConditionalLM {
 public:
  ConditionalLM() = default;
  ConditionalLM(LMVariant variant, const ModelConfig& config);

  LMVariant variant() const { return variant_; }
  const ModelConfig& config() const { return config_; }
  const Decoder& decoder() const { return decoder_; }

  Var condition(Tape& tape, std::span<const int> a, std::span<const int> c) const;
  Var log_prob(Tape& tape, std::span<const Tokens> x, std::span<const int> a, std::span<const int> c) const;

  // p(c_hat = 1 | a) over the imputed training labels (full variant only).
  const std::vector<double>& confounder_given_attribute() const { return c_given_a_; }
  void set_confounder_given_attribute(std::vector<double> p) { c_given_a_ = std::move(p); }

  nn::ParameterRefs parameters() const;

 private:
  LMVariant variant_ = LMVariant::kPlain;
  ModelConfig config_;
  Decoder decoder_;
  std::vector<double> c_given_a_;
};

struct LMTrainResult {
  ConditionalLM lm;
  std::vector<double> epoch_loss;  // index 0 is the untrained model
  double imputed_coverage = 0;     // fraction of records with a c label
};

// Full variant requires confounder_classifier to impute missing proxies.
LMTrainResult train_conditional_lm(const Corpus& train, LMVariant variant,
                                   const SequenceClassifier* confounder_classifier, const ModelConfig& model,
                                   const TrainConfig& config, std::ostream* log = nullptr);

// Labels used by the full variant: c where present, else the classifier's
// prediction.
std::vector<int> impute_confounders(const Corpus& corpus, const SequenceClassifier& classifier);

}  // namespace causalgen
