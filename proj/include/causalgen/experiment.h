#pragma once

// Artifact layout and the commands behind the CLI. Every file written here
// records the hash of the configuration that produced it.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "causalgen/checkpoint.h"
#include "causalgen/config.h"
#include "causalgen/metrics.h"
#include "causalgen/ngram_lm.h"

namespace causalgen {

class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentLayout {
  std::filesystem::path root;

  std::filesystem::path corpora() const { return root / "corpora"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path dumps() const { return root / "dumps"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path logs() const { return root / "logs"; }
  std::filesystem::path config_snapshot() const { return root / "config.txt"; }
  std::filesystem::path seed_registry() const { return root / "seeds.txt"; }
  std::filesystem::path vocabulary() const { return corpora() / "vocab.txt"; }
  std::filesystem::path corpus(Split split) const;
  std::filesystem::path checkpoint(const std::string& name) const { return checkpoints() / (name + ".ckpt"); }
  std::filesystem::path dump(const std::string& name) const { return dumps() / (name + ".jsonl"); }
  std::filesystem::path training_log(const std::string& name) const { return logs() / (name + ".jsonl"); }

  void create() const;
};

// Name used for a causal checkpoint trained with the given ablation flags.
std::string causal_checkpoint_name(const AblationFlags& ablation);

struct TrainOptions {
  std::string model = "causal";  // causal, cond-lm, cond-lm-full
  AblationFlags ablation;
  bool skip_gan = false;
  std::string name;  // defaults from model and flags
};

struct TrainSummary {
  std::string name;
  std::filesystem::path checkpoint;
  std::optional<ClassifierReport> attr_classifier;
  std::vector<EpochSummary> epochs;
  std::vector<double> lm_epoch_loss;
  std::optional<double> gan_holdout_accuracy;
};

enum class SampleMode { kInterventional, kConditional };
std::string sample_mode_name(SampleMode m);
SampleMode parse_sample_mode(const std::string& s);

struct SampleOptions {
  std::string checkpoint;  // name under checkpoints/ or a path
  SampleMode mode = SampleMode::kInterventional;
  std::vector<int> attributes{0, 1};
  int n = 0;  // per attribute; 0 means eval.samples_per_class
  std::optional<uint64_t> seed;
  DecodeMode decode = DecodeMode::kCategorical;
  std::filesystem::path output;  // defaults to dumps/<checkpoint>-<mode>.jsonl
};

struct TransferOptions {
  std::string checkpoint = "causal";
  Split split = Split::kTest;
  std::optional<DecodeMode> decode;  // defaults to eval.transfer_mode
  std::optional<uint64_t> seed;
  std::filesystem::path output;  // defaults to dumps/<checkpoint>-transfer-<split>.jsonl
};

struct EvalOptions {
  std::filesystem::path dump;
  std::string label;  // defaults to the dump's file stem
  std::optional<DumpKind> expected;  // defaults to the dump's own kind
};

struct ExperimentRow {
  std::string label;
  MetricReport report;
};

struct ExperimentSummary {
  std::vector<ExperimentRow> rows;
  // Mean BLEU between each test record and an interventional sample drawn for
  // its flipped attribute: the no-preservation baseline for transfer.
  double interventional_self_bleu = 0;
  std::string table;
};

class Experiment {
 public:
  // config must already carry any command-line overrides. progress may be null.
  Experiment(ExperimentConfig config, ExperimentLayout layout, bool force, std::ostream* progress = nullptr);

  const ExperimentConfig& config() const { return config_; }
  const std::string& config_hash() const { return hash_; }
  const ExperimentLayout& layout() const { return layout_; }

  // Writes the config snapshot and seed registry, refusing to replace a
  // snapshot with a different hash unless forced.
  void write_snapshot() const;

  std::vector<std::filesystem::path> gen_data() const;
  Corpus load_corpus(Split split) const;

  TrainSummary train(const TrainOptions& options) const;
  std::filesystem::path sample(const SampleOptions& options) const;
  std::filesystem::path transfer(const TransferOptions& options) const;
  MetricReport eval(const EvalOptions& options) const;

  // gen-data (when missing), all four models, sampling, transfer and eval;
  // writes reports/table.tsv and reports/table.txt.
  ExperimentSummary run_experiment() const;

  Checkpoint load_artifact(const std::string& name_or_path) const;
  const NgramLM& reference_lm() const;

 private:
  std::filesystem::path resolve_checkpoint(const std::string& name_or_path) const;
  SequenceClassifier attribute_classifier(const Corpus& train, const Corpus& test, ClassifierReport* report) const;
  void note(const std::string& message) const;

  ExperimentConfig config_;
  std::string hash_;
  ExperimentLayout layout_;
  bool force_;
  std::ostream* progress_;
  mutable std::unique_ptr<NgramLM> reference_lm_;
};

// Config for a command: --config if given, else the snapshot under root,
// else defaults.
ExperimentConfig load_experiment_config(const std::optional<std::filesystem::path>& config_path,
                                        const ExperimentLayout& layout);

std::string format_table(const std::vector<ExperimentRow>& rows);

}  // namespace causalgen
