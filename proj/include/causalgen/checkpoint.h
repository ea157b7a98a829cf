#pragma once

// Versioned binary container of named double arrays plus a JSON metadata
// block. Layout (little endian):
//   "CGCKPT\0\0" u32 version  u64 meta_len  meta_json
//   u32 n_arrays  { u32 name_len name  u64 rows  u64 cols  rows*cols f64 }

#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "causalgen/latent_gan.h"
#include "causalgen/training.h"
#include "json.hpp"

namespace causalgen {

inline constexpr uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class HashMismatch : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

struct Checkpoint {
  std::string kind;  // causal, cond-lm, cond-lm-full, classifier
  std::string config_hash;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Matrix> arrays;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Refuses (HashMismatch) unless hashes agree or force is set. An empty
// expected hash skips the check.
void check_config_hash(const std::string& artifact, const std::string& found, const std::string& expected,
                       bool force);

void store_parameters(Checkpoint& ckpt, const nn::ParameterRefs& params, const std::string& prefix = "");
// Copies arrays into the parameters; missing names or shape mismatches throw.
void restore_parameters(const Checkpoint& ckpt, const nn::ParameterRefs& params, const std::string& prefix = "");

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct CausalArtifact {
  CausalModel model;
  std::optional<LatentGAN> gan;
  AblationFlags ablation;
  std::string config_hash;
};

Checkpoint pack_causal(const CausalArtifact& artifact);
CausalArtifact unpack_causal(const Checkpoint& ckpt);

struct LMArtifact {
  ConditionalLM lm;
  std::string config_hash;
};

Checkpoint pack_conditional_lm(const LMArtifact& artifact);
LMArtifact unpack_conditional_lm(const Checkpoint& ckpt);

Checkpoint pack_classifier(const SequenceClassifier& clf, const ModelConfig& config, const std::string& name,
                           const std::string& config_hash);
SequenceClassifier unpack_classifier(const Checkpoint& ckpt);

}  // namespace causalgen
