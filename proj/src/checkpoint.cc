#include "causalgen/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>

namespace causalgen {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'G', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr const char* kGanPrefix = "gan/";

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError(path + ": truncated checkpoint");
  return v;
}

std::string get_string(std::istream& in, size_t len, const std::string& path) {
  if (len > (1u << 30)) throw CheckpointError(path + ": corrupt length field");
  std::string s(len, '\0');
  if (len && !in.read(s.data(), static_cast<std::streamsize>(len))) throw CheckpointError(path + ": truncated checkpoint");
  return s;
}

void require_kind(const Checkpoint& ckpt, std::initializer_list<const char*> kinds) {
  for (const char* k : kinds) {
    if (ckpt.kind == k) return;
  }
  throw CheckpointError("checkpoint holds a '" + ckpt.kind + "' artifact, which this command cannot use");
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  nlohmann::json meta = ckpt.meta;
  meta["kind"] = ckpt.kind;
  meta["config_hash"] = ckpt.config_hash;
  const std::string meta_text = meta.dump();
  out.write(kMagic, sizeof(kMagic));
  put<uint32_t>(out, kCheckpointVersion);
  put<uint64_t>(out, meta_text.size());
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  put<uint32_t>(out, static_cast<uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, m] : ckpt.arrays) {
    put<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint64_t>(out, static_cast<uint64_t>(m.rows()));
    put<uint64_t>(out, static_cast<uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw CheckpointError(path + ": not a checkpoint file");
  }
  const auto version = get<uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_len = get<uint64_t>(in, path);
  try {
    ckpt.meta = nlohmann::json::parse(get_string(in, meta_len, path));
    ckpt.kind = ckpt.meta.at("kind").get<std::string>();
    ckpt.config_hash = ckpt.meta.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path + ": bad metadata: " + e.what());
  }
  ckpt.meta.erase("kind");
  ckpt.meta.erase("config_hash");
  const auto n = get<uint32_t>(in, path);
  for (uint32_t i = 0; i < n; ++i) {
    const std::string name = get_string(in, get<uint32_t>(in, path), path);
    const auto rows = get<uint64_t>(in, path);
    const auto cols = get<uint64_t>(in, path);
    if (rows > (1u << 24) || cols > (1u << 24)) throw CheckpointError(path + ": corrupt array shape for " + name);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (m.size() && !in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)))) {
      throw CheckpointError(path + ": truncated checkpoint");
    }
    ckpt.arrays.emplace(name, std::move(m));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path + ": trailing bytes after arrays");
  return ckpt;
}

void check_config_hash(const std::string& artifact, const std::string& found, const std::string& expected,
                       bool force) {
  if (expected.empty() || found == expected || force) return;
  throw HashMismatch(artifact + " was produced by config " + (found.empty() ? "<none>" : found) +
                     " but the current config is " + expected + "; rerun the producing step or pass --force");
}

void store_parameters(Checkpoint& ckpt, const nn::ParameterRefs& params, const std::string& prefix) {
  for (const auto* p : params) {
    if (!ckpt.arrays.emplace(prefix + p->name(), p->value).second) {
      throw CheckpointError("duplicate parameter name " + prefix + p->name());
    }
  }
}

void restore_parameters(const Checkpoint& ckpt, const nn::ParameterRefs& params, const std::string& prefix) {
  for (const auto* p : params) {
    auto it = ckpt.arrays.find(prefix + p->name());
    if (it == ckpt.arrays.end()) throw CheckpointError("checkpoint lacks parameter " + prefix + p->name());
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw CheckpointError("shape mismatch for parameter " + prefix + p->name());
    }
    const_cast<ad::Parameter*>(p)->value = it->second;
  }
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"a_dim", c.a_dim},       {"z_dim", c.z_dim},
          {"hidden_dim", c.hidden_dim}, {"emb_dim", c.emb_dim},   {"c_dim", c.c_dim},
          {"n_layers", c.n_layers},     {"seed", std::to_string(c.seed)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<int>();
    c.a_dim = j.at("a_dim").get<int>();
    c.z_dim = j.at("z_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.emb_dim = j.at("emb_dim").get<int>();
    c.c_dim = j.at("c_dim").get<int>();
    c.n_layers = j.at("n_layers").get<int>();
    c.seed = std::stoull(j.at("seed").get<std::string>());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad model config in checkpoint: ") + e.what());
  }
}

Checkpoint pack_causal(const CausalArtifact& a) {
  Checkpoint ckpt;
  ckpt.kind = "causal";
  ckpt.config_hash = a.config_hash;
  ckpt.meta["model_config"] = model_config_to_json(a.model.config());
  ckpt.meta["ablation"] = {{"no_cf_a", a.ablation.no_cf_a}, {"no_cf_z", a.ablation.no_cf_z}, {"no_cf_c", a.ablation.no_cf_c}};
  ckpt.meta["has_gan"] = a.gan.has_value();
  store_parameters(ckpt, a.model.parameters());
  if (a.gan) store_parameters(ckpt, a.gan->parameters(), kGanPrefix);
  return ckpt;
}

CausalArtifact unpack_causal(const Checkpoint& ckpt) {
  require_kind(ckpt, {"causal"});
  CausalArtifact a{CausalModel(model_config_from_json(ckpt.meta.at("model_config"))), std::nullopt, {}, ckpt.config_hash};
  restore_parameters(ckpt, a.model.parameters());
  const auto& abl = ckpt.meta.at("ablation");
  a.ablation = {abl.at("no_cf_a").get<bool>(), abl.at("no_cf_z").get<bool>(), abl.at("no_cf_c").get<bool>()};
  if (ckpt.meta.value("has_gan", false)) {
    LatentGAN gan(a.model.config().z_dim, 0);
    restore_parameters(ckpt, gan.parameters(), kGanPrefix);
    a.gan = std::move(gan);
  }
  return a;
}

Checkpoint pack_conditional_lm(const LMArtifact& a) {
  Checkpoint ckpt;
  ckpt.kind = a.lm.variant() == LMVariant::kPlain ? "cond-lm" : "cond-lm-full";
  ckpt.config_hash = a.config_hash;
  ckpt.meta["model_config"] = model_config_to_json(a.lm.config());
  ckpt.meta["c_given_a"] = a.lm.confounder_given_attribute();
  store_parameters(ckpt, a.lm.parameters());
  return ckpt;
}

LMArtifact unpack_conditional_lm(const Checkpoint& ckpt) {
  require_kind(ckpt, {"cond-lm", "cond-lm-full"});
  const LMVariant v = ckpt.kind == "cond-lm" ? LMVariant::kPlain : LMVariant::kFull;
  LMArtifact a{ConditionalLM(v, model_config_from_json(ckpt.meta.at("model_config"))), ckpt.config_hash};
  restore_parameters(ckpt, a.lm.parameters());
  a.lm.set_confounder_given_attribute(ckpt.meta.at("c_given_a").get<std::vector<double>>());
  return a;
}

Checkpoint pack_classifier(const SequenceClassifier& clf, const ModelConfig& config, const std::string& name,
                           const std::string& config_hash) {
  Checkpoint ckpt;
  ckpt.kind = "classifier";
  ckpt.config_hash = config_hash;
  ckpt.meta["model_config"] = model_config_to_json(config);
  ckpt.meta["name"] = name;
  store_parameters(ckpt, clf.parameters());
  return ckpt;
}

SequenceClassifier unpack_classifier(const Checkpoint& ckpt) {
  require_kind(ckpt, {"classifier"});
  const ModelConfig c = model_config_from_json(ckpt.meta.at("model_config"));
  SequenceClassifier clf(ckpt.meta.at("name").get<std::string>(), c.vocab_size, c.emb_dim, c.hidden_dim, 0);
  restore_parameters(ckpt, clf.parameters());
  return clf;
}

}  // namespace causalgen
