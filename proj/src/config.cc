#include "causalgen/config.h"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "causalgen/hashing.h"

namespace causalgen {

namespace {

struct Field {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": invalid value '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

// Shortest text that round-trips exactly.
std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

#define INT_FIELD(expr)                                                                      \
  Field {                                                                                    \
    [](const ExperimentConfig& c) { return std::to_string(c.expr); },                        \
        [](ExperimentConfig& c, const std::string& v) { c.expr = parse_number<int>(#expr, v); } \
  }
#define U64_FIELD(expr)                                                                           \
  Field {                                                                                         \
    [](const ExperimentConfig& c) { return std::to_string(c.expr); },                             \
        [](ExperimentConfig& c, const std::string& v) { c.expr = parse_number<uint64_t>(#expr, v); } \
  }
#define DOUBLE_FIELD(expr)                                                                      \
  Field {                                                                                       \
    [](const ExperimentConfig& c) { return fmt(c.expr); },                                      \
        [](ExperimentConfig& c, const std::string& v) { c.expr = parse_number<double>(#expr, v); } \
  }
#define BOOL_FIELD(expr)                                                                \
  Field {                                                                               \
    [](const ExperimentConfig& c) { return std::string(c.expr ? "true" : "false"); },   \
        [](ExperimentConfig& c, const std::string& v) { c.expr = parse_bool(#expr, v); } \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"seed", U64_FIELD(seed)},
      {"corpus.n_attr_tokens_per_class", INT_FIELD(corpus.n_attr_tokens_per_class)},
      {"corpus.n_conf_tokens_per_class", INT_FIELD(corpus.n_conf_tokens_per_class)},
      {"corpus.n_filler_tokens", INT_FIELD(corpus.n_filler_tokens)},
      {"corpus.correlation", DOUBLE_FIELD(corpus.correlation)},
      {"corpus.proxy_fraction", DOUBLE_FIELD(corpus.proxy_fraction)},
      {"corpus.n_train", INT_FIELD(corpus.n_train)},
      {"corpus.n_val", INT_FIELD(corpus.n_val)},
      {"corpus.n_test", INT_FIELD(corpus.n_test)},
      {"corpus.min_len", INT_FIELD(corpus.min_len)},
      {"corpus.max_len", INT_FIELD(corpus.max_len)},
      {"model.a_dim", INT_FIELD(model.a_dim)},
      {"model.z_dim", INT_FIELD(model.z_dim)},
      {"model.hidden_dim", INT_FIELD(model.hidden_dim)},
      {"model.emb_dim", INT_FIELD(model.emb_dim)},
      {"model.c_dim", INT_FIELD(model.c_dim)},
      {"model.n_layers", INT_FIELD(model.n_layers)},
      {"train.epochs", INT_FIELD(train.epochs)},
      {"train.batch_size", INT_FIELD(train.batch_size)},
      {"train.learning_rate", DOUBLE_FIELD(train.learning_rate)},
      {"train.weight_decay", DOUBLE_FIELD(train.weight_decay)},
      {"train.tau_start", DOUBLE_FIELD(train.tau_start)},
      {"train.tau_end", DOUBLE_FIELD(train.tau_end)},
      {"train.kl_cycles", INT_FIELD(train.kl_cycles)},
      {"train.kl_ramp_fraction", DOUBLE_FIELD(train.kl_ramp_fraction)},
      {"train.kl_ceiling", DOUBLE_FIELD(train.kl_ceiling)},
      {"train.log_every", INT_FIELD(train.log_every)},
      {"train.val_limit", INT_FIELD(train.val_limit)},
      {"train.no_cf_a", BOOL_FIELD(train.ablation.no_cf_a)},
      {"train.no_cf_z", BOOL_FIELD(train.ablation.no_cf_z)},
      {"train.no_cf_c", BOOL_FIELD(train.ablation.no_cf_c)},
      {"loss.lambda_a", DOUBLE_FIELD(loss.lambda_a)},
      {"loss.lambda_c", DOUBLE_FIELD(loss.lambda_c)},
      {"loss.gamma_a", DOUBLE_FIELD(loss.gamma_a)},
      {"loss.gamma_z", DOUBLE_FIELD(loss.gamma_z)},
      {"loss.gamma_c", DOUBLE_FIELD(loss.gamma_c)},
      {"lm.epochs", INT_FIELD(lm_epochs)},
      {"classifier.epochs", INT_FIELD(attr_classifier.epochs)},
      {"classifier.batch_size", INT_FIELD(attr_classifier.batch_size)},
      {"classifier.learning_rate", DOUBLE_FIELD(attr_classifier.learning_rate)},
      {"classifier.max_steps", INT_FIELD(attr_classifier.max_steps)},
      {"confounder.epochs", INT_FIELD(confounder_classifier.epochs)},
      {"confounder.batch_size", INT_FIELD(confounder_classifier.batch_size)},
      {"confounder.learning_rate", DOUBLE_FIELD(confounder_classifier.learning_rate)},
      {"confounder.max_steps", INT_FIELD(confounder_classifier.max_steps)},
      {"gan.steps", INT_FIELD(gan.steps)},
      {"gan.batch_size", INT_FIELD(gan.batch_size)},
      {"gan.learning_rate", DOUBLE_FIELD(gan.learning_rate)},
      {"gan.beta1", DOUBLE_FIELD(gan.beta1)},
      {"gan.holdout_fraction", DOUBLE_FIELD(gan.holdout_fraction)},
      {"eval.samples_per_class", INT_FIELD(eval.samples_per_class)},
      {"eval.reference_records", INT_FIELD(eval.reference_records)},
      {"eval.ngram_alpha", DOUBLE_FIELD(eval.ngram_alpha)},
      {"eval.max_decode", INT_FIELD(eval.max_decode)},
      {"eval.transfer_mode",
       Field{[](const ExperimentConfig& c) { return decode_mode_name(c.eval.transfer_mode); },
             [](ExperimentConfig& c, const std::string& v) { c.eval.transfer_mode = parse_decode_mode(v); }}},
  };
  return table;
}

#undef INT_FIELD
#undef U64_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

}  // namespace

std::string decode_mode_name(DecodeMode m) { return m == DecodeMode::kGreedy ? "greedy" : "categorical"; }

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::kGreedy;
  if (s == "categorical") return DecodeMode::kCategorical;
  throw ConfigError("unknown decode mode '" + s + "' (expected greedy or categorical)");
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, value);
}

std::string ExperimentConfig::get(const std::string& key) const {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(*this);
}

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

SeedRegistry SeedRegistry::from_master(uint64_t seed) {
  SeedRegistry r;
  r.corpus = seed;
  r.model = derive_seed(seed, 0x6d6f64);
  r.train = derive_seed(seed, 0x74726e);
  r.attr_classifier = derive_seed(seed, 0x616367);
  r.confounder_classifier = derive_seed(seed, 0x636367);
  r.lm = derive_seed(seed, 0x6c6d);
  r.gan = derive_seed(seed, 0x67616e);
  r.sampling = derive_seed(seed, 0x736d70);
  r.reference_lm = derive_seed(seed, 0x726566);
  return r;
}

std::string SeedRegistry::to_text() const {
  std::ostringstream out;
  out << "corpus = " << corpus << '\n'
      << "model = " << model << '\n'
      << "train = " << train << '\n'
      << "attr_classifier = " << attr_classifier << '\n'
      << "confounder_classifier = " << confounder_classifier << '\n'
      << "lm = " << lm << '\n'
      << "gan = " << gan << '\n'
      << "sampling = " << sampling << '\n'
      << "reference_lm = " << reference_lm << '\n';
  return out.str();
}

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  const SeedRegistry s = SeedRegistry::from_master(seed);
  c.corpus.seed = s.corpus;
  c.model.seed = s.model;
  c.train.seed = s.train;
  c.attr_classifier.seed = s.attr_classifier;
  c.confounder_classifier.seed = s.confounder_classifier;
  c.gan.seed = s.gan;
  c.model.vocab_size = Vocabulary(c.corpus).size();
  return c;
}

void ExperimentConfig::validate() const {
  try {
    corpus.validate();
    ExperimentConfig r = resolved();
    r.model.validate();
    train.validate();
    loss.validate();
    attr_classifier.validate();
    confounder_classifier.validate();
    gan.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid configuration: ") + e.what());
  }
  if (lm_epochs < 0) throw ConfigError("lm.epochs must be >= 0");
  if (eval.samples_per_class < 1) throw ConfigError("eval.samples_per_class must be >= 1");
  if (eval.reference_records < 1) throw ConfigError("eval.reference_records must be >= 1");
  if (!(eval.ngram_alpha > 0)) throw ConfigError("eval.ngram_alpha must be > 0");
  if (eval.max_decode < 1 || eval.max_decode > kMaxSequenceLength) {
    throw ConfigError("eval.max_decode must be in [1, " + std::to_string(kMaxSequenceLength) + "]");
  }
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(canonical())); }

ExperimentConfig parse_config(std::istream& in, const std::string& origin) {
  ExperimentConfig cfg;
  std::map<std::string, int> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ConfigError(where + ": duplicate key '" + key + "' (first on line " + std::to_string(it->second) + ")");
    }
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_config(in, path);
}

void write_config(std::ostream& out, const ExperimentConfig& config) { out << config.canonical(); }

}  // namespace causalgen
