#include "causalgen/corpus.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "causalgen/hashing.h"
#include "causalgen/rng.h"

namespace causalgen {

using nlohmann::json;

namespace {

constexpr uint64_t kRecordStream = 0x7265636f7264ULL;
constexpr uint64_t kProxyStream = 0x70726f7879ULL;

uint64_t split_stream(Split split) { return 100 + static_cast<uint64_t>(split); }

json spec_to_json(const CorpusSpec& s) {
  return json{{"n_attr_tokens_per_class", s.n_attr_tokens_per_class},
              {"n_conf_tokens_per_class", s.n_conf_tokens_per_class},
              {"n_filler_tokens", s.n_filler_tokens},
              {"correlation", s.correlation},
              {"proxy_fraction", s.proxy_fraction},
              {"n_train", s.n_train},
              {"n_val", s.n_val},
              {"n_test", s.n_test},
              {"min_len", s.min_len},
              {"max_len", s.max_len},
              {"seed", s.seed}};
}

CorpusSpec spec_from_json(const json& j) {
  CorpusSpec s;
  s.n_attr_tokens_per_class = j.at("n_attr_tokens_per_class").get<int>();
  s.n_conf_tokens_per_class = j.at("n_conf_tokens_per_class").get<int>();
  s.n_filler_tokens = j.at("n_filler_tokens").get<int>();
  s.correlation = j.at("correlation").get<double>();
  s.proxy_fraction = j.at("proxy_fraction").get<double>();
  s.n_train = j.at("n_train").get<int>();
  s.n_val = j.at("n_val").get<int>();
  s.n_test = j.at("n_test").get<int>();
  s.min_len = j.at("min_len").get<int>();
  s.max_len = j.at("max_len").get<int>();
  s.seed = j.at("seed").get<uint64_t>();
  return s;
}

std::string join_tokens(std::span<const int> tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += std::to_string(tokens[i]);
  }
  return out;
}

// Filler weights for confounder class u: 3 on "its" half of the filler
// block, 1 on the other half.
double filler_weight(int u, int k, int n_filler) {
  const bool first_half = k < n_filler / 2;
  return (first_half == (u == 0)) ? 3.0 : 1.0;
}

Record generate_record(const CorpusSpec& spec, const Vocabulary& vocab, Split split, uint64_t index,
                       double rho) {
  Rng rng(derive_seed(spec.seed, kRecordStream + split_stream(split), index));
  Record r;
  r.u = static_cast<int>(rng.uniform_int(2));
  r.a = rng.bernoulli(rho) ? r.u : 1 - r.u;
  const int len = spec.min_len + static_cast<int>(rng.uniform_int(spec.max_len - spec.min_len + 1));
  const int k = std::min(1 + static_cast<int>(rng.uniform_int(3)), len - 2);

  std::vector<int> positions(len);
  for (int i = 0; i < len; ++i) positions[i] = i;
  rng.shuffle(positions.begin(), positions.end());

  double total_weight = 0.0;
  for (int f = 0; f < vocab.n_filler(); ++f) total_weight += filler_weight(r.u, f, vocab.n_filler());

  r.tokens.assign(len, 0);
  r.tokens[positions[0]] = vocab.conf_token(r.u, static_cast<int>(rng.uniform_int(vocab.n_conf())));
  for (int i = 1; i <= k; ++i) {
    r.tokens[positions[i]] = vocab.attr_token(r.a, static_cast<int>(rng.uniform_int(vocab.n_attr())));
  }
  for (int i = k + 1; i < len; ++i) {
    double x = rng.uniform() * total_weight;
    int f = 0;
    for (; f < vocab.n_filler() - 1; ++f) {
      x -= filler_weight(r.u, f, vocab.n_filler());
      if (x < 0) break;
    }
    r.tokens[positions[i]] = vocab.filler_token(f);
  }
  return r;
}

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

void CorpusSpec::validate() const {
  if (n_attr_tokens_per_class < 1 || n_conf_tokens_per_class < 1 || n_filler_tokens < 2) {
    throw std::invalid_argument("corpus spec: token class sizes must be >= 1 (fillers >= 2)");
  }
  if (!(correlation >= 0.5 && correlation <= 1.0)) {
    throw std::invalid_argument("corpus spec: correlation must lie in [0.5, 1.0]");
  }
  if (!(proxy_fraction > 0.0 && proxy_fraction <= 1.0)) {
    throw std::invalid_argument("corpus spec: proxy_fraction must lie in (0, 1]");
  }
  if (min_len < 3) {
    throw std::invalid_argument("corpus spec: min_len must be >= 3 (one CONF, one ATTR and one filler token)");
  }
  if (max_len < min_len) throw std::invalid_argument("corpus spec: max_len must be >= min_len");
  if (max_len > kMaxSequenceLength) throw std::invalid_argument("corpus spec: max_len must be <= 20");
  if (n_train < 0 || n_val < 0 || n_test < 0) throw std::invalid_argument("corpus spec: negative split size");
}

int CorpusSpec::size_of(Split split) const {
  switch (split) {
    case Split::kTrain: return n_train;
    case Split::kVal: return n_val;
    case Split::kTest: return n_test;
  }
  return 0;
}

double CorpusSpec::correlation_for(Split split) const { return split == Split::kTest ? 0.5 : correlation; }

std::string CorpusSpec::canonical() const { return spec_to_json(*this).dump(); }

uint64_t CorpusSpec::hash() const { return fnv1a64(canonical()); }

Vocabulary::Vocabulary(const CorpusSpec& spec)
    : n_attr_(spec.n_attr_tokens_per_class),
      n_conf_(spec.n_conf_tokens_per_class),
      n_filler_(spec.n_filler_tokens) {
  strings_ = {"<bos>", "<eos>"};
  for (int cls = 0; cls < 2; ++cls) {
    for (int k = 0; k < n_attr_; ++k) strings_.push_back("att" + std::to_string(cls) + "_" + std::to_string(k));
  }
  for (int cls = 0; cls < 2; ++cls) {
    for (int k = 0; k < n_conf_; ++k) strings_.push_back("cnf" + std::to_string(cls) + "_" + std::to_string(k));
  }
  for (int k = 0; k < n_filler_; ++k) strings_.push_back("w" + std::to_string(k));
}

TokenClass Vocabulary::classify(int id) const {
  if (id < 0 || id >= size()) throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary");
  if (id < 2) return TokenClass::kSpecial;
  id -= 2;
  if (id < n_attr_) return TokenClass::kAttr0;
  id -= n_attr_;
  if (id < n_attr_) return TokenClass::kAttr1;
  id -= n_attr_;
  if (id < n_conf_) return TokenClass::kConf0;
  id -= n_conf_;
  if (id < n_conf_) return TokenClass::kConf1;
  return TokenClass::kFiller;
}

int Vocabulary::attr_token(int cls, int k) const { return 2 + cls * n_attr_ + k; }
int Vocabulary::conf_token(int cls, int k) const { return 2 + 2 * n_attr_ + cls * n_conf_ + k; }
int Vocabulary::filler_token(int k) const { return 2 + 2 * n_attr_ + 2 * n_conf_ + k; }

std::string Vocabulary::render(std::span<const int> tokens) const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += (tokens[i] >= 0 && tokens[i] < size()) ? strings_[tokens[i]] : "<unk>";
  }
  return out;
}

void Vocabulary::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary " + path.string());
  for (const auto& s : strings_) out << s << '\n';
}

std::vector<std::string> Vocabulary::read_strings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary " + path.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

Corpus generate_corpus(const CorpusSpec& spec, Split split) {
  spec.validate();
  const Vocabulary vocab(spec);
  const int n = spec.size_of(split);
  const double rho = spec.correlation_for(split);

  Corpus corpus;
  corpus.spec = spec;
  corpus.split = split;
  corpus.records.reserve(n);
  for (int i = 0; i < n; ++i) corpus.records.push_back(generate_record(spec, vocab, split, i, rho));

  if (split == Split::kTest) {
    for (auto& r : corpus.records) r.c = r.u;
  } else {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(spec.seed, kProxyStream + split_stream(split)));
    rng.shuffle(order.begin(), order.end());
    const int n_proxy = static_cast<int>(std::lround(spec.proxy_fraction * n));
    for (int i = 0; i < n_proxy; ++i) corpus.records[order[i]].c = corpus.records[order[i]].u;
  }
  return corpus;
}

namespace {

int majority(std::span<const int> tokens, const Vocabulary& vocab, TokenClass zero, TokenClass one,
             const char* what) {
  int n0 = 0, n1 = 0;
  for (int t : tokens) {
    const TokenClass cls = vocab.classify(t);
    if (cls == zero) ++n0;
    if (cls == one) ++n1;
  }
  if (n0 == n1) {
    throw OracleTie(std::string(what) + " oracle tie (" + std::to_string(n0) + " vs " + std::to_string(n1) + ")");
  }
  return n1 > n0 ? 1 : 0;
}

}  // namespace

int oracle_attribute(std::span<const int> tokens, const Vocabulary& vocab) {
  return majority(tokens, vocab, TokenClass::kAttr0, TokenClass::kAttr1, "attribute");
}

int oracle_confounder(std::span<const int> tokens, const Vocabulary& vocab) {
  return majority(tokens, vocab, TokenClass::kConf0, TokenClass::kConf1, "confounder");
}

double empirical_correlation(const Corpus& corpus) {
  if (corpus.records.empty()) throw std::invalid_argument("empirical_correlation: empty corpus");
  long match = 0;
  for (const auto& r : corpus.records) {
    int u = r.u;
    if (u < 0) {
      if (!r.c) throw std::invalid_argument("empirical_correlation: record without confounder class");
      u = *r.c;
    }
    if (r.a == u) ++match;
  }
  return static_cast<double>(match) / static_cast<double>(corpus.records.size());
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus " + path.string());
  json header{{"format", "causalgen-corpus"},
              {"version", 1},
              {"split", split_name(corpus.split)},
              {"spec_hash", hex64(corpus.spec.hash())},
              {"spec", spec_to_json(corpus.spec)}};
  if (!corpus.config_hash.empty()) header["config_hash"] = corpus.config_hash;
  out << header.dump() << '\n';
  for (const auto& r : corpus.records) {
    json line{{"tokens", join_tokens(r.tokens)}, {"a", r.a}};
    if (r.c) line["c"] = *r.c;
    if (r.u >= 0) line["u"] = r.u;
    out << line.dump() << '\n';
  }
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CorpusFormatError(path.string() + ": line 1: missing header");
  Corpus corpus;
  try {
    const json header = json::parse(line);
    if (header.at("format") != "causalgen-corpus") throw CorpusFormatError("not a corpus file");
    corpus.split = parse_split(header.at("split").get<std::string>());
    corpus.spec = spec_from_json(header.at("spec"));
    if (header.contains("config_hash")) corpus.config_hash = header["config_hash"].get<std::string>();
    if (header.at("spec_hash").get<std::string>() != hex64(corpus.spec.hash())) {
      throw CorpusFormatError("spec hash does not match spec");
    }
  } catch (const json::exception& e) {
    throw CorpusFormatError(path.string() + ": line 1: malformed header: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CorpusFormatError(path.string() + ": line 1: " + e.what());
  }
  const int vocab_size = Vocabulary(corpus.spec).size();

  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Record r;
    try {
      const json j = json::parse(line);
      std::istringstream ts(j.at("tokens").get<std::string>());
      std::string tok;
      while (ts >> tok) {
        size_t used = 0;
        const int id = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument("bad token '" + tok + "'");
        if (id < 0 || id >= vocab_size) {
          throw VocabularyError(path.string() + ": line " + std::to_string(line_no) + ": unknown token id " +
                                std::to_string(id));
        }
        r.tokens.push_back(id);
      }
      r.a = j.at("a").get<int>();
      if (r.a != 0 && r.a != 1) throw std::invalid_argument("a must be 0 or 1");
      if (j.contains("c")) {
        const int c = j["c"].get<int>();
        if (c != 0 && c != 1) throw std::invalid_argument("c must be 0 or 1");
        r.c = c;
      }
      if (j.contains("u")) r.u = j["u"].get<int>();
    } catch (const VocabularyError&) {
      throw;
    } catch (const std::exception& e) {
      throw CorpusFormatError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
    corpus.records.push_back(std::move(r));
  }
  return corpus;
}

Corpus corpus_roundtrip(const Corpus& corpus, const std::filesystem::path& path) {
  write_corpus(corpus, path);
  return read_corpus(path);
}

Corpus strip_proxy(Corpus corpus) {
  for (auto& r : corpus.records) r.c.reset();
  return corpus;
}

}  // namespace causalgen
