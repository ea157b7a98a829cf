#include "causalgen/metrics.h"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace causalgen {

namespace {

using Json = nlohmann::json;

std::string ids_to_string(const Tokens& t) {
  std::string s;
  for (size_t i = 0; i < t.size(); ++i) {
    if (i) s += ' ';
    s += std::to_string(t[i]);
  }
  return s;
}

Tokens string_to_ids(const std::string& s, const std::string& where) {
  Tokens out;
  std::istringstream in(s);
  std::string word;
  while (in >> word) {
    size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(word, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != word.size()) throw std::runtime_error(where + ": bad token id '" + word + "'");
    out.push_back(v);
  }
  return out;
}

std::optional<int> try_oracle(int (*oracle)(std::span<const int>, const Vocabulary&), const Tokens& t,
                              const Vocabulary& vocab) {
  try {
    return oracle(t, vocab);
  } catch (const OracleTie&) {
    return std::nullopt;
  }
}

}  // namespace

ControlCounts control_counts(std::span<const Sample> samples, const Vocabulary& vocab) {
  ControlCounts c;
  for (const auto& s : samples) {
    const auto a = try_oracle(oracle_attribute, s.tokens, vocab);
    if (!a) {
      ++c.tie;
    } else if (*a == s.target) {
      ++c.match;
    } else {
      ++c.mismatch;
    }
  }
  return c;
}

double control_accuracy(std::span<const Sample> samples, const Vocabulary& vocab) {
  if (samples.empty()) throw std::invalid_argument("control_accuracy: no samples");
  const ControlCounts c = control_counts(samples, vocab);
  return static_cast<double>(c.match) / static_cast<double>(c.total());
}

BiasResult bias_score(std::span<const Sample> samples, const Vocabulary& vocab) {
  if (samples.empty()) throw std::invalid_argument("bias_score: no samples");
  BiasResult r;
  size_t hits = 0;
  for (const auto& s : samples) {
    const auto c = try_oracle(oracle_confounder, s.tokens, vocab);
    if (!c) {
      ++r.ties;
      continue;
    }
    ++r.counted;
    hits += *c == s.target;
  }
  if (r.counted == 0) throw UndefinedMetric("bias_score: every sample has a tied confounder oracle");
  r.value = static_cast<double>(hits) / static_cast<double>(r.counted);
  return r;
}

double fluency_perplexity(std::span<const Sample> samples, const NgramLM& lm) {
  if (samples.empty()) throw std::invalid_argument("fluency_perplexity: no samples");
  std::vector<Tokens> seqs;
  for (const auto& s : samples) seqs.push_back(s.tokens);
  return lm.perplexity(seqs);
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string dump_kind_name(DumpKind k) { return k == DumpKind::kTransfer ? "transfer" : "conditional-gen"; }

DumpKind parse_dump_kind(const std::string& s) {
  if (s == "transfer") return DumpKind::kTransfer;
  if (s == "conditional-gen") return DumpKind::kConditionalGen;
  throw std::invalid_argument("unknown dump kind: " + s);
}

void write_dump(const std::string& path, const GenerationDump& dump) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dump " + path);
  Json header{{"format", "causalgen-dump"},
              {"version", 1},
              {"kind", dump_kind_name(dump.kind)},
              {"source", dump.source},
              {"config_hash", dump.config_hash}};
  out << header.dump() << '\n';
  for (const auto& e : dump.entries) {
    Json j{{"mode", e.mode}, {"a", e.a}, {"tokens", ids_to_string(e.tokens)}};
    if (e.source_a) j["source_a"] = *e.source_a;
    if (e.original) j["original"] = ids_to_string(*e.original);
    if (!e.error.empty()) j["error"] = e.error;
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("failed writing dump " + path);
}

GenerationDump read_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dump " + path);
  GenerationDump dump;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path + ":" + std::to_string(line_no);
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": invalid JSON");
    }
    try {
      if (line_no == 1) {
        if (j.value("format", "") != "causalgen-dump") throw std::runtime_error(where + ": not a generation dump");
        if (j.value("version", 0) != 1) throw std::runtime_error(where + ": unsupported dump version");
        dump.kind = parse_dump_kind(j.at("kind").get<std::string>());
        dump.source = j.value("source", "");
        dump.config_hash = j.value("config_hash", "");
        continue;
      }
      DumpEntry e;
      e.mode = j.at("mode").get<std::string>();
      e.a = j.at("a").get<int>();
      if (e.a != 0 && e.a != 1) throw std::runtime_error(where + ": attribute must be 0 or 1");
      e.tokens = string_to_ids(j.at("tokens").get<std::string>(), where);
      if (j.contains("source_a")) e.source_a = j["source_a"].get<int>();
      if (j.contains("original")) e.original = string_to_ids(j["original"].get<std::string>(), where);
      e.error = j.value("error", "");
      dump.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(where + ": " + e.what());
    }
  }
  if (line_no == 0) throw std::runtime_error(path + ": empty dump");
  return dump;
}

double mean_pair_bleu(std::span<const Tokens> candidates, std::span<const Tokens> references) {
  if (candidates.size() != references.size()) throw std::invalid_argument("mean_pair_bleu: size mismatch");
  if (candidates.empty()) throw std::invalid_argument("mean_pair_bleu: no pairs");
  double sum = 0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].empty()) continue;
    const std::vector<Tokens> refs{references[i]};
    sum += bleu<int>(std::span<const int>(candidates[i]), std::span<const Tokens>(refs));
  }
  return sum / static_cast<double>(candidates.size());
}

MetricReport evaluate_generation(const GenerationDump& dump, const Vocabulary& vocab, const NgramLM& reference_lm,
                                 DumpKind expected, const std::vector<Tokens>* golden) {
  if (dump.kind != expected) {
    throw std::invalid_argument("dump kind " + dump_kind_name(dump.kind) + " does not match requested mode " +
                                dump_kind_name(expected));
  }
  if (golden && golden->size() != dump.entries.size()) {
    throw std::invalid_argument("golden references must pair one-to-one with dump entries");
  }
  MetricReport rep;
  rep.label = dump.source;
  std::vector<Sample> samples;
  std::vector<Tokens> cands, originals, refs;
  for (size_t i = 0; i < dump.entries.size(); ++i) {
    const DumpEntry& e = dump.entries[i];
    if (!e.error.empty()) {
      ++rep.n_failures;
      continue;
    }
    if (expected == DumpKind::kTransfer && !e.original) {
      throw std::invalid_argument("transfer dump entry without original tokens");
    }
    samples.push_back({e.tokens, e.a});
    cands.push_back(e.tokens);
    if (e.original) originals.push_back(*e.original);
    if (golden) refs.push_back((*golden)[i]);
  }
  rep.n_samples = samples.size();
  if (samples.empty()) throw std::invalid_argument("dump has no successful entries");

  rep.control = control_counts(samples, vocab);
  rep.control_accuracy = static_cast<double>(rep.control.match) / static_cast<double>(rep.control.total());
  try {
    const BiasResult b = bias_score(samples, vocab);
    rep.bias = b.value;
    rep.bias_ties = b.ties;
  } catch (const UndefinedMetric&) {
    rep.bias_ties = samples.size();
  }
  rep.fluency_perplexity = fluency_perplexity(samples, reference_lm);
  for (int n : {1, 2, 3}) {
    try {
      rep.distinct[n] = distinct_n<int>(std::span<const Tokens>(cands), n);
    } catch (const std::invalid_argument&) {
      // No sequence long enough for this order; omitted from the report.
    }
  }
  if (expected == DumpKind::kTransfer) {
    rep.self_bleu = mean_pair_bleu(cands, originals);
    size_t flipped = 0, kept = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
      const auto a = try_oracle(oracle_attribute, cands[i], vocab);
      if (!a || *a != samples[i].target) continue;
      ++flipped;
      const auto c_new = try_oracle(oracle_confounder, cands[i], vocab);
      const auto c_old = try_oracle(oracle_confounder, originals[i], vocab);
      kept += c_new && c_old && *c_new == *c_old;
    }
    rep.confounder_preservation = flipped ? static_cast<double>(kept) / static_cast<double>(flipped) : 0.0;
  }
  if (golden) rep.ref_bleu = mean_pair_bleu(cands, refs);
  return rep;
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "model: " << label << '\n';
  out << "samples: " << n_samples << " (failures: " << n_failures << ")\n";
  out << "control_accuracy: " << control_accuracy << " (match " << control.match << ", mismatch " << control.mismatch
      << ", tie " << control.tie << ")\n";
  if (bias) {
    out << "bias: " << *bias << " (ties excluded: " << bias_ties << ")\n";
  } else {
    out << "bias: undefined (all " << bias_ties << " samples tie)\n";
  }
  out << "fluency_perplexity: " << fluency_perplexity << '\n';
  for (const auto& [n, v] : distinct) out << "distinct_" << n << ": " << v << '\n';
  if (self_bleu) out << "self_bleu: " << *self_bleu << '\n';
  if (ref_bleu) out << "ref_bleu: " << *ref_bleu << '\n';
  if (confounder_preservation) out << "confounder_preservation: " << *confounder_preservation << '\n';
  return out.str();
}

std::string MetricReport::tsv_header() {
  return "model\tsamples\tfailures\tcontrol_accuracy\tmismatch\ttie\tbias\tbias_ties\tperplexity\tdistinct_1\t"
         "distinct_2\tdistinct_3\tself_bleu\tref_bleu\tconfounder_preservation";
}

std::string MetricReport::to_tsv() const {
  std::ostringstream out;
  out << std::setprecision(10);
  auto opt = [&](const std::optional<double>& v) {
    if (v) {
      out << *v;
    } else {
      out << '-';
    }
  };
  auto dist = [&](int n) {
    auto it = distinct.find(n);
    opt(it == distinct.end() ? std::nullopt : std::optional<double>(it->second));
  };
  out << label << '\t' << n_samples << '\t' << n_failures << '\t' << control_accuracy << '\t' << control.mismatch
      << '\t' << control.tie << '\t';
  opt(bias);
  out << '\t' << bias_ties << '\t' << fluency_perplexity << '\t';
  dist(1);
  out << '\t';
  dist(2);
  out << '\t';
  dist(3);
  out << '\t';
  opt(self_bleu);
  out << '\t';
  opt(ref_bleu);
  out << '\t';
  opt(confounder_preservation);
  return out.str();
}

}  // namespace causalgen
