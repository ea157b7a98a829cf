#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "causalgen/corpus.h"
#include "test_support.h"

using namespace causalgen;

namespace {

const Vocabulary& default_vocab() {
  static const Vocabulary v{CorpusSpec{}};
  return v;
}

int attr(int cls, int k = 0) { return default_vocab().attr_token(cls, k); }
int conf(int cls, int k = 0) { return default_vocab().conf_token(cls, k); }
int fill(int k = 0) { return default_vocab().filler_token(k); }

double sigma3(double p, double n) { return 3 * std::sqrt(p * (1 - p) / n); }

}  // namespace

TEST(Vocabulary, PartitionsAreDisjointAndSized) {
  const Vocabulary& v = default_vocab();
  EXPECT_EQ(v.size(), 82);
  std::set<int> seen;
  for (int cls = 0; cls < 2; ++cls) {
    for (int k = 0; k < 8; ++k) {
      EXPECT_TRUE(seen.insert(v.attr_token(cls, k)).second);
      EXPECT_TRUE(seen.insert(v.conf_token(cls, k)).second);
      EXPECT_EQ(v.classify(v.attr_token(cls, k)), cls ? TokenClass::kAttr1 : TokenClass::kAttr0);
      EXPECT_EQ(v.classify(v.conf_token(cls, k)), cls ? TokenClass::kConf1 : TokenClass::kConf0);
    }
  }
  for (int k = 0; k < 48; ++k) EXPECT_TRUE(seen.insert(v.filler_token(k)).second);
  EXPECT_EQ(seen.count(Vocabulary::kBos) + seen.count(Vocabulary::kEos), 0u);
  EXPECT_EQ(Vocabulary(fixtures::toy_spec()).size(), 12);
}

TEST(Oracle, AttributeExamples) {
  const Vocabulary& v = default_vocab();
  EXPECT_EQ(oracle_attribute(Tokens{fill(), attr(1), conf(0)}, v), 1);
  EXPECT_EQ(oracle_attribute(Tokens{attr(0), attr(0, 3), attr(1)}, v), 0);
  EXPECT_THROW(oracle_attribute(Tokens{fill(), fill(1)}, v), OracleTie);
  EXPECT_THROW(oracle_attribute(Tokens{attr(0), attr(1)}, v), OracleTie);
}

TEST(Oracle, ConfounderExamples) {
  const Vocabulary& v = default_vocab();
  EXPECT_EQ(oracle_confounder(Tokens{conf(1), fill(), attr(0)}, v), 1);
  EXPECT_EQ(oracle_confounder(Tokens{conf(0), conf(0, 5)}, v), 0);
  EXPECT_THROW(oracle_confounder(Tokens{attr(1), fill()}, v), OracleTie);
}

TEST(Corpus, RecordsSatisfyConstructionInvariants) {
  CorpusSpec spec;
  spec.n_train = 5000;
  const Vocabulary v(spec);
  const Corpus c = generate_corpus(spec, Split::kTrain);
  ASSERT_EQ(c.records.size(), 5000u);
  for (const Record& r : c.records) {
    ASSERT_GE(static_cast<int>(r.tokens.size()), spec.min_len);
    ASSERT_LE(static_cast<int>(r.tokens.size()), spec.max_len);
    int own = 0, other = 0, confs = 0;
    for (int t : r.tokens) {
      const TokenClass k = v.classify(t);
      own += k == (r.a ? TokenClass::kAttr1 : TokenClass::kAttr0);
      other += k == (r.a ? TokenClass::kAttr0 : TokenClass::kAttr1);
      confs += k == TokenClass::kConf0 || k == TokenClass::kConf1;
      ASSERT_NE(k, TokenClass::kSpecial);
    }
    EXPECT_GE(own, 1);
    EXPECT_LE(own, 3);
    EXPECT_EQ(other, 0);
    EXPECT_EQ(confs, 1);
    EXPECT_EQ(oracle_attribute(r.tokens, v), r.a);
    EXPECT_EQ(oracle_confounder(r.tokens, v), r.u);
    if (r.c) {
      EXPECT_EQ(*r.c, r.u);
    }
  }
}

TEST(Corpus, CorrelationWithinBinomialBand) {
  CorpusSpec spec;
  spec.n_train = 10000;
  const double rho = empirical_correlation(generate_corpus(spec, Split::kTrain));
  EXPECT_GE(rho, 0.891);
  EXPECT_LE(rho, 0.909);

  spec.correlation = 0.5;
  spec.n_train = 100000;
  const double half = empirical_correlation(generate_corpus(spec, Split::kTrain));
  EXPECT_GE(half, 0.485);
  EXPECT_LE(half, 0.515);

  spec.correlation = 1.0;
  spec.n_train = 2000;
  EXPECT_EQ(empirical_correlation(generate_corpus(spec, Split::kTrain)), 1.0);

  spec.correlation = 0.95;
  spec.n_train = 20000;
  EXPECT_NEAR(empirical_correlation(generate_corpus(spec, Split::kTrain)), 0.95, sigma3(0.95, 20000));
}

TEST(Corpus, ProxySubsetIsUnbiasedAndSized) {
  CorpusSpec spec;
  spec.n_train = 20000;
  spec.proxy_fraction = 0.2;
  const Corpus c = generate_corpus(spec, Split::kTrain);
  size_t labeled = 0, match = 0;
  for (const Record& r : c.records) {
    if (!r.c) continue;
    ++labeled;
    match += *r.c == r.a;
  }
  EXPECT_NEAR(static_cast<double>(labeled) / 20000.0, 0.2, 1.0 / 20000 + 1e-12);
  EXPECT_NEAR(static_cast<double>(match) / static_cast<double>(labeled), 0.9,
              sigma3(0.9, static_cast<double>(labeled)));
}

TEST(Corpus, TestSplitIsBalancedAndFullyLabeled) {
  CorpusSpec spec;
  spec.n_test = 10000;
  const Corpus c = generate_corpus(spec, Split::kTest);
  EXPECT_EQ(spec.correlation_for(Split::kTest), 0.5);
  for (const Record& r : c.records) ASSERT_TRUE(r.c.has_value());
  EXPECT_NEAR(empirical_correlation(c), 0.5, sigma3(0.5, 10000));
}

TEST(Corpus, GenerationIsDeterministicAndSeedSensitive) {
  CorpusSpec spec;
  spec.n_train = 500;
  EXPECT_EQ(generate_corpus(spec, Split::kTrain), generate_corpus(spec, Split::kTrain));
  CorpusSpec other = spec;
  other.seed = 99;
  EXPECT_NE(generate_corpus(spec, Split::kTrain).records, generate_corpus(other, Split::kTrain).records);
  // Splits draw from different streams.
  EXPECT_NE(generate_corpus(spec, Split::kTrain).records[0], generate_corpus(spec, Split::kVal).records[0]);
}

TEST(Corpus, RecordDoesNotDependOnCorpusSize) {
  CorpusSpec small;
  small.n_train = 10;
  CorpusSpec big = small;
  big.n_train = 1000;
  const Corpus a = generate_corpus(small, Split::kTrain);
  const Corpus b = generate_corpus(big, Split::kTrain);
  for (size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].tokens, b.records[i].tokens);
}

TEST(CorpusSpec, ValidationRejectsBadSpecs) {
  auto bad = [](auto mutate) {
    CorpusSpec s;
    mutate(s);
    EXPECT_THROW(s.validate(), std::invalid_argument);
  };
  bad([](CorpusSpec& s) { s.min_len = 2; });
  bad([](CorpusSpec& s) { s.max_len = 21; });
  bad([](CorpusSpec& s) { s.correlation = 0.49; });
  bad([](CorpusSpec& s) { s.correlation = 1.01; });
  bad([](CorpusSpec& s) { s.proxy_fraction = 0.0; });
  bad([](CorpusSpec& s) { s.min_len = 9, s.max_len = 8; });
  CorpusSpec ok;
  EXPECT_NO_THROW(ok.validate());
}

TEST(CorpusFile, RoundTripPreservesEveryField) {
  fixtures::TempDir dir("corpus");
  CorpusSpec spec;
  spec.n_train = 300;
  spec.proxy_fraction = 0.3;
  Corpus c = generate_corpus(spec, Split::kTrain);
  c.config_hash = "0123456789abcdef";
  EXPECT_EQ(corpus_roundtrip(c, dir.path() / "c.jsonl"), c);
  const Corpus test = generate_corpus(spec, Split::kTest);
  EXPECT_EQ(corpus_roundtrip(test, dir.path() / "t.jsonl"), test);

  Corpus empty = c;
  empty.records.clear();
  EXPECT_EQ(corpus_roundtrip(empty, dir.path() / "e.jsonl"), empty);
}

TEST(CorpusFile, MissingProxyFieldReadsAsAbsent) {
  fixtures::TempDir dir("corpus-absent");
  CorpusSpec spec;
  spec.n_train = 3;
  Corpus c = generate_corpus(spec, Split::kTrain);
  for (auto& r : c.records) r.c = 1;
  write_corpus(c, dir.path() / "c.jsonl");
  // Rewrite the second record without its c field.
  std::ifstream in(dir.path() / "c.jsonl");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  const std::string key = ",\"c\":1";
  ASSERT_NE(lines[2].find(key), std::string::npos) << lines[2];
  lines[2].erase(lines[2].find(key), key.size());
  std::ofstream out(dir.path() / "c.jsonl");
  for (const auto& l : lines) out << l << '\n';
  out.close();
  const Corpus back = read_corpus(dir.path() / "c.jsonl");
  EXPECT_TRUE(back.records[0].c.has_value());
  EXPECT_FALSE(back.records[1].c.has_value());
}

TEST(CorpusFile, MalformedLineNamesLineNumber) {
  fixtures::TempDir dir("corpus-bad");
  CorpusSpec spec;
  spec.n_train = 4;
  write_corpus(generate_corpus(spec, Split::kTrain), dir.path() / "c.jsonl");
  {
    std::ofstream out(dir.path() / "c.jsonl", std::ios::app);
    out << "{not json\n";
  }
  try {
    read_corpus(dir.path() / "c.jsonl");
    FAIL() << "expected a parse error";
  } catch (const CorpusFormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 6"), std::string::npos) << e.what();
  }
}

TEST(CorpusFile, UnknownTokenIsVocabularyError) {
  fixtures::TempDir dir("corpus-vocab");
  CorpusSpec spec;
  spec.n_train = 2;
  write_corpus(generate_corpus(spec, Split::kTrain), dir.path() / "c.jsonl");
  {
    std::ofstream out(dir.path() / "c.jsonl", std::ios::app);
    out << R"({"tokens":"5 999 7","a":0})" << '\n';
  }
  EXPECT_THROW(read_corpus(dir.path() / "c.jsonl"), VocabularyError);
}

TEST(VocabularyFile, OneTokenPerLine) {
  fixtures::TempDir dir("vocab");
  const Vocabulary& v = default_vocab();
  v.write(dir.path() / "vocab.txt");
  EXPECT_EQ(Vocabulary::read_strings(dir.path() / "vocab.txt"), v.strings());
}
