#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "causalgen/training.h"
#include "json.hpp"
#include "test_support.h"

using namespace causalgen;

namespace {

CorpusSpec small_spec() {
  CorpusSpec s = fixtures::toy_spec();
  s.n_train = 1000;
  s.n_val = 100;
  s.n_test = 200;
  s.proxy_fraction = 0.3;
  return s;
}

const Corpus& train_corpus() {
  static const Corpus c = generate_corpus(small_spec(), Split::kTrain);
  return c;
}

const Corpus& val_corpus() {
  static const Corpus c = generate_corpus(small_spec(), Split::kVal);
  return c;
}

ClassifierConfig quick_classifier() {
  ClassifierConfig c;
  c.epochs = 2;
  c.batch_size = 32;
  c.learning_rate = 1e-2;
  return c;
}

TrainConfig quick_train() {
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 32;
  t.learning_rate = 3e-3;
  t.log_every = 5;
  return t;
}

const SequenceClassifier& toy_f() {
  static const SequenceClassifier f =
      pretrain_attribute_classifier(train_corpus(), fixtures::toy_model(), quick_classifier(), nullptr);
  return f;
}

Record rec(Tokens x, int a, std::optional<int> c) {
  Record r;
  r.tokens = std::move(x);
  r.a = a;
  r.u = c.value_or(a);
  r.c = c;
  return r;
}

}  // namespace

TEST(EpochPermutation, DeterministicPermutation) {
  const auto p = epoch_permutation(50, 3, 1);
  EXPECT_EQ(p, epoch_permutation(50, 3, 1));
  EXPECT_NE(p, epoch_permutation(50, 3, 2));
  EXPECT_NE(p, epoch_permutation(50, 4, 1));
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(TrainConfig, Validation) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.learning_rate = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = TrainConfig{};
  t.kl_ceiling = 1.5;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  ClassifierConfig c;
  c.epochs = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(AttributeClassifier, DeterministicAndBiasDirection) {
  ClassifierReport r1, r2;
  const Corpus test = generate_corpus(small_spec(), Split::kTest);
  const SequenceClassifier f1 =
      pretrain_attribute_classifier(train_corpus(), fixtures::toy_model(), quick_classifier(), &test, &r1);
  const SequenceClassifier f2 =
      pretrain_attribute_classifier(train_corpus(), fixtures::toy_model(), quick_classifier(), &test, &r2);
  EXPECT_EQ(r1.train_accuracy, r2.train_accuracy);
  EXPECT_EQ(r1.final_loss, r2.final_loss);
  const auto p1 = f1.parameters(), p2 = f2.parameters();
  for (size_t i = 0; i < p1.size(); ++i) EXPECT_EQ(p1[i]->value, p2[i]->value);
  EXPECT_GT(r1.train_accuracy, 0.6);
  EXPECT_GE(r1.train_accuracy + 0.02, r1.balanced_test_accuracy);
}

TEST(ConfounderWeights, NineToOneAndUniformWhenAllAgree) {
  const std::vector<Record> mixed{rec({2, 3}, 0, 1), rec({2, 3}, 1, 1), rec({2, 3}, 1, 0)};
  const auto w = confounder_weights(mixed);
  EXPECT_EQ(w, (std::vector<double>{0.9, 0.1, 0.9}));
  EXPECT_NEAR(w[0] / w[1], 9.0, 1e-12);
  const std::vector<Record> agree{rec({2, 3}, 0, 0), rec({2, 3}, 1, 1)};
  EXPECT_EQ(confounder_weights(agree), (std::vector<double>{0.1, 0.1}));
  const std::vector<Record> absent{rec({2, 3}, 0, std::nullopt)};
  EXPECT_THROW(confounder_weights(absent), std::invalid_argument);
}

TEST(ConfounderClassifier, WarnsWhenEveryRecordAgrees) {
  CorpusSpec spec = small_spec();
  spec.correlation = 1.0;
  const Corpus c = generate_corpus(spec, Split::kTrain);
  std::vector<std::string> warnings;
  ClassifierConfig cfg = quick_classifier();
  cfg.epochs = 1;
  train_reweighted_confounder_classifier(c, fixtures::toy_model(), cfg, true, &warnings);
  ASSERT_EQ(warnings.size(), 1u);

  Corpus none = c;
  for (auto& r : none.records) r.c.reset();
  EXPECT_THROW(train_reweighted_confounder_classifier(none, fixtures::toy_model(), cfg, true), std::invalid_argument);
}

TEST(CausalTraining, LossFallsAndRunIsDeterministic) {
  const ModelConfig mc = fixtures::toy_model();
  const TrainConfig tc = quick_train();
  std::ostringstream log1, log2;
  const CausalTrainResult r1 = train_causal_model(train_corpus(), val_corpus(), toy_f(), mc, tc, LossWeights{}, &log1);
  const CausalTrainResult r2 = train_causal_model(train_corpus(), val_corpus(), toy_f(), mc, tc, LossWeights{}, &log2);
  EXPECT_EQ(log1.str(), log2.str());
  ASSERT_EQ(r1.epochs.size(), 3u);
  EXPECT_EQ(r1.steps, 2 * 32);
  EXPECT_GT(r1.epochs.back().val_recon_log_prob, r1.epochs.front().val_recon_log_prob);
  for (const auto& e : r1.epochs) EXPECT_GE(e.val_kl, 0.0);

  // Same batch, same noise, same schedule point: trained total is lower.
  const Batch b = make_batch(std::span(train_corpus().records).subspan(0, 64));
  std::vector<uint64_t> seeds;
  for (size_t i = 0; i < 64; ++i) seeds.push_back(derive_seed(7, i));
  LossSettings s;
  s.kl_weight = tc.kl_ceiling;
  s.tau = tc.tau_end;
  s.soft_steps = small_spec().max_len + 1;
  Tape t(false);
  const CausalModel untrained(mc);
  const double before = total_loss(t, untrained, toy_f(), b, s, seeds).breakdown.total;
  const double after = total_loss(t, r1.model, toy_f(), b, s, seeds).breakdown.total;
  EXPECT_LT(after, before);
}

TEST(CausalTraining, LogRecordsCarryEveryTerm) {
  TrainConfig tc = quick_train();
  tc.epochs = 1;
  std::ostringstream log;
  train_causal_model(train_corpus(), val_corpus(), toy_f(), fixtures::toy_model(), tc, LossWeights{}, &log);
  std::istringstream in(log.str());
  size_t step_lines = 0;
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    ASSERT_TRUE(j.contains("epoch"));
    if (!j.contains("step")) continue;
    ++step_lines;
    for (const char* key : {"recon_x", "recon_a", "recon_c", "kl", "cf_a", "cf_z", "cf_c", "total", "kl_weight", "tau"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_GE(j["kl"].get<double>(), 0.0);
    EXPECT_LE(j["kl_weight"].get<double>(), tc.kl_ceiling);
  }
  EXPECT_EQ(step_lines, 7u);  // steps 0, 5, ..., 30
}

TEST(CausalTraining, AblationZeroesCounterfactualTerms) {
  TrainConfig tc = quick_train();
  tc.epochs = 1;
  tc.ablation = {false, true, true};
  const auto r = train_causal_model(train_corpus(), val_corpus(), toy_f(), fixtures::toy_model(), tc, LossWeights{});
  EXPECT_EQ(r.epochs.back().mean_train.cf_z, 0.0);
  EXPECT_EQ(r.epochs.back().mean_train.cf_c, 0.0);
  EXPECT_GT(r.epochs.back().mean_train.cf_a, 0.0);
}

TEST(CausalTraining, LeavesClassifierUntouched) {
  const SequenceClassifier before = toy_f();
  TrainConfig tc = quick_train();
  tc.epochs = 1;
  train_causal_model(train_corpus(), val_corpus(), toy_f(), fixtures::toy_model(), tc, LossWeights{});
  const auto p = before.parameters(), q = toy_f().parameters();
  for (size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(p[i]->value, q[i]->value);
    EXPECT_TRUE(q[i]->trainable);
  }
}

TEST(LossBreakdown, NamesFirstNonFiniteTerm) {
  LossBreakdown b;
  EXPECT_EQ(b.first_nonfinite(), "");
  b.cf_z = std::nan("");
  b.cf_c = std::numeric_limits<double>::infinity();
  EXPECT_EQ(b.first_nonfinite(), "cf_z");
}

TEST(ConditionalLM, PlainIgnoresProxyLabels) {
  TrainConfig tc = quick_train();
  tc.epochs = 1;
  Corpus stripped = train_corpus();
  for (auto& r : stripped.records) r.c.reset();
  const auto a = train_conditional_lm(train_corpus(), LMVariant::kPlain, nullptr, fixtures::toy_model(), tc);
  const auto b = train_conditional_lm(stripped, LMVariant::kPlain, nullptr, fixtures::toy_model(), tc);
  const auto pa = a.lm.parameters(), pb = b.lm.parameters();
  for (size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
}

TEST(ConditionalLM, FullVariantNeedsClassifierAndImputesEverything) {
  TrainConfig tc = quick_train();
  tc.epochs = 1;
  EXPECT_THROW(train_conditional_lm(train_corpus(), LMVariant::kFull, nullptr, fixtures::toy_model(), tc),
               std::invalid_argument);
  ClassifierConfig cc = quick_classifier();
  const SequenceClassifier g = train_reweighted_confounder_classifier(train_corpus(), fixtures::toy_model(), cc, true);
  const auto r = train_conditional_lm(train_corpus(), LMVariant::kFull, &g, fixtures::toy_model(), tc);
  EXPECT_EQ(r.imputed_coverage, 1.0);
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
  const auto& p = r.lm.confounder_given_attribute();
  ASSERT_EQ(p.size(), 2u);
  for (double v : p) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }

  const auto labels = impute_confounders(train_corpus(), g);
  ASSERT_EQ(labels.size(), train_corpus().records.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    if (train_corpus().records[i].c) {
      EXPECT_EQ(labels[i], *train_corpus().records[i].c);
    }
  }
  EXPECT_EQ(parse_variant("full"), LMVariant::kFull);
  EXPECT_THROW(parse_variant("cond-lm"), std::invalid_argument);
}
