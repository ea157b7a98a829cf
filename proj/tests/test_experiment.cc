#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "causalgen/experiment.h"
#include "test_support.h"

using namespace causalgen;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seed = 3;
  c.corpus.n_attr_tokens_per_class = 3;
  c.corpus.n_conf_tokens_per_class = 3;
  c.corpus.n_filler_tokens = 6;
  c.corpus.proxy_fraction = 0.2;
  c.corpus.n_train = 300;
  c.corpus.n_val = 40;
  c.corpus.n_test = 30;
  c.corpus.min_len = 3;
  c.corpus.max_len = 6;
  c.model.z_dim = 4;
  c.model.hidden_dim = 8;
  c.model.emb_dim = 6;
  c.train.epochs = 1;
  c.train.batch_size = 32;
  c.train.log_every = 4;
  c.lm_epochs = 1;
  c.attr_classifier.epochs = 1;
  c.attr_classifier.max_steps = 10;
  c.confounder_classifier.epochs = 1;
  c.gan.steps = 40;
  c.eval.samples_per_class = 15;
  c.eval.reference_records = 2000;
  return c;
}

struct Workspace {
  fixtures::TempDir dir{"exp"};
  ExperimentLayout layout{dir.path()};
  Experiment open(const ExperimentConfig& cfg = tiny_config(), bool force = false) const {
    return Experiment(cfg, layout, force);
  }
};

}  // namespace

TEST(Experiment, GenDataWritesHashedCorporaAndRefusesOverwrite) {
  Workspace ws;
  const Experiment ex = ws.open();
  const auto paths = ex.gen_data();
  ASSERT_EQ(paths.size(), 4u);
  for (const auto& p : paths) EXPECT_TRUE(std::filesystem::exists(p)) << p;
  EXPECT_TRUE(std::filesystem::exists(ws.layout.config_snapshot()));
  EXPECT_TRUE(std::filesystem::exists(ws.layout.seed_registry()));
  const Corpus train = ex.load_corpus(Split::kTrain);
  EXPECT_EQ(train.records.size(), 300u);
  EXPECT_EQ(train.config_hash, ex.config_hash());
  EXPECT_THROW(ex.gen_data(), ExperimentError);
  EXPECT_NO_THROW(ws.open(tiny_config(), true).gen_data());
  EXPECT_EQ(ws.open().load_corpus(Split::kTrain), train);
}

TEST(Experiment, SnapshotReloadsAsSameConfig) {
  Workspace ws;
  ws.open().write_snapshot();
  const ExperimentConfig back = load_experiment_config(std::nullopt, ws.layout);
  EXPECT_EQ(back.hash(), tiny_config().hash());
  Workspace empty;
  EXPECT_EQ(load_experiment_config(std::nullopt, empty.layout).hash(), ExperimentConfig{}.hash());
}

TEST(Experiment, ArtifactsRefuseADifferentConfigUnlessForced) {
  Workspace ws;
  ws.open().gen_data();
  ExperimentConfig other = tiny_config();
  other.train.learning_rate = 5e-4;
  EXPECT_THROW(ws.open(other).write_snapshot(), HashMismatch);
  EXPECT_THROW(ws.open(other).load_corpus(Split::kTrain), HashMismatch);
  EXPECT_NO_THROW(ws.open(other, true).load_corpus(Split::kTrain));
}

TEST(Experiment, CausalTrainSampleTransferAndEval) {
  Workspace ws;
  const Experiment ex = ws.open();
  ex.gen_data();
  const TrainSummary t = ex.train({});
  EXPECT_EQ(t.name, "causal");
  EXPECT_TRUE(std::filesystem::exists(t.checkpoint));
  EXPECT_TRUE(t.gan_holdout_accuracy.has_value());
  EXPECT_TRUE(std::filesystem::exists(ws.layout.training_log("causal")));
  EXPECT_EQ(ex.load_artifact("causal").config_hash, ex.config_hash());

  SampleOptions so;
  so.checkpoint = "causal";
  const auto dump_path = ex.sample(so);
  const GenerationDump dump = read_dump(dump_path.string());
  EXPECT_EQ(dump.kind, DumpKind::kConditionalGen);
  EXPECT_EQ(dump.config_hash, ex.config_hash());
  ASSERT_EQ(dump.entries.size(), 30u);
  size_t ones = 0;
  for (const auto& e : dump.entries) ones += e.a == 1;
  EXPECT_EQ(ones, 15u);
  EXPECT_EQ(read_dump(ex.sample(so).string()).entries.size(), 30u);
  EXPECT_EQ(read_dump(ex.sample(so).string()).entries[3].tokens, dump.entries[3].tokens);

  const auto tpath = ex.transfer({});
  const GenerationDump tr = read_dump(tpath.string());
  const Corpus test = ex.load_corpus(Split::kTest);
  ASSERT_EQ(tr.entries.size(), test.records.size());
  for (size_t i = 0; i < tr.entries.size(); ++i) {
    ASSERT_TRUE(tr.entries[i].source_a.has_value());
    EXPECT_EQ(*tr.entries[i].source_a, test.records[i].a);
    EXPECT_EQ(tr.entries[i].a, 1 - test.records[i].a);
    EXPECT_EQ(tr.entries[i].original, test.records[i].tokens);
  }

  const MetricReport r = ex.eval({tpath, "", std::nullopt});
  EXPECT_EQ(r.label, tpath.stem().string());
  EXPECT_TRUE(r.self_bleu.has_value());
  EXPECT_TRUE(std::filesystem::exists(ws.layout.reports() / (r.label + ".txt")));
  EXPECT_THROW(ex.eval({dump_path, "", DumpKind::kTransfer}), std::invalid_argument);

  ExperimentConfig other = tiny_config();
  other.eval.samples_per_class = 16;
  EXPECT_THROW(ws.open(other).eval({dump_path, "", std::nullopt}), HashMismatch);
  EXPECT_THROW(ws.open(other).load_artifact("causal"), HashMismatch);
}

TEST(Experiment, MissingGanIsReported) {
  Workspace ws;
  const Experiment ex = ws.open();
  ex.gen_data();
  TrainOptions o;
  o.skip_gan = true;
  o.name = "nogan";
  ex.train(o);
  SampleOptions so;
  so.checkpoint = "nogan";
  try {
    ex.sample(so);
    FAIL() << "expected an error";
  } catch (const ExperimentError& e) {
    EXPECT_NE(std::string(e.what()).find("GAN"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(ex.transfer({"nogan", Split::kTest, std::nullopt, std::nullopt, {}}));
}

TEST(Experiment, BaselinesAndCommandValidation) {
  Workspace ws;
  const Experiment ex = ws.open();
  ex.gen_data();
  // Strip every proxy label from the training split.
  Corpus train = ex.load_corpus(Split::kTrain);
  for (auto& r : train.records) r.c.reset();
  write_corpus(train, ws.layout.corpus(Split::kTrain));
  EXPECT_THROW(ex.train({"cond-lm-full", {}, false, ""}), ExperimentError);
  EXPECT_THROW(ex.train({"transformer", {}, false, ""}), ExperimentError);
  EXPECT_THROW(ex.train({"cond-lm", {true, false, false}, false, ""}), ExperimentError);
  const TrainSummary lm = ex.train({"cond-lm", {}, false, ""});
  EXPECT_EQ(lm.name, "cond-lm");
  SampleOptions so;
  so.checkpoint = "cond-lm";
  EXPECT_THROW(ex.sample(so), ExperimentError);  // interventional needs a causal model
  so.mode = SampleMode::kConditional;
  so.n = 4;
  so.attributes = {1};
  const GenerationDump d = read_dump(ex.sample(so).string());
  ASSERT_EQ(d.entries.size(), 4u);
  for (const auto& e : d.entries) EXPECT_EQ(e.a, 1);
  EXPECT_THROW(ex.transfer({"cond-lm", Split::kTest, std::nullopt, std::nullopt, {}}), ExperimentError);
  EXPECT_THROW(ex.load_artifact("absent"), ExperimentError);
  EXPECT_EQ(causal_checkpoint_name({false, true, true}), "causal-no-cf-z-c");
}

TEST(Experiment, FullRunProducesTableAndIsReproducible) {
  Workspace a, b;
  const ExperimentSummary sa = a.open().run_experiment();
  ASSERT_EQ(sa.rows.size(), 5u);
  EXPECT_NE(sa.table.find("interventional self-BLEU baseline"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(a.layout.reports() / "table.tsv"));
  const ExperimentSummary sb = b.open().run_experiment();
  EXPECT_EQ(sa.table, sb.table);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  for (const char* ck : {"causal", "cond-lm", "cond-lm-full"}) {
    EXPECT_EQ(slurp(a.layout.checkpoint(ck)), slurp(b.layout.checkpoint(ck))) << ck;
  }
  // Second run in place reuses every checkpoint.
  std::ostringstream progress;
  const ExperimentSummary again = Experiment(tiny_config(), a.layout, false, &progress).run_experiment();
  EXPECT_EQ(again.table, sa.table);
  EXPECT_NE(progress.str().find("reusing"), std::string::npos);
  EXPECT_EQ(progress.str().find("training causal"), std::string::npos);
}
