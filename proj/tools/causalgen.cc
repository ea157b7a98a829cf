#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "causalgen/experiment.h"
#include "causalgen/tabular_scm.h"

using namespace causalgen;

namespace {

struct Globals {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out = "run";
  bool force = false;
};

Experiment open(const Globals& g, const std::optional<double>& rho = std::nullopt) {
  ExperimentLayout layout{g.out};
  std::optional<std::filesystem::path> cfg_path;
  if (!g.config.empty()) cfg_path = g.config;
  ExperimentConfig cfg = load_experiment_config(cfg_path, layout);
  if (g.seed) cfg.seed = *g.seed;
  if (rho) cfg.corpus.correlation = *rho;
  return Experiment(cfg, layout, g.force, &std::cerr);
}

std::vector<int> parse_attributes(const std::string& s) {
  if (s == "both") return {0, 1};
  if (s == "0") return {0};
  if (s == "1") return {1};
  throw std::invalid_argument("--a must be 0, 1 or both");
}

int oracle_check(const Globals& g, int n, int max_k, int max_x, int max_c, const std::string& scm_path) {
  OracleCheckReport rep;
  if (!scm_path.empty()) {
    std::ifstream in(scm_path);
    if (!in) throw std::runtime_error("cannot open " + scm_path);
    try {
      rep = check_scm(read_scm(in));
    } catch (const std::exception& e) {
      rep.n_scms = 1;
      rep.failures.push_back(e.what());
    }
  } else {
    uint64_t seed = g.seed.value_or(1);
    if (!g.seed && !g.config.empty()) seed = load_config(g.config).seed;
    rep = run_oracle_check(n, max_k, max_x, max_c, seed);
  }
  std::cout << "scms checked: " << rep.n_scms << '\n'
            << "max identity error: " << rep.max_identity_error << '\n';
  if (scm_path.empty()) {
    std::cout << "max no-confounding collapse error: " << rep.max_collapse_error << '\n'
              << "confounded instance TV: " << rep.confounded_tv << '\n';
  }
  for (const auto& f : rep.failures) std::cout << "failure: " << f << '\n';
  std::cout << (rep.passed() ? "PASS" : "FAIL") << std::endl;
  return rep.passed() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal controllable generation on a synthetic biased corpus"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "flat key = value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed (overrides the config)");
  app.add_option("--out", g.out, "experiment directory")->capture_default_str();
  app.add_flag("--force", g.force, "overwrite files and accept config hash mismatches");

  auto* gen = app.add_subcommand("gen-data", "write train/val/test corpora and the vocabulary");
  std::optional<double> rho;
  gen->add_option("--rho", rho, "attribute/confounder correlation of the biased splits");

  auto* train = app.add_subcommand("train", "train a model and save a checkpoint");
  TrainOptions topt;
  train->add_option("--model", topt.model, "causal, cond-lm or cond-lm-full")
      ->check(CLI::IsMember({"causal", "cond-lm", "cond-lm-full"}))
      ->capture_default_str();
  train->add_flag("--no-cf-a", topt.ablation.no_cf_a, "drop the counterfactual attribute loss");
  train->add_flag("--no-cf-z", topt.ablation.no_cf_z, "drop the latent balancing loss");
  train->add_flag("--no-cf-c", topt.ablation.no_cf_c, "drop the proxy balancing loss");
  train->add_flag("--skip-gan", topt.skip_gan, "do not fit the latent GAN");
  train->add_option("--name", topt.name, "checkpoint name under checkpoints/");

  auto* sample = app.add_subcommand("sample", "generate sequences for fixed attributes");
  SampleOptions sopt;
  std::string smode = "interventional", sattr = "both", sdecode = "categorical", sdump;
  std::optional<uint64_t> sseed;
  sample->add_option("--checkpoint", sopt.checkpoint, "checkpoint name or path")->required();
  sample->add_option("--mode", smode, "interventional or conditional")->capture_default_str();
  sample->add_option("--a", sattr, "0, 1 or both")->capture_default_str();
  sample->add_option("--n", sopt.n, "samples per attribute (default eval.samples_per_class)");
  sample->add_option("--sample-seed", sseed, "sampling seed (default from the seed registry)");
  sample->add_option("--decode", sdecode, "categorical or greedy")->capture_default_str();
  sample->add_option("--dump", sdump, "output path");

  auto* transfer = app.add_subcommand("transfer", "counterfactual attribute transfer over a split");
  TransferOptions xopt;
  std::string xsplit = "test", xdecode, xdump;
  std::optional<uint64_t> xseed;
  transfer->add_option("--checkpoint", xopt.checkpoint, "causal checkpoint name or path")->capture_default_str();
  transfer->add_option("--split", xsplit, "train, val or test")->capture_default_str();
  transfer->add_option("--decode", xdecode, "greedy or categorical (default eval.transfer_mode)");
  transfer->add_option("--sample-seed", xseed, "noise seed for categorical decoding");
  transfer->add_option("--dump", xdump, "output path");

  auto* eval = app.add_subcommand("eval", "score generation dumps");
  std::vector<std::string> dumps;
  std::string label;
  eval->add_option("--dump", dumps, "dump file(s)")->required();
  eval->add_option("--label", label, "report name (single dump only)");

  auto* oracle = app.add_subcommand("oracle-check", "verify the tabular adjustment identities");
  int n_scms = 100, max_k = 5, max_x = 6, max_c = 3;
  std::string scm_path;
  oracle->add_option("--n-scms", n_scms)->capture_default_str();
  oracle->add_option("--max-k", max_k)->capture_default_str();
  oracle->add_option("--max-x", max_x)->capture_default_str();
  oracle->add_option("--max-c", max_c)->capture_default_str();
  oracle->add_option("--scm", scm_path, "check one SCM file instead of random instances");

  auto* run = app.add_subcommand("run-experiment", "full comparison: causal, ablation and both baselines");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*oracle) return oracle_check(g, n_scms, max_k, max_x, max_c, scm_path);
    if (*gen) {
      for (const auto& p : open(g, rho).gen_data()) std::cout << p.string() << '\n';
    } else if (*train) {
      std::cout << open(g).train(topt).checkpoint.string() << '\n';
    } else if (*sample) {
      sopt.mode = parse_sample_mode(smode);
      sopt.attributes = parse_attributes(sattr);
      sopt.decode = parse_decode_mode(sdecode);
      sopt.seed = sseed;
      sopt.output = sdump;
      std::cout << open(g).sample(sopt).string() << '\n';
    } else if (*transfer) {
      xopt.split = parse_split(xsplit);
      if (!xdecode.empty()) xopt.decode = parse_decode_mode(xdecode);
      xopt.seed = xseed;
      xopt.output = xdump;
      std::cout << open(g).transfer(xopt).string() << '\n';
    } else if (*eval) {
      if (!label.empty() && dumps.size() > 1) throw std::invalid_argument("--label needs a single --dump");
      Experiment ex = open(g);
      std::vector<ExperimentRow> rows;
      for (const auto& d : dumps) {
        MetricReport r = ex.eval({d, label, std::nullopt});
        rows.push_back({r.label, r});
      }
      if (rows.size() == 1) {
        std::cout << rows[0].report.to_text();
      } else {
        std::cout << format_table(rows);
      }
    } else if (*run) {
      std::cout << open(g).run_experiment().table;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
