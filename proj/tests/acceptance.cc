// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "causalgen/experiment.h"
#include "causalgen/latent_gan.h"
#include "causalgen/objectives.h"
#include "causalgen/tabular_scm.h"
#include "test_support.h"

using namespace causalgen;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v, int precision = 4) {
  std::ostringstream o;
  o << std::setprecision(precision) << v;
  return o.str();
}

Verdict criterion1() {
  Stopwatch w;
  const OracleCheckReport r = run_oracle_check(100, 5, 6, 3, 1);
  const double t = w.seconds();
  return {r.n_scms == 100 && r.max_identity_error < 1e-10 && t < 5.0,
          "max identity error " + num(r.max_identity_error) + " over " + std::to_string(r.n_scms) + " SCMs, " +
              num(t, 3) + " s"};
}

Verdict criterion2() {
  Stopwatch w;
  double collapse = 0;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const TabularSCM s = with_constant_propensity(random_scm(1 + static_cast<int>(seed % 5), 6, 3, seed), 0.3);
    for (int a = 0; a < 2; ++a) {
      collapse = std::max(collapse, max_abs_difference(conditional_x_given_a(s, a), interventional_x_do_a(s, a)));
    }
  }
  const TabularSCM conf = confounded_instance();
  double tv = 1.0;
  for (int a = 0; a < 2; ++a) {
    tv = std::min(tv, total_variation(conditional_x_given_a(conf, a), interventional_x_do_a(conf, a)));
  }
  const double t = w.seconds();
  return {collapse < 1e-12 && tv > 0.05 && t < 1.0,
          "collapse error " + num(collapse) + ", confounded TV " + num(tv) + ", " + num(t, 3) + " s"};
}

Verdict criterion3() {
  Stopwatch w;
  std::vector<std::pair<std::string, fixtures::GradCheck>> checks;
  const ModelConfig mc = fixtures::toy_model();

  {
    ad::Parameter m("mean", Matrix::Random(3, 4)), l("logvar", Matrix::Random(3, 4));
    checks.emplace_back("kl_gaussian", fixtures::check_gradients({&m, &l}, [&](ad::Tape& t) {
                          return ad::sum_all(kl_gaussian(t.param(m), t.param(l)));
                        }));
  }
  {
    CausalModel model(mc);
    ad::Parameter z("z", Matrix::Random(3, 4));
    const std::vector<Tokens> x{{2, 6, 8}, {4, 7, 9, 11}, {3, 10, 6, 5, 8}};
    const std::vector<int> a{0, 1, 1};
    nn::ParameterRefs params = model.generative_parameters();
    params.push_back(&z);
    checks.emplace_back("sequence_log_prob", fixtures::check_gradients(params, [&](ad::Tape& t) {
                          return ad::sum_all(model.sequence_log_prob(t, x, a, t.param(z)));
                        }));
  }
  {
    ad::Parameter zp("z_prime", Matrix::Random(2, 4));
    const Matrix target = Matrix::Random(2, 4);
    checks.emplace_back("z_match_distance", fixtures::check_gradients({&zp}, [&](ad::Tape& t) {
                          return ad::sum_all(z_match_distance(target, t.param(zp)));
                        }));
  }
  SequenceClassifier f("f", mc.vocab_size, 3, 4, 23);
  nn::set_trainable(f.parameters(), false);
  const std::vector<uint64_t> seeds{derive_seed(99, 0), derive_seed(99, 1)};
  {
    CausalModel model(mc);
    ad::Parameter z("z", Matrix::Random(2, 4));
    const std::vector<int> a_prime{1, 0};
    nn::ParameterRefs params = model.generative_parameters();
    params.push_back(&z);
    checks.emplace_back("cf_attribute_loss", fixtures::check_gradients(params, [&](ad::Tape& t) {
                          GumbelStream noise(seeds, mc.vocab_size);
                          return ad::sum_all(cf_attribute_loss(t, model, f, a_prime, t.param(z), 0.8, noise, 4).loss);
                        }));
  }
  {
    CausalModel model(mc);
    Batch b;
    b.x = {{2, 6, 8}, {4, 7, 9, 11}};
    b.a = {0, 1};
    b.c = {std::nullopt, 1};
    LossSettings s;
    s.kl_weight = 0.4;
    s.tau = 0.8;
    s.soft_steps = 4;
    auto full = [&](const LossSettings& ls) {
      return [&, ls](ad::Tape& t) { return total_loss(t, model, f, b, ls, seeds).value; };
    };
    // The z-match target is a stop-gradient copy of the posterior mean, so a
    // finite difference over the inference network also moves the target.
    // Every group is covered by: generative weights on the full loss, all
    // weights with cf_z off, and cf_z with its target held fixed.
    checks.emplace_back("total_loss[generative]", fixtures::check_gradients(model.generative_parameters(), full(s)));
    LossSettings no_z = s;
    no_z.ablation.no_cf_z = true;
    checks.emplace_back("total_loss[all, cf_z off]", fixtures::check_gradients(model.parameters(), full(no_z)));
    ad::Parameter x0("x_soft0", Matrix::Random(2, mc.vocab_size)), x1("x_soft1", Matrix::Random(2, mc.vocab_size));
    const Matrix target = Matrix::Random(2, 4);
    const std::vector<int> a_prime = b.flipped(), c_index{2, 1};
    nn::ParameterRefs params = model.posterior_parameters();
    params.push_back(&x0);
    params.push_back(&x1);
    checks.emplace_back("total_loss[cf_z, fixed target]", fixtures::check_gradients(params, [&](ad::Tape& t) {
                          std::vector<ad::Var> rows{ad::softmax_rows(t.param(x0)), ad::softmax_rows(t.param(x1))};
                          return ad::sum_all(cf_z_loss(t, model, rows, a_prime, c_index, target).loss);
                        }));
  }

  const double t = w.seconds();
  bool pass = t < 30.0;
  std::string detail;
  for (const auto& [name, r] : checks) {
    pass = pass && r.worst_relative_error < 1e-4;
    detail += name + " " + num(r.worst_relative_error, 2) + "; ";
  }
  return {pass, detail + num(t, 3) + " s"};
}

Verdict criterion4() {
  Eigen::VectorXd one(1), zero1(1);
  one << 1;
  zero1 << 0;
  const double kl = kl_gaussian(one, zero1);
  Eigen::VectorXd t(2), z(2);
  t << 0, 2;
  z << 0, 0;
  const double zm = z_match_distance(t, z);
  ad::Tape tape(false);
  const Matrix g = gumbel_softmax(tape.constant(Matrix::Zero(1, 2)), 1.0, Matrix::Zero(1, 2)).value();
  const std::vector<std::vector<std::string>> ab{split_words("a b"), split_words("a b")};
  const double d2 = distinct_n<std::string>(ab, 2);
  const std::vector<std::string> x = split_words("the quick brown fox jumps");
  const double b = bleu(x, std::vector<std::vector<std::string>>{x});
  const bool pass = std::abs(kl - 0.5) <= 1e-12 && std::abs(zm - std::log(2.0)) <= 1e-9 &&
                    std::abs(g(0, 0) - 0.5) <= 1e-9 && std::abs(g(0, 1) - 0.5) <= 1e-9 && d2 == 0.5 && b == 1.0;
  return {pass, "kl " + num(kl, 15) + ", z_match " + num(zm, 12) + ", gumbel [" + num(g(0, 0), 12) + ", " +
                    num(g(0, 1), 12) + "], distinct-2 " + num(d2) + ", bleu " + num(b)};
}

Verdict criterion5() {
  Stopwatch w;
  CorpusSpec spec;
  spec.correlation = 0.9;
  spec.n_train = 100000;
  const Corpus c = generate_corpus(spec, Split::kTrain);
  const Vocabulary v(spec);
  size_t attr_errors = 0, conf_errors = 0;
  for (const auto& r : c.records) {
    try {
      attr_errors += oracle_attribute(r.tokens, v) != r.a;
    } catch (const OracleTie&) {
      ++attr_errors;
    }
    try {
      conf_errors += oracle_confounder(r.tokens, v) != r.u;
    } catch (const OracleTie&) {
      ++conf_errors;
    }
  }
  const double rho = empirical_correlation(c);
  const double sigma = std::sqrt(0.9 * 0.1 / static_cast<double>(c.records.size()));
  const double t = w.seconds();
  return {attr_errors == 0 && conf_errors == 0 && std::abs(rho - 0.9) <= 3 * sigma && t < 30.0,
          "attribute errors " + std::to_string(attr_errors) + ", confounder errors " + std::to_string(conf_errors) +
              ", correlation " + num(rho, 5) + " (3 sigma " + num(3 * sigma, 3) + "), " + num(t, 3) + " s"};
}

struct PipelineResult {
  ExperimentSummary summary;
  double seconds = 0;
};

const ExperimentRow& row(const ExperimentSummary& s, const std::string& label) {
  for (const auto& r : s.rows) {
    if (r.label == label) return r;
  }
  throw std::runtime_error("missing row " + label);
}

Verdict criterion6(const PipelineResult& p) {
  const auto& s = p.summary;
  const MetricReport& causal = row(s, "causal").report;
  const MetricReport& lm = row(s, "cond-lm").report;
  const MetricReport& ablated = row(s, causal_checkpoint_name({false, true, true})).report;
  if (!causal.bias || !lm.bias || !ablated.bias) return {false, "bias undefined for a model"};
  const double dc = std::abs(*causal.bias - 0.5), dl = std::abs(*lm.bias - 0.5), da = std::abs(*ablated.bias - 0.5);
  const bool a = causal.control_accuracy >= lm.control_accuracy + 0.05;
  const bool b = dc <= dl - 0.05;
  const bool c = da > dc;
  return {a && b && c, std::string("(a) ") + (a ? "ok" : "no") + " control " + num(causal.control_accuracy) +
                           " vs cond-lm " + num(lm.control_accuracy) + "; (b) " + (b ? "ok" : "no") + " bias " +
                           num(*causal.bias) + " vs cond-lm " + num(*lm.bias) + "; (c) " + (c ? "ok" : "no") +
                           " ablation bias " + num(*ablated.bias) + "; pipeline " + num(p.seconds / 60, 3) + " min"};
}

Verdict criterion7(const PipelineResult& p) {
  const MetricReport& t = row(p.summary, "causal-transfer").report;
  const double preserve = t.confounder_preservation.value_or(0.0);
  const double self = t.self_bleu.value_or(0.0);
  const bool pass =
      t.control_accuracy >= 0.7 && preserve >= 0.6 && self > p.summary.interventional_self_bleu;
  return {pass, "flip rate " + num(t.control_accuracy) + ", confounder preservation " + num(preserve) +
                    ", self-BLEU " + num(self) + " vs interventional baseline " +
                    num(p.summary.interventional_self_bleu)};
}

Verdict criterion8(const Experiment& ex) {
  const CausalArtifact art = unpack_causal(ex.load_artifact("causal"));
  if (!art.gan) return {false, "causal checkpoint has no GAN"};
  const ColumnMoments post = column_moments(aggregate_posterior_means(art.model, ex.load_corpus(Split::kTrain)));
  const ColumnMoments gen = column_moments(sample_z(*art.gan, 10000, 12345));
  double worst_mean = 0, worst_std = 0;
  for (Eigen::Index j = 0; j < post.mean.size(); ++j) {
    worst_mean = std::max(worst_mean, std::abs(gen.mean(j) - post.mean(j)));
    worst_std = std::max(worst_std, std::abs(gen.stddev(j) / post.stddev(j) - 1.0));
  }
  return {worst_mean <= 0.2 && worst_std <= 0.3,
          "max |mean diff| " + num(worst_mean) + ", max relative std diff " + num(worst_std)};
}

ExperimentConfig reduced_config() {
  ExperimentConfig c;
  c.corpus.n_train = 2000;
  c.corpus.n_val = 200;
  c.corpus.n_test = 200;
  c.train.epochs = 2;
  c.lm_epochs = 2;
  c.confounder_classifier.epochs = 2;
  c.gan.steps = 500;
  c.eval.samples_per_class = 200;
  c.eval.reference_records = 20000;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Verdict criterion9(const fs::path& work) {
  const fs::path a = work / "repro-a", b = work / "repro-b";
  fs::remove_all(a);
  fs::remove_all(b);
  Experiment(reduced_config(), ExperimentLayout{a}, false).run_experiment();
  Experiment(reduced_config(), ExperimentLayout{b}, false).run_experiment();
  size_t compared = 0;
  std::vector<std::string> differing;
  for (const char* sub : {"corpora", "dumps", "reports", "checkpoints"}) {
    std::set<fs::path> names;
    for (const auto& root : {a, b}) {
      for (const auto& e : fs::directory_iterator(root / sub)) names.insert(e.path().filename());
    }
    for (const auto& n : names) {
      ++compared;
      if (!fs::exists(a / sub / n) || !fs::exists(b / sub / n) || slurp(a / sub / n) != slurp(b / sub / n)) {
        differing.push_back(std::string(sub) + "/" + n.string());
      }
    }
  }
  std::string detail = std::to_string(compared) + " files compared (reduced config)";
  for (const auto& d : differing) detail += "; differs: " + d;
  return {compared > 0 && differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "directory for pipeline artifacts")->capture_default_str();
  app.add_option("--only", only, "criteria to run (default all)");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int n) { return selected.empty() || selected.count(n); };
  fs::create_directories(work);

  int failures = 0;
  auto report = [&](int n, const std::function<Verdict()>& run) {
    if (!want(n)) return;
    Verdict v;
    try {
      v = run();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail << std::endl;
  };

  report(1, criterion1);
  report(2, criterion2);
  report(3, criterion3);
  report(4, criterion4);
  report(5, criterion5);

  if (want(6) || want(7) || want(8)) {
    const Experiment ex(ExperimentConfig{}, ExperimentLayout{fs::path(work) / "default"}, false, &std::cerr);
    std::optional<PipelineResult> pipeline;
    std::string error;
    try {
      Stopwatch w;
      pipeline = PipelineResult{ex.run_experiment(), 0};
      pipeline->seconds = w.seconds();
      std::cout << pipeline->summary.table << std::flush;
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto needs_pipeline = [&](auto fn) {
      return [&, fn] {
        if (!pipeline) return Verdict{false, "pipeline failed: " + error};
        return fn(*pipeline);
      };
    };
    report(6, needs_pipeline(criterion6));
    report(7, needs_pipeline(criterion7));
    report(8, [&] { return criterion8(ex); });
  }
  report(9, [&] { return criterion9(work); });
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures;
}
