#include "causalgen/experiment.h"

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "causalgen/hashing.h"

namespace causalgen {

namespace fs = std::filesystem;

namespace {

constexpr const char* kAttrClassifier = "attr-classifier";
constexpr const char* kConfClassifier = "confounder-classifier";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ExperimentError("cannot write " + path.string());
  out << text;
}

nlohmann::json report_to_json(const ClassifierReport& r) {
  return {{"train_accuracy", r.train_accuracy},
          {"balanced_test_accuracy", r.balanced_test_accuracy},
          {"final_loss", r.final_loss},
          {"steps", r.steps}};
}

ClassifierReport report_from_json(const nlohmann::json& j) {
  ClassifierReport r;
  r.train_accuracy = j.at("train_accuracy").get<double>();
  r.balanced_test_accuracy = j.at("balanced_test_accuracy").get<double>();
  r.final_loss = j.at("final_loss").get<double>();
  r.steps = j.at("steps").get<long>();
  return r;
}

bool is_lm_kind(const std::string& kind) { return kind == "cond-lm" || kind == "cond-lm-full"; }

}  // namespace

fs::path ExperimentLayout::corpus(Split split) const {
  return corpora() / (std::string(split_name(split)) + ".jsonl");
}

void ExperimentLayout::create() const {
  for (const auto& d : {root, corpora(), checkpoints(), dumps(), reports(), logs()}) fs::create_directories(d);
}

std::string causal_checkpoint_name(const AblationFlags& ablation) {
  std::string suffix;
  if (ablation.no_cf_a) suffix += "-a";
  if (ablation.no_cf_z) suffix += "-z";
  if (ablation.no_cf_c) suffix += "-c";
  return suffix.empty() ? "causal" : "causal-no-cf" + suffix;
}

std::string sample_mode_name(SampleMode m) {
  return m == SampleMode::kInterventional ? "interventional" : "conditional";
}

SampleMode parse_sample_mode(const std::string& s) {
  if (s == "interventional") return SampleMode::kInterventional;
  if (s == "conditional") return SampleMode::kConditional;
  throw std::invalid_argument("unknown sample mode '" + s + "' (expected interventional or conditional)");
}

Experiment::Experiment(ExperimentConfig config, ExperimentLayout layout, bool force, std::ostream* progress)
    : config_(config.resolved()), hash_(config.hash()), layout_(std::move(layout)), force_(force), progress_(progress) {
  config.validate();
}

void Experiment::note(const std::string& message) const {
  if (progress_) *progress_ << message << std::endl;
}

void Experiment::write_snapshot() const {
  layout_.create();
  if (fs::exists(layout_.config_snapshot())) {
    const ExperimentConfig existing = load_config(layout_.config_snapshot().string());
    check_config_hash(layout_.config_snapshot().string(), existing.hash(), hash_, force_);
  }
  std::ostringstream cfg;
  cfg << "# config_hash = " << hash_ << '\n';
  write_config(cfg, config_);
  write_text(layout_.config_snapshot(), cfg.str());
  write_text(layout_.seed_registry(),
             "# config_hash = " + hash_ + '\n' + SeedRegistry::from_master(config_.seed).to_text());
}

std::vector<fs::path> Experiment::gen_data() const {
  std::vector<fs::path> outputs;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) outputs.push_back(layout_.corpus(s));
  outputs.push_back(layout_.vocabulary());
  if (!force_) {
    for (const auto& p : outputs) {
      if (fs::exists(p)) throw ExperimentError(p.string() + " already exists; pass --force to regenerate");
    }
  }
  write_snapshot();
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    Corpus c = generate_corpus(config_.corpus, s);
    c.config_hash = hash_;
    write_corpus(c, layout_.corpus(s));
    std::ostringstream msg;
    msg << "wrote " << layout_.corpus(s).string() << " (" << c.records.size()
        << " records, correlation " << std::setprecision(4) << empirical_correlation(c) << ")";
    note(msg.str());
  }
  Vocabulary(config_.corpus).write(layout_.vocabulary());
  return outputs;
}

Corpus Experiment::load_corpus(Split split) const {
  const fs::path p = layout_.corpus(split);
  if (!fs::exists(p)) {
    throw ExperimentError("missing corpus " + p.string() + "; run `causalgen gen-data --out " +
                          layout_.root.string() + "` first");
  }
  Corpus c = read_corpus(p);
  check_config_hash(p.string(), c.config_hash, hash_, force_);
  return c;
}

fs::path Experiment::resolve_checkpoint(const std::string& name_or_path) const {
  const fs::path direct(name_or_path);
  if (name_or_path.find('/') != std::string::npos || direct.extension() == ".ckpt") return direct;
  return layout_.checkpoint(name_or_path);
}

Checkpoint Experiment::load_artifact(const std::string& name_or_path) const {
  const fs::path p = resolve_checkpoint(name_or_path);
  if (!fs::exists(p)) {
    throw ExperimentError("missing checkpoint " + p.string() + "; run `causalgen train` first");
  }
  Checkpoint ckpt = load_checkpoint(p.string());
  check_config_hash(p.string(), ckpt.config_hash, hash_, force_);
  return ckpt;
}

SequenceClassifier Experiment::attribute_classifier(const Corpus& train, const Corpus& test,
                                                    ClassifierReport* report) const {
  const fs::path p = layout_.checkpoint(kAttrClassifier);
  if (fs::exists(p) && !force_) {
    Checkpoint ckpt = load_checkpoint(p.string());
    if (ckpt.config_hash == hash_) {
      note("reusing " + p.string());
      if (report) *report = report_from_json(ckpt.meta.at("report"));
      return unpack_classifier(ckpt);
    }
  }
  note("training attribute classifier f");
  ClassifierReport rep;
  SequenceClassifier f = pretrain_attribute_classifier(train, config_.model, config_.attr_classifier, &test, &rep);
  Checkpoint ckpt = pack_classifier(f, config_.model, "attr_clf", hash_);
  ckpt.meta["report"] = report_to_json(rep);
  save_checkpoint(p.string(), ckpt);
  std::ostringstream msg;
  msg << "f: train accuracy " << rep.train_accuracy << ", balanced test accuracy " << rep.balanced_test_accuracy;
  note(msg.str());
  if (report) *report = rep;
  return f;
}

TrainSummary Experiment::train(const TrainOptions& options) const {
  layout_.create();
  const Corpus train_set = load_corpus(Split::kTrain);
  TrainSummary summary;
  const SeedRegistry seeds = SeedRegistry::from_master(config_.seed);

  if (options.model == "causal") {
    AblationFlags abl = config_.train.ablation;
    abl.no_cf_a = abl.no_cf_a || options.ablation.no_cf_a;
    abl.no_cf_z = abl.no_cf_z || options.ablation.no_cf_z;
    abl.no_cf_c = abl.no_cf_c || options.ablation.no_cf_c;
    summary.name = options.name.empty() ? causal_checkpoint_name(abl) : options.name;
    const Corpus val = load_corpus(Split::kVal);
    const Corpus test = load_corpus(Split::kTest);
    ClassifierReport rep;
    const SequenceClassifier f = attribute_classifier(train_set, test, &rep);
    summary.attr_classifier = rep;

    TrainConfig tc = config_.train;
    tc.ablation = abl;
    note("training " + summary.name);
    std::ofstream log(layout_.training_log(summary.name), std::ios::binary | std::ios::trunc);
    CausalTrainResult result = train_causal_model(train_set, val, f, config_.model, tc, config_.loss, &log);
    summary.epochs = result.epochs;
    for (const auto& e : result.epochs) {
      std::ostringstream msg;
      msg << "  epoch " << e.epoch << ": val log p(x) " << e.val_recon_log_prob << ", val KL " << e.val_kl;
      note(msg.str());
    }
    CausalArtifact artifact{std::move(result.model), std::nullopt, abl, hash_};
    if (!options.skip_gan) {
      note("training latent GAN");
      const Matrix z = aggregate_posterior_means(artifact.model, train_set);
      GanTrainResult gan = train_latent_gan(z, config_.gan);
      summary.gan_holdout_accuracy = gan.history.holdout_disc_accuracy;
      artifact.gan = std::move(gan.gan);
    }
    Checkpoint ckpt = pack_causal(artifact);
    ckpt.meta["name"] = summary.name;
    summary.checkpoint = layout_.checkpoint(summary.name);
    save_checkpoint(summary.checkpoint.string(), ckpt);
  } else if (options.model == "cond-lm" || options.model == "cond-lm-full") {
    if (options.ablation.no_cf_a || options.ablation.no_cf_z || options.ablation.no_cf_c || options.skip_gan) {
      throw ExperimentError("ablation and GAN flags apply only to --model causal");
    }
    const LMVariant variant = options.model == "cond-lm" ? LMVariant::kPlain : LMVariant::kFull;
    summary.name = options.name.empty() ? options.model : options.name;
    std::optional<SequenceClassifier> clf;
    if (variant == LMVariant::kFull) {
      const bool has_proxy = std::any_of(train_set.records.begin(), train_set.records.end(),
                                         [](const Record& r) { return r.c.has_value(); });
      if (!has_proxy) {
        throw ExperimentError("cond-lm-full needs proxy labels but the training corpus has none");
      }
      note("training reweighted confounder classifier");
      std::vector<std::string> warnings;
      ClassifierConfig cc = config_.confounder_classifier;
      clf = train_reweighted_confounder_classifier(train_set, config_.model, cc, true, &warnings);
      for (const auto& w : warnings) note("warning: " + w);
      save_checkpoint(layout_.checkpoint(kConfClassifier).string(),
                      pack_classifier(*clf, config_.model, "cnf_clf", hash_));
    }
    TrainConfig tc = config_.train;
    tc.epochs = config_.lm_epochs;
    tc.seed = seeds.lm;
    note("training " + summary.name);
    std::ofstream log(layout_.training_log(summary.name), std::ios::binary | std::ios::trunc);
    LMTrainResult result =
        train_conditional_lm(train_set, variant, clf ? &*clf : nullptr, config_.model, tc, &log);
    summary.lm_epoch_loss = result.epoch_loss;
    Checkpoint ckpt = pack_conditional_lm({std::move(result.lm), hash_});
    ckpt.meta["name"] = summary.name;
    summary.checkpoint = layout_.checkpoint(summary.name);
    save_checkpoint(summary.checkpoint.string(), ckpt);
  } else {
    throw ExperimentError("unknown model '" + options.model + "' (expected causal, cond-lm or cond-lm-full)");
  }
  note("wrote " + summary.checkpoint.string());
  return summary;
}

fs::path Experiment::sample(const SampleOptions& options) const {
  layout_.create();
  const Checkpoint ckpt = load_artifact(options.checkpoint);
  const int n = options.n > 0 ? options.n : config_.eval.samples_per_class;
  const uint64_t seed = options.seed.value_or(SeedRegistry::from_master(config_.seed).sampling);
  const std::string name = ckpt.meta.value("name", fs::path(options.checkpoint).stem().string());

  GenerationDump dump;
  dump.kind = DumpKind::kConditionalGen;
  dump.source = name;
  dump.config_hash = hash_;
  const std::string mode = sample_mode_name(options.mode);
  for (int a : options.attributes) {
    if (a != 0 && a != 1) throw ExperimentError("attribute must be 0 or 1");
    const uint64_t s = derive_seed(seed, static_cast<uint64_t>(a));
    std::vector<Tokens> xs;
    if (options.mode == SampleMode::kInterventional) {
      if (ckpt.kind != "causal") {
        throw ExperimentError("interventional sampling needs a causal checkpoint, got " + ckpt.kind);
      }
      const CausalArtifact art = unpack_causal(ckpt);
      if (!art.gan) {
        throw ExperimentError("checkpoint " + name + " has no latent GAN (trained with --skip-gan); "
                              "interventional sampling is unavailable");
      }
      xs = sample_interventional(art.model, *art.gan, a, n, s, options.decode, config_.eval.max_decode);
    } else {
      if (!is_lm_kind(ckpt.kind)) {
        throw ExperimentError("conditional sampling needs a cond-lm checkpoint, got " + ckpt.kind);
      }
      const LMArtifact art = unpack_conditional_lm(ckpt);
      xs = sample_conditional(art.lm, a, n, s, options.decode, config_.eval.max_decode);
    }
    for (auto& x : xs) dump.entries.push_back({mode, a, std::nullopt, std::move(x), std::nullopt, ""});
  }
  const fs::path out = options.output.empty() ? layout_.dump(name + "-" + mode) : options.output;
  write_dump(out.string(), dump);
  note("wrote " + out.string() + " (" + std::to_string(dump.entries.size()) + " samples)");
  return out;
}

fs::path Experiment::transfer(const TransferOptions& options) const {
  layout_.create();
  const Checkpoint ckpt = load_artifact(options.checkpoint);
  if (ckpt.kind != "causal") throw ExperimentError("transfer needs a causal checkpoint, got " + ckpt.kind);
  const CausalArtifact art = unpack_causal(ckpt);
  const Corpus corpus = load_corpus(options.split);
  const DecodeMode mode = options.decode.value_or(config_.eval.transfer_mode);
  const uint64_t seed = options.seed.value_or(derive_seed(SeedRegistry::from_master(config_.seed).sampling, 0x7466));
  const std::vector<TransferResult> results = batch_transfer(art.model, corpus, mode, seed, config_.eval.max_decode);

  const std::string name = ckpt.meta.value("name", fs::path(options.checkpoint).stem().string());
  GenerationDump dump;
  dump.kind = DumpKind::kTransfer;
  dump.source = name;
  dump.config_hash = hash_;
  size_t failures = 0;
  for (const auto& r : results) {
    failures += !r.ok();
    dump.entries.push_back({"transfer", r.a_prime, r.a, r.x_prime, r.x, r.error});
  }
  const fs::path out = options.output.empty()
                           ? layout_.dump(name + "-transfer-" + std::string(split_name(options.split)))
                           : options.output;
  write_dump(out.string(), dump);
  note("wrote " + out.string() + " (" + std::to_string(results.size()) + " records, " + std::to_string(failures) +
       " failures)");
  return out;
}

const NgramLM& Experiment::reference_lm() const {
  if (!reference_lm_) {
    note("building reference trigram LM");
    NgramConfig nc;
    nc.alpha = config_.eval.ngram_alpha;
    reference_lm_ = std::make_unique<NgramLM>(train_reference_lm(
        config_.corpus, config_.eval.reference_records, SeedRegistry::from_master(config_.seed).reference_lm, nc));
  }
  return *reference_lm_;
}

MetricReport Experiment::eval(const EvalOptions& options) const {
  layout_.create();
  if (!fs::exists(options.dump)) throw ExperimentError("missing dump " + options.dump.string());
  const GenerationDump dump = read_dump(options.dump.string());
  check_config_hash(options.dump.string(), dump.config_hash, hash_, force_);
  MetricReport report = evaluate_generation(dump, Vocabulary(config_.corpus), reference_lm(),
                                            options.expected.value_or(dump.kind));
  report.label = options.label.empty() ? options.dump.stem().string() : options.label;
  write_text(layout_.reports() / (report.label + ".txt"),
             "config_hash: " + hash_ + "\ndump: " + options.dump.filename().string() + "\n" + report.to_text());
  write_text(layout_.reports() / (report.label + ".tsv"), MetricReport::tsv_header() + "\n" + report.to_tsv() + "\n");
  note("wrote " + (layout_.reports() / (report.label + ".txt")).string());
  return report;
}

ExperimentSummary Experiment::run_experiment() const {
  bool have_data = true;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) have_data = have_data && fs::exists(layout_.corpus(s));
  if (!have_data || force_) {
    gen_data();
  } else {
    write_snapshot();
  }

  const AblationFlags ablation{false, true, true};
  auto trained = [&](const std::string& name) {
    const fs::path p = layout_.checkpoint(name);
    if (force_ || !fs::exists(p)) return false;
    if (load_checkpoint(p.string()).config_hash != hash_) return false;
    note("reusing " + p.string());
    return true;
  };
  if (!trained("causal")) train({"causal", {}, false, "causal"});
  const std::string ablated = causal_checkpoint_name(ablation);
  if (!trained(ablated)) train({"causal", ablation, false, ablated});
  if (!trained("cond-lm")) train({"cond-lm", {}, false, ""});
  if (!trained("cond-lm-full")) train({"cond-lm-full", {}, false, ""});

  struct Job {
    std::string label;
    fs::path dump;
  };
  auto sample_job = [&](const std::string& name, SampleMode mode) {
    SampleOptions so;
    so.checkpoint = name;
    so.mode = mode;
    return Job{name, sample(so)};
  };
  std::vector<Job> jobs;
  jobs.push_back(sample_job("causal", SampleMode::kInterventional));
  jobs.push_back(sample_job(ablated, SampleMode::kInterventional));
  jobs.push_back(sample_job("cond-lm", SampleMode::kConditional));
  jobs.push_back(sample_job("cond-lm-full", SampleMode::kConditional));
  TransferOptions to;
  jobs.push_back({"causal-transfer", transfer(to)});

  ExperimentSummary summary;
  for (const auto& j : jobs) summary.rows.push_back({j.label, eval({j.dump, j.label, std::nullopt})});

  // Baseline for transfer preservation: pair test record k with the k-th
  // interventional sample of its flipped attribute.
  const Corpus test = load_corpus(Split::kTest);
  const GenerationDump interventional = read_dump(jobs[0].dump.string());
  std::vector<Tokens> by_attr[2];
  for (const auto& e : interventional.entries) by_attr[e.a].push_back(e.tokens);
  std::vector<Tokens> cands, refs;
  size_t used[2] = {0, 0};
  for (const auto& r : test.records) {
    const int flipped = 1 - r.a;
    const auto& pool = by_attr[flipped];
    if (pool.empty() || r.tokens.empty()) continue;
    const Tokens& cand = pool[used[flipped]++ % pool.size()];
    cands.push_back(cand);
    refs.push_back(r.tokens);
  }
  summary.interventional_self_bleu = mean_pair_bleu(cands, refs);

  std::ostringstream table;
  table << format_table(summary.rows);
  table << std::fixed << std::setprecision(4) << "interventional self-BLEU baseline: " << summary.interventional_self_bleu
        << '\n';
  summary.table = table.str();

  std::string tsv = MetricReport::tsv_header() + "\n";
  for (const auto& row : summary.rows) tsv += row.report.to_tsv() + "\n";
  tsv += "interventional-baseline";
  std::ostringstream base;
  base << std::setprecision(10) << summary.interventional_self_bleu;
  // Only the self-BLEU column is meaningful for the baseline row.
  const std::string header = MetricReport::tsv_header();
  const auto n_cols = static_cast<size_t>(std::count(header.begin(), header.end(), '\t'));
  for (size_t c = 1; c <= n_cols; ++c) tsv += c == 12 ? "\t" + base.str() : "\t-";
  tsv += "\n";
  write_text(layout_.reports() / "table.tsv", tsv);
  write_text(layout_.reports() / "table.txt", "config_hash: " + hash_ + "\n" + summary.table);
  note(summary.table);
  return summary;
}

ExperimentConfig load_experiment_config(const std::optional<fs::path>& config_path, const ExperimentLayout& layout) {
  if (config_path) return load_config(config_path->string());
  if (fs::exists(layout.config_snapshot())) return load_config(layout.config_snapshot().string());
  return ExperimentConfig{};
}

std::string format_table(const std::vector<ExperimentRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(22) << "model" << std::right << std::setw(10) << "control" << std::setw(10) << "bias"
      << std::setw(12) << "perplexity" << std::setw(12) << "distinct-2" << std::setw(11) << "self-BLEU"
      << std::setw(10) << "preserve" << '\n';
  out << std::fixed << std::setprecision(4);
  for (const auto& row : rows) {
    const MetricReport& r = row.report;
    out << std::left << std::setw(22) << row.label << std::right << std::setw(10) << r.control_accuracy
        << std::setw(10);
    if (r.bias) {
      out << *r.bias;
    } else {
      out << "-";
    }
    out << std::setw(12) << r.fluency_perplexity;
    auto d2 = r.distinct.find(2);
    if (d2 != r.distinct.end()) {
      out << std::setw(12) << d2->second;
    } else {
      out << std::setw(12) << "-";
    }
    if (r.self_bleu) {
      out << std::setw(11) << *r.self_bleu;
    } else {
      out << std::setw(11) << "-";
    }
    if (r.confounder_preservation) {
      out << std::setw(10) << *r.confounder_preservation;
    } else {
      out << std::setw(10) << "-";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace causalgen
