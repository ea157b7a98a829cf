#include "causalgen/training.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace causalgen {

namespace {

constexpr uint64_t kShuffleStream = 0x73687566ULL;
constexpr uint64_t kNoiseStream = 0x6e6f6973ULL;

using Json = nlohmann::json;

Json breakdown_json(const LossBreakdown& b) {
  return Json{{"recon_x", b.recon_x}, {"recon_a", b.recon_a}, {"recon_c", b.recon_c}, {"kl", b.kl},
              {"cf_a", b.cf_a},       {"cf_z", b.cf_z},       {"cf_c", b.cf_c},       {"total", b.total},
              {"kl_raw", b.kl_raw}};
}

void write_line(std::ostream* log, const Json& j) {
  if (log) *log << j.dump() << '\n';
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.recon_x += b.recon_x;
  acc.recon_a += b.recon_a;
  acc.recon_c += b.recon_c;
  acc.kl += b.kl;
  acc.cf_a += b.cf_a;
  acc.cf_z += b.cf_z;
  acc.cf_c += b.cf_c;
  acc.total += b.total;
  acc.kl_raw += b.kl_raw;
}

LossBreakdown scaled(LossBreakdown b, double s) {
  b.recon_x *= s;
  b.recon_a *= s;
  b.recon_c *= s;
  b.kl *= s;
  b.cf_a *= s;
  b.cf_z *= s;
  b.cf_c *= s;
  b.total *= s;
  b.kl_raw *= s;
  return b;
}

long steps_per_epoch(size_t n, int batch) { return static_cast<long>((n + batch - 1) / batch); }

std::vector<Tokens> gather_tokens(const std::vector<Record>& records, std::span<const size_t> idx) {
  std::vector<Tokens> out;
  out.reserve(idx.size());
  for (size_t i : idx) out.push_back(records[i].tokens);
  return out;
}

// Weighted cross-entropy training shared by both classifiers.
SequenceClassifier train_classifier(const std::string& name, const std::vector<Record>& records,
                                    const std::vector<int>& labels, const std::vector<double>& weights,
                                    const ModelConfig& model, const ClassifierConfig& config, double* final_loss,
                                    long* steps_out) {
  config.validate();
  if (records.empty()) throw std::invalid_argument(name + ": no training records");
  SequenceClassifier clf(name, model.vocab_size, model.emb_dim, model.hidden_dim, config.seed);
  nn::AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  nn::AdamW opt(clf.parameters(), opt_cfg);

  long step = 0;
  double last = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto perm = epoch_permutation(records.size(), config.seed, epoch);
    for (size_t start = 0; start < perm.size(); start += config.batch_size) {
      if (config.max_steps > 0 && step >= config.max_steps) break;
      const size_t end = std::min(perm.size(), start + config.batch_size);
      std::span<const size_t> idx(perm.data() + start, end - start);
      std::vector<int> y;
      Matrix w(static_cast<Eigen::Index>(idx.size()), 1);
      for (size_t k = 0; k < idx.size(); ++k) {
        y.push_back(labels[idx[k]]);
        w(static_cast<Eigen::Index>(k), 0) = weights[idx[k]];
      }
      Tape tape;
      Var ll = SequenceClassifier::log_score(clf.logit(tape, gather_tokens(records, idx)), y);
      Var loss = -ad::mean_all(ad::mul_col(ll, tape.constant(w)));
      last = loss.scalar();
      if (!std::isfinite(last)) throw TrainingDiverged(name + ": non-finite classifier loss");
      tape.backward(loss);
      opt.step();
      ++step;
    }
  }
  if (final_loss) *final_loss = last;
  if (steps_out) *steps_out = step;
  return clf;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
  if (!(tau_start > 0 && tau_end > 0)) throw std::invalid_argument("gumbel temperatures must be > 0");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
  if (!(kl_ceiling > 0 && kl_ceiling <= 1)) throw std::invalid_argument("kl_ceiling must be in (0, 1]");
}

void ClassifierConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("classifier epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("classifier batch_size must be >= 1");
  if (!(learning_rate > 0)) throw std::invalid_argument("classifier learning_rate must be > 0");
  if (max_steps < 0) throw std::invalid_argument("classifier max_steps must be >= 0");
}

std::vector<size_t> epoch_permutation(size_t n, uint64_t seed, int epoch) {
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), size_t{0});
  Rng rng(derive_seed(seed, kShuffleStream, static_cast<uint64_t>(epoch)));
  rng.shuffle(perm.begin(), perm.end());
  return perm;
}

double classifier_accuracy(const SequenceClassifier& clf, std::span<const Record> records, bool confounder) {
  if (records.empty()) return 0.0;
  std::vector<Tokens> x;
  std::vector<int> y;
  for (const auto& r : records) {
    x.push_back(r.tokens);
    y.push_back(confounder ? r.c.value_or(r.u) : r.a);
  }
  const auto pred = clf.predict_all(x);
  size_t correct = 0;
  for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

SequenceClassifier pretrain_attribute_classifier(const Corpus& train, const ModelConfig& model,
                                                 const ClassifierConfig& config, const Corpus* balanced_test,
                                                 ClassifierReport* report) {
  std::vector<int> labels;
  for (const auto& r : train.records) labels.push_back(r.a);
  const std::vector<double> weights(train.records.size(), 1.0);
  ClassifierReport rep;
  SequenceClassifier f =
      train_classifier("attr_clf", train.records, labels, weights, model, config, &rep.final_loss, &rep.steps);
  if (report) {
    rep.train_accuracy = classifier_accuracy(f, train.records, false);
    if (balanced_test) rep.balanced_test_accuracy = classifier_accuracy(f, balanced_test->records, false);
    *report = rep;
  }
  return f;
}

std::vector<double> confounder_weights(std::span<const Record> records) {
  std::vector<double> w;
  w.reserve(records.size());
  for (const auto& r : records) {
    if (!r.c) throw std::invalid_argument("confounder_weights: record without proxy label");
    w.push_back(*r.c != r.a ? 0.9 : 0.1);
  }
  return w;
}

SequenceClassifier train_reweighted_confounder_classifier(const Corpus& train, const ModelConfig& model,
                                                          const ClassifierConfig& config, bool reweight,
                                                          std::vector<std::string>* warnings) {
  std::vector<Record> subset;
  for (const auto& r : train.records) {
    if (r.c) subset.push_back(r);
  }
  if (subset.empty()) throw std::invalid_argument("confounder classifier: corpus has no proxy-labeled records");
  std::vector<int> labels;
  size_t disagree = 0;
  for (const auto& r : subset) {
    labels.push_back(*r.c);
    disagree += *r.c != r.a;
  }
  if ((disagree == 0 || disagree == subset.size()) && warnings) {
    warnings->push_back("confounder classifier: every proxy-labeled record has the same attribute agreement; "
                        "weights are uniform");
  }
  std::vector<double> weights = reweight ? confounder_weights(subset) : std::vector<double>(subset.size(), 1.0);
  return train_classifier("cnf_clf", subset, labels, weights, model, config, nullptr, nullptr);
}

EpochSummary evaluate_causal_model(const CausalModel& model, const Corpus& corpus, int limit) {
  const size_t n = limit > 0 ? std::min(corpus.records.size(), static_cast<size_t>(limit)) : corpus.records.size();
  EpochSummary s;
  if (n == 0) return s;
  constexpr size_t kBatch = 256;
  double recon = 0, kl = 0;
  for (size_t start = 0; start < n; start += kBatch) {
    const size_t end = std::min(n, start + kBatch);
    Batch b = make_batch(std::span(corpus.records).subspan(start, end - start));
    Tape tape(false);
    GaussianParams q = model.posterior(tape, b.x, b.a, b.proxy_indices());
    recon += model.sequence_log_prob(tape, b.x, b.a, q.mean).value().sum();
    kl += kl_gaussian(q.mean, q.logvar).value().sum();
  }
  s.val_recon_log_prob = recon / static_cast<double>(n);
  s.val_kl = kl / static_cast<double>(n);
  return s;
}

CausalTrainResult train_causal_model(const Corpus& train, const Corpus& val, const SequenceClassifier& f,
                                     const ModelConfig& model_config, const TrainConfig& config,
                                     const LossWeights& weights, std::ostream* log) {
  config.validate();
  weights.validate();
  model_config.validate();
  if (train.records.empty()) throw std::invalid_argument("train_causal_model: empty training corpus");

  CausalTrainResult result{CausalModel(model_config), {}, 0};
  CausalModel& model = result.model;

  SequenceClassifier frozen = f;
  nn::set_trainable(frozen.parameters(), false);

  nn::AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  opt_cfg.weight_decay = config.weight_decay;
  nn::AdamW opt(model.parameters(), opt_cfg);

  const long per_epoch = steps_per_epoch(train.records.size(), config.batch_size);
  KLSchedule kl_schedule{config.kl_cycles, config.kl_ramp_fraction, std::max(1L, per_epoch * config.epochs)};

  LossSettings settings;
  settings.weights = weights;
  settings.ablation = config.ablation;
  settings.soft_steps = train.spec.max_len + 1;

  EpochSummary initial = evaluate_causal_model(model, val, config.val_limit);
  result.epochs.push_back(initial);
  write_line(log, Json{{"epoch", 0}, {"val_recon_log_prob", initial.val_recon_log_prob}, {"val_kl", initial.val_kl}});

  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto perm = epoch_permutation(train.records.size(), config.seed, epoch);
    LossBreakdown epoch_sum;
    long epoch_steps = 0;
    for (size_t start = 0; start < perm.size(); start += config.batch_size, ++step, ++epoch_steps) {
      const size_t end = std::min(perm.size(), start + config.batch_size);
      Batch batch;
      std::vector<uint64_t> seeds;
      for (size_t k = start; k < end; ++k) {
        const Record& r = train.records[perm[k]];
        batch.x.push_back(r.tokens);
        batch.a.push_back(r.a);
        batch.c.push_back(r.c);
        seeds.push_back(derive_seed(config.seed, kNoiseStream + static_cast<uint64_t>(step), perm[k]));
      }
      settings.kl_weight = config.kl_ceiling * kl_cyclic_weight(step, kl_schedule);
      settings.tau = gumbel_temperature(step, kl_schedule.total_steps, config.tau_start, config.tau_end);

      Tape tape;
      TotalLoss loss = total_loss(tape, model, frozen, batch, settings, seeds);
      const std::string bad = loss.breakdown.first_nonfinite();
      if (!bad.empty()) {
        throw TrainingDiverged("training diverged at step " + std::to_string(step) + ": first non-finite term is " +
                               bad);
      }
      tape.backward(loss.value);
      opt.step();
      accumulate(epoch_sum, loss.breakdown);

      if (step % config.log_every == 0) {
        Json j = breakdown_json(loss.breakdown);
        j["step"] = step;
        j["epoch"] = epoch;
        j["kl_weight"] = settings.kl_weight;
        j["tau"] = settings.tau;
        write_line(log, j);
      }
    }
    EpochSummary s = evaluate_causal_model(model, val, config.val_limit);
    s.epoch = epoch;
    s.mean_train = scaled(epoch_sum, 1.0 / static_cast<double>(std::max(1L, epoch_steps)));
    result.epochs.push_back(s);
    Json j{{"epoch", epoch}, {"val_recon_log_prob", s.val_recon_log_prob}, {"val_kl", s.val_kl}};
    j["mean_train"] = breakdown_json(s.mean_train);
    write_line(log, j);
  }
  result.steps = step;
  return result;
}

std::string variant_name(LMVariant v) { return v == LMVariant::kPlain ? "plain" : "full"; }

LMVariant parse_variant(const std::string& s) {
  if (s == "plain") return LMVariant::kPlain;
  if (s == "full") return LMVariant::kFull;
  throw std::invalid_argument("unknown conditional LM variant: " + s);
}

ConditionalLM::ConditionalLM(LMVariant variant, const ModelConfig& config) : variant_(variant), config_(config) {
  config.validate();
  Rng rng(derive_seed(config.seed, 4));
  const int cond = variant == LMVariant::kPlain ? config.a_dim : 2 * config.a_dim;
  decoder_ = Decoder(variant == LMVariant::kPlain ? "lm" : "lmfull", config.vocab_size, cond, config.emb_dim,
                     config.hidden_dim, rng);
}

Var ConditionalLM::condition(Tape& tape, std::span<const int> a, std::span<const int> c) const {
  Var av = tape.constant(attribute_matrix(a, config_.a_dim));
  if (variant_ == LMVariant::kPlain) return av;
  if (c.size() != a.size()) throw std::invalid_argument("full conditional LM needs one confounder label per row");
  const Var parts[] = {av, tape.constant(attribute_matrix(c, config_.a_dim))};
  return ad::concat_cols(parts);
}

Var ConditionalLM::log_prob(Tape& tape, std::span<const Tokens> x, std::span<const int> a,
                            std::span<const int> c) const {
  return decoder_.log_prob(tape, condition(tape, a, c), x);
}

nn::ParameterRefs ConditionalLM::parameters() const {
  nn::ParameterRefs out;
  decoder_.collect(out);
  return out;
}

std::vector<int> impute_confounders(const Corpus& corpus, const SequenceClassifier& classifier) {
  std::vector<Tokens> missing;
  for (const auto& r : corpus.records) {
    if (!r.c) missing.push_back(r.tokens);
  }
  const auto predicted = classifier.predict_all(missing);
  std::vector<int> out;
  out.reserve(corpus.records.size());
  size_t k = 0;
  for (const auto& r : corpus.records) out.push_back(r.c ? *r.c : predicted[k++]);
  return out;
}

LMTrainResult train_conditional_lm(const Corpus& train, LMVariant variant,
                                   const SequenceClassifier* confounder_classifier, const ModelConfig& model,
                                   const TrainConfig& config, std::ostream* log) {
  config.validate();
  if (train.records.empty()) throw std::invalid_argument("train_conditional_lm: empty training corpus");
  LMTrainResult result{ConditionalLM(variant, model), {}, 0.0};

  std::vector<int> c_labels;
  if (variant == LMVariant::kFull) {
    if (!confounder_classifier) {
      throw std::invalid_argument("full conditional LM requires a confounder classifier to impute labels");
    }
    c_labels = impute_confounders(train, *confounder_classifier);
    result.imputed_coverage = 1.0;
    std::vector<double> p(2, 0.0), n(2, 0.0);
    for (size_t i = 0; i < c_labels.size(); ++i) {
      n[train.records[i].a] += 1;
      p[train.records[i].a] += c_labels[i];
    }
    for (int a = 0; a < 2; ++a) p[a] = n[a] > 0 ? p[a] / n[a] : 0.5;
    result.lm.set_confounder_given_attribute(p);
  } else {
    c_labels.assign(train.records.size(), 0);
  }

  auto mean_nll = [&]() {
    double total = 0;
    constexpr size_t kBatch = 256;
    for (size_t start = 0; start < train.records.size(); start += kBatch) {
      const size_t end = std::min(train.records.size(), start + kBatch);
      std::vector<Tokens> x;
      std::vector<int> a;
      for (size_t i = start; i < end; ++i) {
        x.push_back(train.records[i].tokens);
        a.push_back(train.records[i].a);
      }
      Tape tape(false);
      total -= result.lm.log_prob(tape, x, a, std::span(c_labels).subspan(start, end - start)).value().sum();
    }
    return total / static_cast<double>(train.records.size());
  };

  nn::AdamWConfig opt_cfg;
  opt_cfg.learning_rate = config.learning_rate;
  opt_cfg.weight_decay = config.weight_decay;
  nn::AdamW opt(result.lm.parameters(), opt_cfg);

  result.epoch_loss.push_back(mean_nll());
  write_line(log, Json{{"epoch", 0}, {"nll", result.epoch_loss.back()}});
  long step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto perm = epoch_permutation(train.records.size(), config.seed, epoch);
    double epoch_sum = 0;
    long epoch_steps = 0;
    for (size_t start = 0; start < perm.size(); start += config.batch_size, ++step, ++epoch_steps) {
      const size_t end = std::min(perm.size(), start + config.batch_size);
      std::vector<Tokens> x;
      std::vector<int> a, c;
      for (size_t k = start; k < end; ++k) {
        x.push_back(train.records[perm[k]].tokens);
        a.push_back(train.records[perm[k]].a);
        c.push_back(c_labels[perm[k]]);
      }
      Tape tape;
      Var loss = -ad::mean_all(result.lm.log_prob(tape, x, a, c));
      if (!std::isfinite(loss.scalar())) {
        throw TrainingDiverged("conditional LM diverged at step " + std::to_string(step));
      }
      tape.backward(loss);
      opt.step();
      epoch_sum += loss.scalar();
      if (step % config.log_every == 0) {
        write_line(log, Json{{"step", step}, {"epoch", epoch}, {"nll", loss.scalar()}});
      }
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(std::max(1L, epoch_steps)));
    write_line(log, Json{{"epoch", epoch}, {"mean_train_nll", result.epoch_loss.back()}});
  }
  return result;
}

}  // namespace causalgen
