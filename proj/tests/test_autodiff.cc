#include <gtest/gtest.h>

#include "causalgen/autodiff.h"
#include "causalgen/nn.h"
#include "test_support.h"

using namespace causalgen;
using ad::Matrix;
using ad::Parameter;
using ad::Tape;
using ad::Var;

namespace {

Parameter random_param(const std::string& name, int r, int c, uint64_t seed) {
  Rng rng(seed);
  return Parameter(name, nn::uniform_matrix(r, c, 1.0, rng));
}

void expect_grad_ok(const nn::ParameterRefs& params, const std::function<Var(Tape&)>& f) {
  const auto res = fixtures::check_gradients(params, f);
  EXPECT_LT(res.worst_relative_error, 1e-6) << res.worst_group;
}

}  // namespace

TEST(Autodiff, ElementwiseOpsMatchFiniteDifferences) {
  Parameter a = random_param("a", 3, 4, 1);
  Parameter b = random_param("b", 3, 4, 2);
  expect_grad_ok({&a, &b}, [&](Tape& t) {
    Var x = t.param(a), y = t.param(b);
    Var e = ad::tanh(x) * ad::sigmoid(y) + ad::exp(ad::scale(x, 0.3)) - ad::square(y);
    Var f = ad::log_sigmoid(x - y) + ad::log(ad::add_scalar(ad::square(x), 1.0)) + ad::one_minus(-y);
    return ad::sum_all(e * f);
  });
}

TEST(Autodiff, MatmulBroadcastAndReductions) {
  Parameter x = random_param("x", 4, 3, 3);
  Parameter w = random_param("w", 3, 5, 4);
  Parameter b = random_param("b", 1, 5, 5);
  Parameter s = random_param("s", 4, 1, 6);
  expect_grad_ok({&x, &w, &b, &s}, [&](Tape& t) {
    Var h = ad::add_row(ad::matmul(t.param(x), t.param(w)), t.param(b));
    Var m = ad::mul_col(h, t.param(s));
    return ad::mean_all(ad::square(ad::sum_cols(m)) + ad::mean_cols(m));
  });
}

TEST(Autodiff, SoftmaxPickSliceConcatGather) {
  Parameter x = random_param("x", 3, 6, 7);
  Parameter table = random_param("table", 5, 2, 8);
  const std::vector<int> idx{5, 0, 3};
  const std::vector<int> rows{4, 4, 1};
  expect_grad_ok({&x, &table}, [&](Tape& t) {
    Var v = t.param(x);
    Var lp = ad::pick(ad::log_softmax_rows(v), idx);
    Var sm = ad::softmax_rows(ad::slice_cols(v, 1, 3));
    Var g = ad::gather_rows(t.param(table), rows);
    const Var parts[] = {sm, g, ad::col(v, 2)};
    Var cat = ad::concat_cols(parts);
    return ad::sum_all(lp) + ad::sum_all(ad::square(cat));
  });
}

TEST(Autodiff, StopGradientBlocksFlow) {
  Parameter x = random_param("x", 2, 2, 9);
  Tape t;
  Var v = t.param(x);
  Var l = ad::sum_all(ad::stop_gradient(v) * v);
  t.backward(l);
  // d/dx sum(c * x) with c = x held constant is x itself.
  EXPECT_TRUE(x.grad.isApprox(x.value, 1e-12));
}

TEST(Autodiff, LogSigmoidIsStableForLargeInputs) {
  Tape t(false);
  Matrix m(1, 3);
  m << -800.0, 0.0, 800.0;
  const Matrix out = ad::log_sigmoid(t.constant(m)).value();
  EXPECT_DOUBLE_EQ(out(0, 0), -800.0);
  EXPECT_NEAR(out(0, 1), -std::log(2.0), 1e-15);
  EXPECT_EQ(out(0, 2), 0.0);
}

TEST(Autodiff, BackwardRequiresScalarRoot) {
  Tape t;
  Var v = t.constant(Matrix::Ones(2, 2));
  EXPECT_THROW(t.backward(v), std::invalid_argument);
}

TEST(Autodiff, FrozenParameterGetsNoGradient) {
  Parameter x = random_param("x", 2, 2, 10);
  x.trainable = false;
  Tape t;
  t.backward(ad::sum_all(ad::square(t.param(x))));
  EXPECT_EQ(x.grad.norm(), 0.0);
}

TEST(NN, GruEmbeddingAndLinearGradients) {
  Rng rng(11);
  nn::Embedding emb("emb", 6, 3, rng);
  nn::GRUCell gru("gru", 3, 4, rng);
  nn::Linear out("out", 4, 2, rng);
  nn::ParameterRefs params;
  emb.collect(params);
  gru.collect(params);
  out.collect(params);
  Matrix probs = Matrix::Constant(2, 6, 1.0 / 6);
  probs(1, 2) += 0.3;
  probs(1, 4) -= 0.3;
  Matrix mask(2, 1);
  mask << 1.0, 0.25;
  const std::vector<int> ids{1, 5};
  expect_grad_ok(params, [&](Tape& t) {
    Var h = t.constant(Matrix::Zero(2, 4));
    h = gru.step(t, emb.lookup(t, ids), h);
    h = gru.masked_step(t, emb.soft(t, t.constant(probs)), h, t.constant(mask));
    return ad::sum_all(ad::square(out(t, h)));
  });
}

TEST(NN, MaskedStepKeepsStateWhereMaskIsZero) {
  Rng rng(12);
  nn::GRUCell gru("gru", 2, 3, rng);
  Tape t(false);
  Var h = t.constant(Matrix::Random(2, 3));
  Var x = t.constant(Matrix::Random(2, 2));
  Matrix mask(2, 1);
  mask << 0.0, 1.0;
  const Matrix kept = gru.masked_step(t, x, h, t.constant(mask)).value();
  const Matrix full = gru.step(t, x, h).value();
  EXPECT_TRUE(kept.row(0).isApprox(h.value().row(0)));
  EXPECT_TRUE(kept.row(1).isApprox(full.row(1)));
}

TEST(NN, AdamWDecreasesQuadraticAndDecaysWeights) {
  Parameter w("w", Matrix::Constant(2, 2, 3.0));
  nn::AdamWConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.0;
  nn::AdamW opt({&w}, cfg);
  double first = 0;
  for (int i = 0; i < 50; ++i) {
    Tape t;
    Var l = ad::sum_all(ad::square(t.param(w)));
    if (i == 0) first = l.scalar();
    t.backward(l);
    opt.step();
  }
  EXPECT_LT(w.value.squaredNorm(), first * 0.5);

  // Zero gradient: only the decoupled decay moves the weights.
  Parameter d("d", Matrix::Constant(2, 2, 1.0));
  nn::AdamWConfig dc;
  dc.learning_rate = 0.1;
  dc.weight_decay = 0.5;
  nn::AdamW decay({&d}, dc);
  decay.step();
  EXPECT_NEAR(d.value(0, 0), 1.0 - 0.1 * 0.5, 1e-12);
}

TEST(NN, AdamWClipsGlobalNorm) {
  Parameter w("w", Matrix::Zero(1, 4));
  nn::AdamWConfig cfg;
  cfg.clip_norm = 5.0;
  nn::AdamW opt({&w}, cfg);
  w.grad = Matrix::Constant(1, 4, 100.0);
  opt.step();
  EXPECT_NEAR(opt.last_grad_norm(), 200.0, 1e-9);
  EXPECT_EQ(w.grad.norm(), 0.0);
}
