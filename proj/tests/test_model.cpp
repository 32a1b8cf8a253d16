#include <gtest/gtest.h>

#include <cmath>

#include "fedlap/model.hpp"
#include "fedlap/rng.hpp"

using namespace fedlap;

namespace {

// Central finite differences on the batch NLL; the independent oracle for
// every analytic gradient below.
Vector fd_gradient(const ModelSpec& spec, const Vector& params, const Batch& batch,
                   double eps = 1e-4) {
  Vector g(params.size());
  Vector w = params;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double orig = w[j];
    w[j] = orig + eps;
    const double fp = nll_and_grad(spec, w, batch).first;
    w[j] = orig - eps;
    const double fm = nll_and_grad(spec, w, batch).first;
    w[j] = orig;
    g[j] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

double rel_err(const Vector& a, const Vector& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

Batch random_batch(const ModelSpec& spec, std::size_t n, Rng& rng, bool soft = false) {
  Batch b;
  b.inputs = Matrix(n, spec.input_dim);
  for (auto& x : b.inputs.data) x = rng.normal();
  if (soft) {
    b.soft_labels = Matrix(n, spec.class_count);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < spec.class_count; ++j) {
        b.soft_labels(i, j) = rng.uniform(0.05, 1.0);
        s += b.soft_labels(i, j);
      }
      for (std::size_t j = 0; j < spec.class_count; ++j) b.soft_labels(i, j) /= s;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i)
      b.hard_labels.push_back(static_cast<int>(rng.uniform_index(spec.class_count)));
  }
  return b;
}

Vector random_params(const ModelSpec& spec, Rng& rng, double scale = 0.5) {
  Vector w(spec.param_count());
  for (auto& x : w) x = scale * rng.normal();
  return w;
}

}  // namespace

TEST(PredictProba, LogisticZeroWeightsGivesHalf) {
  ModelSpec spec{ModelKind::LogisticBinary, 3, 2, {}, true};
  Vector w(spec.param_count(), 0.0);
  Matrix x(2, 3);
  x.data = {1.0, -2.0, 0.5, 0.0, 4.0, -1.0};
  Matrix p = predict_proba(spec, w, x);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(p(i, 0), 0.5);
    EXPECT_DOUBLE_EQ(p(i, 1), 0.5);
  }
}

TEST(PredictProba, SoftmaxZeroWeightsUniform) {
  ModelSpec spec{ModelKind::SoftmaxLinear, 4, 3, {}, true};
  Vector w(spec.param_count(), 0.0);
  Matrix x(1, 4);
  x.data = {1.0, 2.0, 3.0, 4.0};
  Matrix p = predict_proba(spec, w, x);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(p(0, j), 1.0 / 3.0, 1e-15);
}

TEST(PredictProba, LogisticHandEvaluated) {
  // w=[1,-1], no bias, x=[2,1] -> sigma(1)
  ModelSpec spec{ModelKind::LogisticBinary, 2, 2, {}, false};
  Vector w = {1.0, -1.0};
  Matrix x(1, 2);
  x.data = {2.0, 1.0};
  Matrix p = predict_proba(spec, w, x);
  EXPECT_NEAR(p(0, 1), 0.731059, 1e-6);
}

TEST(PredictProba, RowsNormalizedUnderHugeLogits) {
  ModelSpec spec{ModelKind::SoftmaxLinear, 2, 4, {}, false};
  Rng rng(7);
  Vector w(spec.param_count());
  for (auto& v : w) v = rng.uniform(-5e3, 5e3);
  Matrix x(8, 2);
  for (auto& v : x.data) v = rng.uniform(-2.0, 2.0);
  Matrix p = predict_proba(spec, w, x);
  for (std::size_t i = 0; i < p.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < p.cols; ++j) {
      s += p(i, j);
      EXPECT_GE(p(i, j), 0.0);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(PredictProba, ShapeErrors) {
  ModelSpec spec{ModelKind::LogisticBinary, 3, 2, {}, true};
  Vector w(2, 0.0);  // wrong: needs 4
  Matrix x(1, 3);
  EXPECT_THROW(predict_proba(spec, w, x), std::invalid_argument);
  Vector w2(spec.param_count(), 0.0);
  Matrix xbad(1, 2);
  EXPECT_THROW(predict_proba(spec, w2, xbad), std::invalid_argument);
}

TEST(NllAndGrad, LogisticHandExample) {
  // x=[1], y=1, w=[0]: loss = ln 2, grad = -0.5
  ModelSpec spec{ModelKind::LogisticBinary, 1, 2, {}, false};
  Batch b;
  b.inputs = Matrix(1, 1);
  b.inputs.data = {1.0};
  b.hard_labels = {1};
  auto [loss, grad] = nll_and_grad(spec, {0.0}, b);
  EXPECT_NEAR(loss, std::log(2.0), 1e-12);
  ASSERT_EQ(grad.size(), 1u);
  EXPECT_NEAR(grad[0], -0.5, 1e-12);
}

TEST(NllAndGrad, MatchedSoftTargetZeroGradient) {
  ModelSpec spec{ModelKind::SoftmaxLinear, 3, 3, {}, true};
  Rng rng(11);
  Vector w = random_params(spec, rng);
  Matrix x(1, 3);
  x.data = {0.3, -1.2, 0.7};
  Batch b;
  b.inputs = x;
  b.soft_labels = predict_proba(spec, w, x);  // target equals own prediction
  auto [loss, grad] = nll_and_grad(spec, w, b);
  (void)loss;
  EXPECT_LT(norm_inf(grad), 1e-12);
}

TEST(NllAndGrad, MlpMatchesFiniteDifferences) {
  ModelSpec spec{ModelKind::Mlp, 3, 2, {4}, true};
  Rng rng(23);
  Vector w = random_params(spec, rng);
  Batch b = random_batch(spec, 5, rng);
  auto [loss, grad] = nll_and_grad(spec, w, b);
  (void)loss;
  EXPECT_LT(rel_err(grad, fd_gradient(spec, w, b)), 1e-5);
}

TEST(NllAndGrad, GradientOracleAllKinds) {
  Rng rng(31);
  std::vector<ModelSpec> specs = {
      {ModelKind::LogisticBinary, 4, 2, {}, true},
      {ModelKind::LogisticBinary, 3, 2, {}, false},
      {ModelKind::SoftmaxLinear, 3, 4, {}, true},
      {ModelKind::Mlp, 3, 3, {5, 4}, true},
  };
  for (const auto& spec : specs) {
    for (int trial = 0; trial < 20; ++trial) {
      Vector w = random_params(spec, rng);
      Batch b = random_batch(spec, 4, rng, trial % 2 == 0);
      if (trial % 3 == 0) {
        b.weights.assign(b.size(), 0.0);
        for (auto& v : b.weights) v = rng.uniform(0.1, 2.0);
      }
      auto grad = nll_and_grad(spec, w, b).second;
      EXPECT_LT(rel_err(grad, fd_gradient(spec, w, b)), 1e-5)
          << to_string(spec.kind) << " trial " << trial;
    }
  }
}

TEST(NllAndGrad, EmptyBatchRejected) {
  ModelSpec spec{ModelKind::LogisticBinary, 1, 2, {}, false};
  Batch b;
  b.inputs = Matrix(0, 1);
  EXPECT_THROW(nll_and_grad(spec, {0.0}, b), std::invalid_argument);
}

TEST(NllAndGrad, LossIsSumNotMean) {
  ModelSpec spec{ModelKind::LogisticBinary, 1, 2, {}, false};
  Batch one;
  one.inputs = Matrix(1, 1);
  one.inputs.data = {1.0};
  one.hard_labels = {1};
  Batch two;
  two.inputs = Matrix(2, 1);
  two.inputs.data = {1.0, 1.0};
  two.hard_labels = {1, 1};
  const double l1 = nll_and_grad(spec, {0.25}, one).first;
  const double l2 = nll_and_grad(spec, {0.25}, two).first;
  EXPECT_NEAR(l2, 2.0 * l1, 1e-12);
}

TEST(NllAndGrad, MidpointConvexLogistic) {
  ModelSpec spec{ModelKind::LogisticBinary, 5, 2, {}, true};
  Rng rng(43);
  Batch b = random_batch(spec, 30, rng);
  for (int trial = 0; trial < 50; ++trial) {
    Vector w1 = random_params(spec, rng, 2.0), w2 = random_params(spec, rng, 2.0);
    Vector mid(w1.size());
    for (std::size_t i = 0; i < mid.size(); ++i) mid[i] = 0.5 * (w1[i] + w2[i]);
    const double fmid = nll_and_grad(spec, mid, b).first;
    const double favg =
        0.5 * (nll_and_grad(spec, w1, b).first + nll_and_grad(spec, w2, b).first);
    EXPECT_LE(fmid, favg + 1e-10);
  }
}

TEST(DiagGgn, LogisticAtZeroIsQuarterXSquared) {
  ModelSpec spec{ModelKind::LogisticBinary, 2, 2, {}, false};
  Matrix x(1, 2);
  x.data = {1.0, 0.0};
  auto h = diag_ggn(spec, {0.0, 0.0}, x);
  EXPECT_DOUBLE_EQ(h.entries[0], 0.25);
  EXPECT_DOUBLE_EQ(h.entries[1], 0.0);
}

TEST(DiagGgn, EmptyInputAllZero) {
  ModelSpec spec{ModelKind::SoftmaxLinear, 3, 3, {}, true};
  Vector w(spec.param_count(), 0.1);
  auto h = diag_ggn(spec, w, Matrix(0, 3));
  for (double v : h.entries) EXPECT_EQ(v, 0.0);
}

TEST(DiagGgn, AdditiveOverDuplicatedBatch) {
  std::vector<ModelSpec> specs = {
      {ModelKind::LogisticBinary, 3, 2, {}, true},
      {ModelKind::SoftmaxLinear, 3, 3, {}, true},
      {ModelKind::Mlp, 3, 2, {4}, true},
  };
  Rng rng(57);
  for (const auto& spec : specs) {
    Vector w = random_params(spec, rng);
    Matrix x(1, 3);
    x.data = {0.4, -0.9, 1.3};
    Matrix xx(2, 3);
    std::copy(x.data.begin(), x.data.end(), xx.data.begin());
    std::copy(x.data.begin(), x.data.end(), xx.data.begin() + 3);
    auto h1 = diag_ggn(spec, w, x);
    auto h2 = diag_ggn(spec, w, xx);
    for (std::size_t j = 0; j < h1.entries.size(); ++j)
      EXPECT_NEAR(h2.entries[j], 2.0 * h1.entries[j], 1e-12);
  }
}

TEST(DiagGgn, NonnegativeOnRandomInstances) {
  Rng rng(71);
  std::vector<ModelSpec> specs = {
      {ModelKind::LogisticBinary, 4, 2, {}, true},
      {ModelKind::SoftmaxLinear, 4, 3, {}, false},
      {ModelKind::Mlp, 4, 3, {6, 5}, true},
  };
  for (const auto& spec : specs) {
    for (int t = 0; t < 5; ++t) {
      Vector w = random_params(spec, rng);
      Matrix x(7, 4);
      for (auto& v : x.data) v = rng.normal();
      for (double v : diag_ggn(spec, w, x).entries) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(SoftLabel, UniformAtZeroWeights) {
  ModelSpec spec{ModelKind::SoftmaxLinear, 2, 5, {}, true};
  Vector w(spec.param_count(), 0.0);
  Matrix x(3, 2);
  x.data = {1, 2, 3, 4, 5, 6};
  Matrix y = soft_label(spec, w, x);
  for (std::size_t i = 0; i < y.rows; ++i)
    for (std::size_t j = 0; j < y.cols; ++j) EXPECT_NEAR(y(i, j), 0.2, 1e-15);
}

TEST(SoftLabel, SelfCrossEntropyIsPredictiveEntropy) {
  ModelSpec spec{ModelKind::SoftmaxLinear, 3, 3, {}, true};
  Rng rng(83);
  Vector w = random_params(spec, rng);
  Matrix x(4, 3);
  for (auto& v : x.data) v = rng.normal();
  Batch b;
  b.inputs = x;
  b.soft_labels = soft_label(spec, w, x);
  const double ce = nll_and_grad(spec, w, b).first;
  double entropy = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < 3u; ++j)
      entropy -= b.soft_labels(i, j) * std::log(b.soft_labels(i, j));
  EXPECT_NEAR(ce, entropy, 1e-9);
}

TEST(InitParams, DeterministicAndZeroForGlm) {
  ModelSpec glm{ModelKind::LogisticBinary, 5, 2, {}, true};
  for (double v : init_params(glm, 3)) EXPECT_EQ(v, 0.0);
  ModelSpec mlp{ModelKind::Mlp, 5, 3, {4}, true};
  Vector a = init_params(mlp, 3), b = init_params(mlp, 3), c = init_params(mlp, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  // fan-in bound
  for (std::size_t i = 0; i < 4 * 5; ++i) EXPECT_LE(std::abs(a[i]), 1.0 / std::sqrt(5.0));
}
