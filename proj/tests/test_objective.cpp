#include <gtest/gtest.h>

#include <cmath>

#include "fedlap/adam.hpp"
#include "fedlap/objective.hpp"

using namespace fedlap;

namespace {

// scalar quadratic 0.5*(w-c)^2 as a QuadraticClient with A=[1], b=[c]
QuadraticClient scalar_quad(double c) {
  QuadraticClient q;
  q.a = Matrix(1, 1);
  q.a(0, 0) = 1.0;
  q.b = {c};
  return q;
}

}  // namespace

TEST(Objective, QuadraticWithL2ClosedForm) {
  // 0.5*(w-1)^2 + 0.5*1*||w||^2 has minimizer 0.5
  auto q = scalar_quad(1.0);
  ObjectiveSpec spec;
  spec.base_quadratic = &q;
  spec.l2 = 1.0;
  Vector w = solve_exact(spec, {0.0});
  EXPECT_NEAR(w[0], 0.5, 1e-14);
}

TEST(Objective, FedAdmmScalarClientClosedForm) {
  // 0.5*(w-2)^2 + 0*w + 0.5*1*(w-0)^2 -> argmin 1
  auto q = scalar_quad(2.0);
  ObjectiveSpec spec;
  spec.base_quadratic = &q;
  spec.linear_dual = LinearDual{{0.0}, 1.0};
  spec.prox = ProxTerm{{0.0}, {1.0}};
  Vector w = solve_exact(spec, {0.0});
  EXPECT_NEAR(w[0], 1.0, 1e-14);
}

TEST(Objective, ComponentAdditivity) {
  Rng rng(5);
  auto quads = make_quadratic_clients(1, 6, 8, 17);
  ObjectiveSpec spec;
  spec.base_quadratic = &quads[0];
  spec.base_scale = 0.7;
  LinearDual ld;
  ld.scale = 1.3;
  for (int i = 0; i < 6; ++i) ld.coeff.push_back(rng.normal());
  spec.linear_dual = ld;
  Vector vd(6), metric(6), anchor(6);
  for (int i = 0; i < 6; ++i) {
    vd[i] = rng.uniform(0.0, 1.0);
    metric[i] = rng.uniform(0.0, 2.0);
    anchor[i] = rng.normal();
  }
  spec.quad_dual = vd;
  spec.prox = ProxTerm{anchor, metric};
  spec.l2 = 0.9;

  Vector w(6);
  for (auto& x : w) x = rng.normal();
  auto [total, tg] = objective_value_and_grad(spec, w);

  // evaluate each component in isolation and sum
  double sum = 0.0;
  Vector sg(6, 0.0);
  {
    ObjectiveSpec s;
    s.base_quadratic = &quads[0];
    s.base_scale = 0.7;
    auto [v, g] = objective_value_and_grad(s, w);
    sum += v;
    axpy(1.0, g, sg);
  }
  for (int which = 0; which < 4; ++which) {
    ObjectiveSpec s;
    // tie dimension without contributing anything
    s.linear_dual = LinearDual{Vector(6, 0.0), 0.0};
    if (which == 0) s.linear_dual = ld;
    if (which == 1) s.quad_dual = vd;
    if (which == 2) s.prox = ProxTerm{anchor, metric};
    if (which == 3) s.l2 = 0.9;
    auto [v, g] = objective_value_and_grad(s, w);
    sum += v;
    axpy(1.0, g, sg);
  }
  EXPECT_NEAR(total, sum, 1e-12);
  for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(tg[j], sg[j], 1e-12);
}

TEST(Objective, GradMatchesFiniteDifferenceWithFuncTerms) {
  ModelSpec m{ModelKind::LogisticBinary, 3, 2, {}, true};
  Rng rng(7);
  Batch base;
  base.inputs = Matrix(6, 3);
  for (auto& v : base.inputs.data) v = rng.normal();
  for (int i = 0; i < 6; ++i) base.hard_labels.push_back(i % 2);

  Vector w0(m.param_count());
  for (auto& v : w0) v = 0.3 * rng.normal();

  FuncTerm pos, neg;
  pos.sign = 1.0;
  neg.sign = -1.0;
  for (FuncTerm* ft : {&pos, &neg}) {
    ft->batch.inputs = Matrix(2, 3);
    for (auto& v : ft->batch.inputs.data) v = rng.normal();
    Vector probe(m.param_count());
    for (auto& v : probe) v = 0.2 * rng.normal();
    ft->batch.soft_labels = soft_label(m, probe, ft->batch.inputs);
    ft->batch.weights = {0.5, 1.5};  // tau
  }

  ObjectiveSpec spec;
  spec.base = ModelBatchRef{&m, &base};
  spec.linear_dual = LinearDual{Vector(4, 0.25), 2.0};
  spec.prox = ProxTerm{Vector(4, 0.1), Vector(4, 3.0)};
  spec.l2 = 0.5;
  spec.func_terms = {pos, neg};

  auto [v0, g] = objective_value_and_grad(spec, w0);
  (void)v0;
  const double eps = 1e-5;
  for (std::size_t j = 0; j < w0.size(); ++j) {
    Vector wp = w0, wm = w0;
    wp[j] += eps;
    wm[j] -= eps;
    const double fd = (objective_value_and_grad(spec, wp).first -
                       objective_value_and_grad(spec, wm).first) /
                      (2 * eps);
    EXPECT_NEAR(g[j], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Objective, MatchedFuncTermZeroGradient) {
  ModelSpec m{ModelKind::SoftmaxLinear, 2, 3, {}, true};
  Rng rng(9);
  Vector w(m.param_count());
  for (auto& v : w) v = rng.normal();
  FuncTerm ft;
  ft.batch.inputs = Matrix(3, 2);
  for (auto& v : ft.batch.inputs.data) v = rng.normal();
  ft.batch.soft_labels = soft_label(m, w, ft.batch.inputs);
  ObjectiveSpec spec;
  spec.func_model = &m;
  spec.func_terms = {ft};
  auto [v, g] = objective_value_and_grad(spec, w);
  (void)v;
  EXPECT_LT(norm_inf(g), 1e-12);
}

TEST(Objective, DimensionMismatchThrows) {
  auto q = scalar_quad(1.0);
  ObjectiveSpec spec;
  spec.base_quadratic = &q;
  spec.linear_dual = LinearDual{{1.0, 2.0}, 1.0};  // wrong length
  EXPECT_THROW(objective_value_and_grad(spec, {0.0}), std::invalid_argument);
}

TEST(Minimize, DeterministicGivenSeed) {
  ModelSpec m{ModelKind::LogisticBinary, 4, 2, {}, true};
  Rng rng(21);
  Batch b;
  b.inputs = Matrix(32, 4);
  for (auto& v : b.inputs.data) v = rng.normal();
  for (int i = 0; i < 32; ++i) b.hard_labels.push_back(static_cast<int>(rng.uniform_index(2)));
  ObjectiveSpec spec;
  spec.base = ModelBatchRef{&m, &b};
  spec.l2 = 0.1;
  AdamConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.seed = 77;
  Vector init(m.param_count(), 0.0);
  Vector w1 = minimize(spec, init, cfg);
  Vector w2 = minimize(spec, init, cfg);
  EXPECT_EQ(w1, w2);
  cfg.seed = 78;
  Vector w3 = minimize(spec, init, cfg);
  EXPECT_NE(w1, w3);
}

TEST(Minimize, ScalarQuadraticConvergesToClosedForm) {
  auto q = scalar_quad(1.0);
  ObjectiveSpec spec;
  spec.base_quadratic = &q;
  spec.l2 = 1.0;  // minimizer 0.5
  AdamConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 5000;
  Vector w = minimize(spec, {0.0}, cfg);
  EXPECT_NEAR(w[0], 0.5, 1e-6);
}

TEST(Minimize, StronglyConvexQuadraticFullBatch) {
  auto quads = make_quadratic_clients(1, 5, 12, 3);
  ObjectiveSpec spec;
  spec.base_quadratic = &quads[0];
  spec.l2 = 0.5;
  Vector closed = solve_exact(spec, Vector(5, 0.0));
  AdamConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 40000;
  Vector w = minimize(spec, Vector(5, 0.0), cfg);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(w[j], closed[j], 1e-6);
}

TEST(Minimize, GradClipBoundsAppliedGradients) {
  // With clip 1 the first Adam step is bounded by lr * g / (sqrt(g^2)+eps)
  // per coordinate; here we just verify the run is stable and the clipped
  // gradient norm property via a one-step objective with a huge gradient.
  QuadraticClient q;
  q.a = Matrix(1, 1);
  q.a(0, 0) = 100.0;  // gradient at 0 is -100^2 * 1... steep
  q.b = {100.0};
  ObjectiveSpec spec;
  spec.base_quadratic = &q;
  AdamConfig cfg;
  cfg.learning_rate = 1.0;
  cfg.epochs = 1;
  cfg.grad_clip_norm = 1.0;
  Vector w = minimize(spec, {0.0}, cfg);
  // unit-clipped gradient through fresh Adam: |step| = lr * 1/(1+eps) < 1
  EXPECT_LT(std::abs(w[0]), 1.0 + 1e-9);
}

TEST(Minimize, WatchdogAbortsUnboundedObjective) {
  // maximize 0.5 w^2 via a negative quadratic dual: unbounded below
  ObjectiveSpec spec;
  spec.quad_dual = Vector{4.0};
  spec.linear_dual = LinearDual{{0.0}, 0.0};
  AdamConfig cfg;
  cfg.learning_rate = 1e4;
  cfg.epochs = 2000000;
  EXPECT_THROW(minimize(spec, {1.0}, cfg), ObjectiveDivergence);
}

TEST(Minimize, FullBatchMatchesSideTermScalingContract) {
  // with batch_size = N the per-step gradient equals the full objective's
  ModelSpec m{ModelKind::LogisticBinary, 2, 2, {}, false};
  Rng rng(31);
  Batch b;
  b.inputs = Matrix(8, 2);
  for (auto& v : b.inputs.data) v = rng.normal();
  for (int i = 0; i < 8; ++i) b.hard_labels.push_back(i % 2);
  ObjectiveSpec spec;
  spec.base = ModelBatchRef{&m, &b};
  spec.l2 = 2.0;
  AdamConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 1;
  cfg.batch_size = 8;

  // one manual Adam step from zero on the full gradient
  Vector w0(2, 0.0);
  auto g = objective_value_and_grad(spec, w0).second;
  Vector manual(2);
  for (int j = 0; j < 2; ++j) {
    const double mhat = g[j];                 // m/(1-b1) after one step
    const double vhat = g[j] * g[j];          // v/(1-b2)
    manual[j] = -cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  Vector w = minimize(spec, w0, cfg);
  EXPECT_NEAR(w[0], manual[0], 1e-15);
  EXPECT_NEAR(w[1], manual[1], 1e-15);
}

TEST(SolveExact, NewtonLogisticReachesStationaryPoint) {
  ModelSpec m{ModelKind::LogisticBinary, 5, 2, {}, true};
  Rng rng(41);
  Batch b;
  b.inputs = Matrix(40, 5);
  for (auto& v : b.inputs.data) v = rng.normal();
  for (int i = 0; i < 40; ++i) b.hard_labels.push_back(static_cast<int>(rng.uniform_index(2)));
  ObjectiveSpec spec;
  spec.base = ModelBatchRef{&m, &b};
  spec.l2 = 1.0;
  spec.linear_dual = LinearDual{Vector(6, -0.3), 1.0};
  spec.prox = ProxTerm{Vector(6, 0.2), Vector(6, 1.0)};
  Vector w = solve_exact(spec, Vector(6, 0.0));
  auto g = objective_value_and_grad(spec, w).second;
  EXPECT_LT(norm_inf(g), 1e-10);
}

TEST(SolveExact, RejectsSoftmaxBase) {
  ModelSpec m{ModelKind::SoftmaxLinear, 2, 3, {}, false};
  Batch b;
  b.inputs = Matrix(1, 2);
  b.inputs.data = {1.0, 0.0};
  b.hard_labels = {0};
  ObjectiveSpec spec;
  spec.base = ModelBatchRef{&m, &b};
  EXPECT_THROW(solve_exact(spec, Vector(m.param_count(), 0.0)), std::invalid_argument);
}

TEST(Minimize, ClipToNormProperty) {
  Rng rng(61);
  for (int trial = 0; trial < 200; ++trial) {
    Vector g(1 + rng.uniform_index(20));
    for (auto& x : g) x = 50.0 * rng.normal();
    Vector orig = g;
    clip_to_norm(g, 1.0);
    EXPECT_LE(norm2(g), 1.0 + 1e-12);
    if (norm2(orig) <= 1.0) EXPECT_EQ(g, orig);  // direction preserved, small ones untouched
  }
}

TEST(Minimize, MinibatchScalesSideTermsByBatchFraction) {
  // one epoch, two half-batches: the applied step must equal hand-built Adam
  // over [base(mb) + frac * side(w)] with frac = 1/2
  ModelSpec m{ModelKind::LogisticBinary, 2, 2, {}, false};
  Rng rng(71);
  Batch b;
  b.inputs = Matrix(8, 2);
  for (auto& v : b.inputs.data) v = rng.normal();
  for (int i = 0; i < 8; ++i) b.hard_labels.push_back(i % 2);
  ObjectiveSpec spec;
  spec.base = ModelBatchRef{&m, &b};
  spec.l2 = 3.0;
  spec.linear_dual = LinearDual{{0.7, -0.4}, 2.0};

  AdamConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.seed = 13;
  Vector w0 = {0.3, -0.2};
  Vector got = minimize(spec, w0, cfg);

  // replicate: same shuffle stream, same scaling rule
  std::vector<std::size_t> order = {0, 1, 2, 3, 4, 5, 6, 7};
  Rng stream(derive_seed(cfg.seed, 0xada3u));
  stream.shuffle(order);
  Vector w = w0, mom(2, 0.0), vel(2, 0.0);
  double b1t = 1.0, b2t = 1.0;
  for (int half = 0; half < 2; ++half) {
    Batch mb;
    mb.inputs = Matrix(4, 2);
    for (int i = 0; i < 4; ++i) {
      const std::size_t src = order[half * 4 + i];
      std::copy(b.inputs.row(src), b.inputs.row(src) + 2, mb.inputs.row(i));
      mb.hard_labels.push_back(b.hard_labels[src]);
    }
    auto g = nll_and_grad(m, w, mb).second;
    ObjectiveSpec side;
    side.l2 = spec.l2;
    side.linear_dual = spec.linear_dual;
    auto sg = objective_value_and_grad(side, w).second;
    axpy(0.5, sg, g);  // batch fraction 4/8
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    for (int j = 0; j < 2; ++j) {
      mom[j] = cfg.beta1 * mom[j] + (1 - cfg.beta1) * g[j];
      vel[j] = cfg.beta2 * vel[j] + (1 - cfg.beta2) * g[j] * g[j];
      w[j] -= cfg.learning_rate * (mom[j] / (1 - b1t)) / (std::sqrt(vel[j] / (1 - b2t)) + cfg.eps);
    }
  }
  EXPECT_EQ(got, w);  // bitwise
}
