// Client-side objective composition: base loss (model batch or quadratic)
// plus linear dual, diagonal quadratic dual, weighted proximal, L2 and signed
// function-space terms. Includes exact solvers (closed form for quadratics,
// damped Newton for binary logistic) used by the oracle tests and the
// exact-local-solve mode.
#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "fedlap/dataset.hpp"
#include "fedlap/matrix.hpp"
#include "fedlap/model.hpp"

namespace fedlap {

struct ModelBatchRef {
  const ModelSpec* model = nullptr;
  const Batch* batch = nullptr;
};

// s * a^T w
struct LinearDual {
  Vector coeff;
  double scale = 1.0;
};

// 0.5 * ||w - anchor||^2_M with diagonal metric M >= 0
struct ProxTerm {
  Vector anchor;
  Vector metric;
};

// sign * sum_i tau_i * CE(soft_label_i, predict(x_i)); tau lives in batch.weights
struct FuncTerm {
  Batch batch;
  double sign = 1.0;
};

struct ObjectiveSpec {
  // exactly one of these two (or neither, for the server objective)
  std::optional<ModelBatchRef> base;
  const QuadraticClient* base_quadratic = nullptr;
  double base_scale = 1.0;

  std::optional<LinearDual> linear_dual;
  std::optional<Vector> quad_dual;  // diagonal V: contributes -0.5 w^T V w
  std::optional<ProxTerm> prox;
  std::optional<double> l2;         // 0.5 * l2 * ||w||^2

  const ModelSpec* func_model = nullptr;  // model used by func_terms (defaults to base model)
  std::vector<FuncTerm> func_terms;

  std::size_t dim() const {
    if (base) return base->model->param_count();
    if (base_quadratic) return base_quadratic->dim();
    if (linear_dual) return linear_dual->coeff.size();
    if (prox) return prox->anchor.size();
    if (quad_dual) return quad_dual->size();
    if (func_model) return func_model->param_count();
    throw std::invalid_argument("empty objective has no dimension");
  }

  const ModelSpec* model_for_func() const {
    return func_model ? func_model : (base ? base->model : nullptr);
  }
};

namespace detail {

inline void check_objective(const ObjectiveSpec& spec, const Vector& w) {
  const std::size_t p = w.size();
  if (spec.base && spec.base_quadratic)
    throw std::invalid_argument("objective has two base losses");
  if (spec.base) check_dim(spec.base->model->param_count() == p, "objective base");
  if (spec.base_quadratic) check_dim(spec.base_quadratic->dim() == p, "objective quadratic base");
  if (spec.linear_dual) check_dim(spec.linear_dual->coeff.size() == p, "objective linear dual");
  if (spec.quad_dual) check_dim(spec.quad_dual->size() == p, "objective quad dual");
  if (spec.prox)
    check_dim(spec.prox->anchor.size() == p && spec.prox->metric.size() == p, "objective prox");
  if (!spec.func_terms.empty() && !spec.model_for_func())
    throw std::invalid_argument("func_terms without a model");
}

}  // namespace detail

// Value and gradient of every component except the base data loss; used by
// the minimizer which scales these by the minibatch fraction.
inline std::pair<double, Vector> side_terms_value_and_grad(const ObjectiveSpec& spec,
                                                           const Vector& w) {
  double value = 0.0;
  Vector grad(w.size(), 0.0);
  if (spec.linear_dual) {
    const auto& ld = *spec.linear_dual;
    value += ld.scale * dot(ld.coeff, w);
    axpy(ld.scale, ld.coeff, grad);
  }
  if (spec.quad_dual) {
    const auto& v = *spec.quad_dual;
    for (std::size_t j = 0; j < w.size(); ++j) {
      value -= 0.5 * v[j] * w[j] * w[j];
      grad[j] -= v[j] * w[j];
    }
  }
  if (spec.prox) {
    const auto& pr = *spec.prox;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double d = w[j] - pr.anchor[j];
      value += 0.5 * pr.metric[j] * d * d;
      grad[j] += pr.metric[j] * d;
    }
  }
  if (spec.l2) {
    for (std::size_t j = 0; j < w.size(); ++j) {
      value += 0.5 * (*spec.l2) * w[j] * w[j];
      grad[j] += (*spec.l2) * w[j];
    }
  }
  for (const auto& ft : spec.func_terms) {
    if (ft.batch.size() == 0) continue;
    auto [v, g] = nll_and_grad(*spec.model_for_func(), w, ft.batch);
    value += ft.sign * v;
    axpy(ft.sign, g, grad);
  }
  return {value, std::move(grad)};
}

inline std::pair<double, Vector> base_value_and_grad(const ObjectiveSpec& spec, const Vector& w) {
  if (spec.base && spec.base->batch->size() > 0) {
    auto [v, g] = nll_and_grad(*spec.base->model, w, *spec.base->batch);
    if (spec.base_scale != 1.0) {
      v *= spec.base_scale;
      for (auto& x : g) x *= spec.base_scale;
    }
    return {v, std::move(g)};
  }
  if (spec.base_quadratic) {
    double v = spec.base_scale * spec.base_quadratic->value(w);
    Vector g = spec.base_quadratic->gradient(w);
    for (auto& x : g) x *= spec.base_scale;
    return {v, std::move(g)};
  }
  return {0.0, Vector(w.size(), 0.0)};
}

// Full objective: exact sum of component values/gradients.
inline std::pair<double, Vector> objective_value_and_grad(const ObjectiveSpec& spec,
                                                          const Vector& w) {
  detail::check_objective(spec, w);
  auto [bv, bg] = base_value_and_grad(spec, w);
  auto [sv, sg] = side_terms_value_and_grad(spec, w);
  axpy(1.0, sg, bg);
  return {bv + sv, std::move(bg)};
}

// ---- exact solvers ----------------------------------------------------------

namespace detail {

// Accumulate the dense Hessian of all quadratic side terms plus the base.
// Only valid when the base is quadratic/absent or binary logistic (whose CE
// Hessian at w is X^T diag(p(1-p)) X, independent of targets).
inline Matrix objective_hessian(const ObjectiveSpec& spec, const Vector& w) {
  const std::size_t p = w.size();
  Matrix h(p, p);
  if (spec.base_quadratic) {
    Matrix hb = spec.base_quadratic->hessian();
    for (std::size_t i = 0; i < p * p; ++i) h.data[i] += spec.base_scale * hb.data[i];
  }
  auto add_logistic = [&](const ModelSpec& m, const Batch& b, double scale) {
    const Matrix probs = predict_proba(m, w, b.inputs);
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double lam = scale * b.weight(i) * probs(i, 1) * (1.0 - probs(i, 1));
      const double* x = b.inputs.row(i);
      const std::size_t d = m.input_dim;
      for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) h(r, c) += lam * x[r] * x[c];
        if (m.with_bias) {
          h(r, d) += lam * x[r];
          h(d, r) += lam * x[r];
        }
      }
      if (m.with_bias) h(d, d) += lam;
    }
  };
  if (spec.base && spec.base->batch->size() > 0) {
    if (spec.base->model->kind != ModelKind::LogisticBinary)
      throw std::invalid_argument("exact solver: model base must be logistic-binary");
    add_logistic(*spec.base->model, *spec.base->batch, spec.base_scale);
  }
  for (const auto& ft : spec.func_terms) {
    if (ft.batch.size() == 0) continue;
    if (spec.model_for_func()->kind != ModelKind::LogisticBinary)
      throw std::invalid_argument("exact solver: func terms must be logistic-binary");
    add_logistic(*spec.model_for_func(), ft.batch, ft.sign);
  }
  for (std::size_t j = 0; j < p; ++j) {
    if (spec.quad_dual) h(j, j) -= (*spec.quad_dual)[j];
    if (spec.prox) h(j, j) += spec.prox->metric[j];
    if (spec.l2) h(j, j) += *spec.l2;
  }
  return h;
}

inline bool purely_quadratic(const ObjectiveSpec& spec) {
  return !spec.base && spec.func_terms.empty();
}

}  // namespace detail

// Exact minimizer. Quadratic objectives solve their normal equations in one
// dense solve; logistic objectives run damped Newton to machine precision.
inline Vector solve_exact(const ObjectiveSpec& spec, const Vector& init) {
  detail::check_objective(spec, init);
  const bool quadratic =
      detail::purely_quadratic(spec) || (spec.base_quadratic && spec.func_terms.empty());
  if (quadratic) {
    Matrix h = detail::objective_hessian(spec, init);
    // rhs = -(gradient at 0) = -(-A^T b * scale + s a - M anchor) etc.
    Vector zero(init.size(), 0.0);
    auto [v0, g0] = objective_value_and_grad(spec, zero);
    (void)v0;
    Vector rhs(init.size());
    for (std::size_t j = 0; j < rhs.size(); ++j) rhs[j] = -g0[j];
    return solve_dense(std::move(h), std::move(rhs));
  }

  // damped Newton; rank-deficient Hessians (one-hot encodings make the
  // unregularized logistic Hessian singular) get a Levenberg ridge
  Vector w = init;
  auto [value, grad] = objective_value_and_grad(spec, w);
  for (int iter = 0; iter < 200; ++iter) {
    if (norm_inf(grad) <= 1e-12) break;
    Matrix h = detail::objective_hessian(spec, w);
    Vector step;
    for (double mu = 0.0;; mu = mu == 0.0 ? 1e-10 : mu * 100.0) {
      Matrix damped = h;
      for (std::size_t j = 0; j < w.size(); ++j) damped(j, j) += mu;
      try {
        step = solve_dense(std::move(damped), grad);
        break;
      } catch (const std::runtime_error&) {
        if (mu > 1.0) throw;
      }
    }
    double t = 1.0;
    Vector cand(w.size());
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t j = 0; j < w.size(); ++j) cand[j] = w[j] - t * step[j];
      auto [cv, cg] = objective_value_and_grad(spec, cand);
      if (cv <= value + 1e-18 * std::abs(value)) {
        w = cand;
        value = cv;
        grad = std::move(cg);
        break;
      }
      t *= 0.5;
      if (ls == 59) return w;  // no descent possible at machine precision
    }
  }
  return w;
}

}  // namespace fedlap
