// Parameter vectors, model evaluation, analytic losses/gradients and diagonal
// Generalised Gauss-Newton curvature for the three fixed architectures:
// binary logistic regression, softmax-linear, and a ReLU MLP.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlap/matrix.hpp"
#include "fedlap/rng.hpp"

namespace fedlap {

enum class ModelKind { LogisticBinary, SoftmaxLinear, Mlp };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::LogisticBinary: return "logistic-binary";
    case ModelKind::SoftmaxLinear: return "softmax-linear";
    case ModelKind::Mlp: return "mlp";
  }
  return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "logistic-binary") return ModelKind::LogisticBinary;
  if (s == "softmax-linear") return ModelKind::SoftmaxLinear;
  if (s == "mlp") return ModelKind::Mlp;
  throw std::invalid_argument("unknown model kind: " + s);
}

struct ModelSpec {
  ModelKind kind = ModelKind::LogisticBinary;
  std::size_t input_dim = 0;
  std::size_t class_count = 2;
  std::vector<std::size_t> hidden_sizes = {200, 100};  // mlp only
  bool with_bias = true;

  std::size_t param_count() const {
    const std::size_t b = with_bias ? 1 : 0;
    switch (kind) {
      case ModelKind::LogisticBinary:
        return input_dim + b;
      case ModelKind::SoftmaxLinear:
        return class_count * input_dim + b * class_count;
      case ModelKind::Mlp: {
        std::size_t p = 0, in = input_dim;
        for (std::size_t h : hidden_sizes) {
          p += h * in + b * h;
          in = h;
        }
        p += class_count * in + b * class_count;
        return p;
      }
    }
    return 0;
  }
};

// One minibatch. Targets are either hard class indices or row-stochastic soft
// labels; per-example weights default to 1.
struct Batch {
  Matrix inputs;                    // n x input_dim
  std::vector<int> hard_labels;     // n, or empty
  Matrix soft_labels;               // n x C, or empty
  Vector weights;                   // n, or empty (all-ones)

  std::size_t size() const { return inputs.rows; }
  bool soft() const { return !soft_labels.empty(); }
  double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }
};

// Nonnegative diagonal curvature, additive over disjoint batches.
struct DiagCurvature {
  Vector entries;
};

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double clamp_prob(double p) { return std::clamp(p, 1e-12, 1.0 - 1e-12); }

// Stable in-place softmax of a logit row.
inline void softmax_row(double* z, std::size_t c) {
  double m = z[0];
  for (std::size_t j = 1; j < c; ++j) m = std::max(m, z[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    z[j] = std::exp(z[j] - m);
    s += z[j];
  }
  for (std::size_t j = 0; j < c; ++j) z[j] /= s;
}

inline void check_model_inputs(const ModelSpec& spec, const Vector& params, const Matrix& inputs) {
  check_dim(params.size() == spec.param_count(), "params length vs model parameter count");
  check_dim(inputs.cols == spec.input_dim || inputs.rows == 0, "input width vs model input_dim");
}

// Per-layer views into the flat MLP parameter vector.
struct MlpLayout {
  struct Layer {
    std::size_t w_off, b_off, in, out;
    bool bias;
  };
  std::vector<Layer> layers;

  explicit MlpLayout(const ModelSpec& spec) {
    std::size_t off = 0, in = spec.input_dim;
    auto push = [&](std::size_t out) {
      Layer l{off, 0, in, out, spec.with_bias};
      off += out * in;
      l.b_off = off;
      if (spec.with_bias) off += out;
      layers.push_back(l);
      in = out;
    };
    for (std::size_t h : spec.hidden_sizes) push(h);
    push(spec.class_count);
  }
};

// Forward pass storing post-activation values per layer (needed by backprop).
inline void mlp_forward(const MlpLayout& lay, const Vector& params, const double* x,
                        std::vector<Vector>& acts) {
  const std::size_t L = lay.layers.size();
  acts.resize(L);
  const double* in = x;
  for (std::size_t l = 0; l < L; ++l) {
    const auto& ly = lay.layers[l];
    acts[l].assign(ly.out, 0.0);
    for (std::size_t o = 0; o < ly.out; ++o) {
      const double* w = params.data() + ly.w_off + o * ly.in;
      double s = ly.bias ? params[ly.b_off + o] : 0.0;
      for (std::size_t j = 0; j < ly.in; ++j) s += w[j] * in[j];
      acts[l][o] = (l + 1 < L && s < 0.0) ? 0.0 : s;  // ReLU on hidden layers
    }
    in = acts[l].data();
  }
}

// Backprop a gradient seed at the output logits down to parameter space,
// accumulating scale * dlogits-weighted gradients into grad. `acts` come from
// mlp_forward at the same params/input.
inline void mlp_backward(const MlpLayout& lay, const Vector& params, const double* x,
                         const std::vector<Vector>& acts, Vector dlogits, double scale,
                         Vector& grad) {
  const std::size_t L = lay.layers.size();
  for (std::size_t l = L; l-- > 0;) {
    const auto& ly = lay.layers[l];
    const double* in = (l == 0) ? x : acts[l - 1].data();
    Vector din(ly.in, 0.0);
    for (std::size_t o = 0; o < ly.out; ++o) {
      const double d = dlogits[o];
      if (d == 0.0) continue;
      double* gw = grad.data() + ly.w_off + o * ly.in;
      const double* w = params.data() + ly.w_off + o * ly.in;
      for (std::size_t j = 0; j < ly.in; ++j) {
        gw[j] += scale * d * in[j];
        din[j] += d * w[j];
      }
      if (ly.bias) grad[ly.b_off + o] += scale * d;
    }
    if (l == 0) break;
    // gate through ReLU: derivative is 1 where the activation survived
    for (std::size_t j = 0; j < lay.layers[l - 1].out; ++j)
      if (acts[l - 1][j] <= 0.0) din[j] = 0.0;
    dlogits = std::move(din);
  }
}

}  // namespace detail

// Class probabilities, one row per input; rows sum to 1 (log-sum-exp stable).
// logistic-binary is reported as [1-p, p].
inline Matrix predict_proba(const ModelSpec& spec, const Vector& params, const Matrix& inputs) {
  detail::check_model_inputs(spec, params, inputs);
  const std::size_t n = inputs.rows, c = spec.class_count;
  Matrix probs(n, c);
  switch (spec.kind) {
    case ModelKind::LogisticBinary: {
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = inputs.row(i);
        double z = spec.with_bias ? params[spec.input_dim] : 0.0;
        for (std::size_t j = 0; j < spec.input_dim; ++j) z += params[j] * x[j];
        const double p = detail::sigmoid(z);
        probs(i, 0) = 1.0 - p;
        probs(i, 1) = p;
      }
      break;
    }
    case ModelKind::SoftmaxLinear: {
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = inputs.row(i);
        double* row = probs.row(i);
        for (std::size_t k = 0; k < c; ++k) {
          const double* w = params.data() + k * spec.input_dim;
          double s = spec.with_bias ? params[c * spec.input_dim + k] : 0.0;
          for (std::size_t j = 0; j < spec.input_dim; ++j) s += w[j] * x[j];
          row[k] = s;
        }
        detail::softmax_row(row, c);
      }
      break;
    }
    case ModelKind::Mlp: {
      detail::MlpLayout lay(spec);
      std::vector<Vector> acts;
      for (std::size_t i = 0; i < n; ++i) {
        detail::mlp_forward(lay, params, inputs.row(i), acts);
        double* row = probs.row(i);
        std::copy(acts.back().begin(), acts.back().end(), row);
        detail::softmax_row(row, c);
      }
      break;
    }
  }
  return probs;
}

// Predictions stored at full precision for later use as cross-entropy targets.
inline Matrix soft_label(const ModelSpec& spec, const Vector& params, const Matrix& inputs) {
  return predict_proba(spec, params, inputs);
}

namespace detail {

inline void validate_batch(const ModelSpec& spec, const Batch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("empty batch");
  if (batch.soft()) {
    check_dim(batch.soft_labels.rows == batch.size() && batch.soft_labels.cols == spec.class_count,
              "soft label shape");
    for (std::size_t i = 0; i < batch.soft_labels.rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < batch.soft_labels.cols; ++j) s += batch.soft_labels(i, j);
      if (std::abs(s - 1.0) > 1e-9)
        throw std::invalid_argument("soft label row " + std::to_string(i) + " does not sum to 1");
    }
  } else {
    check_dim(batch.hard_labels.size() == batch.size(), "label count vs batch size");
  }
  for (double w : batch.weights)
    if (w < 0.0) throw std::invalid_argument("negative example weight");
}

// Soft target for class j of example i (hard labels become one-hot).
inline double target_of(const Batch& b, std::size_t i, std::size_t j) {
  if (b.soft()) return b.soft_labels(i, j);
  return b.hard_labels[i] == static_cast<int>(j) ? 1.0 : 0.0;
}

}  // namespace detail

// Weighted sum (not mean) of cross-entropies plus its exact analytic gradient.
inline std::pair<double, Vector> nll_and_grad(const ModelSpec& spec, const Vector& params,
                                              const Batch& batch) {
  detail::validate_batch(spec, batch);
  detail::check_model_inputs(spec, params, batch.inputs);
  const std::size_t n = batch.size(), c = spec.class_count;
  const Matrix probs = predict_proba(spec, params, batch.inputs);
  double loss = 0.0;
  Vector grad(params.size(), 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    const double wi = batch.weight(i);
    double li = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = detail::target_of(batch, i, j);
      if (t != 0.0) li -= t * std::log(detail::clamp_prob(probs(i, j)));
    }
    if (!std::isfinite(li))
      throw std::runtime_error("non-finite loss at example " + std::to_string(i));
    loss += wi * li;
  }

  switch (spec.kind) {
    case ModelKind::LogisticBinary: {
      for (std::size_t i = 0; i < n; ++i) {
        const double r = batch.weight(i) * (probs(i, 1) - detail::target_of(batch, i, 1));
        const double* x = batch.inputs.row(i);
        for (std::size_t j = 0; j < spec.input_dim; ++j) grad[j] += r * x[j];
        if (spec.with_bias) grad[spec.input_dim] += r;
      }
      break;
    }
    case ModelKind::SoftmaxLinear: {
      for (std::size_t i = 0; i < n; ++i) {
        const double wi = batch.weight(i);
        const double* x = batch.inputs.row(i);
        for (std::size_t k = 0; k < c; ++k) {
          const double r = wi * (probs(i, k) - detail::target_of(batch, i, k));
          if (r == 0.0) continue;
          double* gw = grad.data() + k * spec.input_dim;
          for (std::size_t j = 0; j < spec.input_dim; ++j) gw[j] += r * x[j];
          if (spec.with_bias) grad[c * spec.input_dim + k] += r;
        }
      }
      break;
    }
    case ModelKind::Mlp: {
      detail::MlpLayout lay(spec);
      std::vector<Vector> acts;
      Vector dlogits(c);
      for (std::size_t i = 0; i < n; ++i) {
        detail::mlp_forward(lay, params, batch.inputs.row(i), acts);
        for (std::size_t j = 0; j < c; ++j)
          dlogits[j] = probs(i, j) - detail::target_of(batch, i, j);
        detail::mlp_backward(lay, params, batch.inputs.row(i), acts, dlogits, batch.weight(i),
                             grad);
      }
      break;
    }
  }
  if (!all_finite(grad)) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = batch.inputs.row(i);
      for (std::size_t j = 0; j < batch.inputs.cols; ++j)
        if (!std::isfinite(x[j]))
          throw std::runtime_error("non-finite gradient at example " + std::to_string(i));
    }
    throw std::runtime_error("non-finite gradient at example 0");
  }
  return {loss, std::move(grad)};
}

// Diagonal Generalised Gauss-Newton curvature: exact diag(sum_i J_i^T L_i J_i)
// for the GLMs; for the MLP the diagonal-of-Lambda form
// sum_i sum_c p_c(1-p_c) (df_c/dw)^2 via one backward pass per class.
inline DiagCurvature diag_ggn(const ModelSpec& spec, const Vector& params, const Matrix& inputs) {
  detail::check_model_inputs(spec, params, inputs);
  const std::size_t n = inputs.rows, c = spec.class_count;
  Vector h(params.size(), 0.0);
  if (n == 0) return {std::move(h)};
  const Matrix probs = predict_proba(spec, params, inputs);

  switch (spec.kind) {
    case ModelKind::LogisticBinary: {
      for (std::size_t i = 0; i < n; ++i) {
        const double lam = probs(i, 1) * (1.0 - probs(i, 1));
        const double* x = inputs.row(i);
        for (std::size_t j = 0; j < spec.input_dim; ++j) h[j] += lam * x[j] * x[j];
        if (spec.with_bias) h[spec.input_dim] += lam;
      }
      break;
    }
    case ModelKind::SoftmaxLinear: {
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = inputs.row(i);
        for (std::size_t k = 0; k < c; ++k) {
          const double lam = probs(i, k) * (1.0 - probs(i, k));
          double* hw = h.data() + k * spec.input_dim;
          for (std::size_t j = 0; j < spec.input_dim; ++j) hw[j] += lam * x[j] * x[j];
          if (spec.with_bias) h[c * spec.input_dim + k] += lam;
        }
      }
      break;
    }
    case ModelKind::Mlp: {
      detail::MlpLayout lay(spec);
      std::vector<Vector> acts;
      Vector seed(c), jac;
      for (std::size_t i = 0; i < n; ++i) {
        detail::mlp_forward(lay, params, inputs.row(i), acts);
        for (std::size_t k = 0; k < c; ++k) {
          const double lam = probs(i, k) * (1.0 - probs(i, k));
          if (lam == 0.0) continue;
          std::fill(seed.begin(), seed.end(), 0.0);
          seed[k] = 1.0;
          jac.assign(params.size(), 0.0);
          detail::mlp_backward(lay, params, inputs.row(i), acts, seed, 1.0, jac);
          for (std::size_t j = 0; j < jac.size(); ++j) h[j] += lam * jac[j] * jac[j];
        }
      }
      break;
    }
  }
  return {std::move(h)};
}

// Seeded initial parameters: zeros for the GLMs, scaled-uniform fan-in for the
// MLP weights (biases zero).
inline Vector init_params(const ModelSpec& spec, std::uint64_t seed) {
  Vector w(spec.param_count(), 0.0);
  if (spec.kind != ModelKind::Mlp) return w;
  Rng rng(derive_seed(seed, 0x1417u));
  detail::MlpLayout lay(spec);
  for (const auto& ly : lay.layers) {
    const double a = 1.0 / std::sqrt(static_cast<double>(ly.in));
    for (std::size_t i = 0; i < ly.out * ly.in; ++i) w[ly.w_off + i] = rng.uniform(-a, a);
  }
  return w;
}

}  // namespace fedlap
