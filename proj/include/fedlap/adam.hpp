// Self-contained minibatch Adam over an ObjectiveSpec. Non-data terms (duals,
// prox, L2, function-space terms) enter every step scaled by the minibatch
// fraction so the expected stochastic step matches the full objective.
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "fedlap/objective.hpp"
#include "fedlap/rng.hpp"

namespace fedlap {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t epochs = 1;
  std::size_t batch_size = 0;  // 0 = full batch
  std::optional<double> grad_clip_norm;
  std::uint64_t seed = 0;
};

class ObjectiveDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Global-norm clipping: rescale so the norm never exceeds the cap.
inline void clip_to_norm(Vector& g, double cap) {
  const double gn = norm2(g);
  if (gn > cap)
    for (auto& x : g) x *= cap / gn;
}

namespace detail {

inline Batch batch_rows(const Batch& b, const std::vector<std::size_t>& idx, std::size_t begin,
                        std::size_t end) {
  Batch out;
  const std::size_t n = end - begin;
  out.inputs = Matrix(n, b.inputs.cols);
  if (b.soft()) out.soft_labels = Matrix(n, b.soft_labels.cols);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = idx[begin + r];
    std::copy(b.inputs.row(i), b.inputs.row(i) + b.inputs.cols, out.inputs.row(r));
    if (b.soft())
      std::copy(b.soft_labels.row(i), b.soft_labels.row(i) + b.soft_labels.cols,
                out.soft_labels.row(r));
    else
      out.hard_labels.push_back(b.hard_labels[i]);
    if (!b.weights.empty()) out.weights.push_back(b.weights[i]);
  }
  return out;
}

[[noreturn]] inline void abort_diverged(const ObjectiveSpec& spec, const Vector& w,
                                        std::size_t epoch, std::size_t step, double value) {
  std::ostringstream os;
  os << "objective diverged at epoch " << epoch << " step " << step << ": value=" << value;
  auto [bv, bg] = base_value_and_grad(spec, w);
  auto [sv, sg] = side_terms_value_and_grad(spec, w);
  (void)bg;
  (void)sg;
  os << " (base=" << bv << ", side_terms=" << sv << ")";
  throw ObjectiveDivergence(os.str());
}

}  // namespace detail

// Runs cfg.epochs of minibatched Adam over the base data, warm-started from
// init. With no base data each "epoch" is one full-objective step (used by
// the FedLap-Func server optimisation). Deterministic given the seed.
inline Vector minimize(const ObjectiveSpec& spec, const Vector& init, const AdamConfig& cfg) {
  detail::check_objective(spec, init);
  if (cfg.learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
  if (cfg.epochs < 1) throw std::invalid_argument("epochs must be >= 1");

  const std::size_t p = init.size();
  std::size_t n = 0;
  const Batch* data = nullptr;
  if (spec.base && spec.base->batch->size() > 0) {
    data = spec.base->batch;
    n = data->size();
  } else if (spec.base_quadratic) {
    n = spec.base_quadratic->size();
  }

  Vector w = init;
  Vector m(p, 0.0), v(p, 0.0);
  double b1t = 1.0, b2t = 1.0;
  Rng rng(derive_seed(cfg.seed, 0xada3u));

  std::vector<std::size_t> order(data ? n : 0);
  std::iota(order.begin(), order.end(), 0);

  const std::size_t bs = (cfg.batch_size == 0 || cfg.batch_size >= n || data == nullptr)
                             ? std::max<std::size_t>(n, 1)
                             : cfg.batch_size;

  auto adam_step = [&](Vector& g) {
    if (cfg.grad_clip_norm) clip_to_norm(g, *cfg.grad_clip_norm);
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    for (std::size_t j = 0; j < p; ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / (1.0 - b1t);
      const double vhat = v[j] / (1.0 - b2t);
      w[j] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (data && bs < n) rng.shuffle(order);
    std::size_t step = 0;
    if (data == nullptr && spec.base_quadratic == nullptr) {
      // server-style objective: one full step per epoch
      auto [val, g] = objective_value_and_grad(spec, w);
      if (!std::isfinite(val) || val < -1e8 || !all_finite(g))
        detail::abort_diverged(spec, w, epoch, 0, val);
      adam_step(g);
    } else {
      for (std::size_t begin = 0; begin < n; begin += bs, ++step) {
        const std::size_t end = std::min(begin + bs, n);
        const double frac = static_cast<double>(end - begin) / static_cast<double>(n);
        double val;
        Vector g;
        if (data) {
          Batch mb = detail::batch_rows(*data, order, begin, end);
          ObjectiveSpec sub;
          sub.base = ModelBatchRef{spec.base->model, &mb};
          sub.base_scale = spec.base_scale;
          auto [bv, bg] = base_value_and_grad(sub, w);
          val = bv;
          g = std::move(bg);
        } else {
          auto [bv, bg] = base_value_and_grad(spec, w);  // quadratic base, full batch
          val = bv;
          g = std::move(bg);
        }
        auto [sv, sg] = side_terms_value_and_grad(spec, w);
        val += frac * sv;
        axpy(frac, sg, g);
        if (!std::isfinite(val) || val < -1e8 || !all_finite(g))
          detail::abort_diverged(spec, w, epoch, step, val);
        adam_step(g);
      }
    }
    // watchdog: signed function-space terms can be unbounded below. Full-batch
    // runs already evaluated the complete objective in the step loop.
    if (data && bs < n) {
      auto [full, fg] = objective_value_and_grad(spec, w);
      (void)fg;
      if (!std::isfinite(full) || full < -1e8) detail::abort_diverged(spec, w, epoch, step, full);
    }
  }
  return w;
}

}  // namespace fedlap
