// The seven federated algorithms as pure round-step functions over explicit
// message and state types: FedAvg, FedProx, FedADMM, FedDyn, FedLap,
// FedLap-Cov and FedLap-Func.
//
// FedLap family (all-participation, synchronous rounds):
//   FedLap      client: argmin l_k(w) + delta*v_k'w + delta/2 ||w - w_g||^2,
//               dual    v_k += rho (w_k - w_g), server w_g = sum_k v_k.
//   FedLap-Cov  adds a diagonal site precision V_k; client solves under the
//               Mahalanobis prox ||w - w_g||^2_{S_g}; S_k = H_k - V_k + S_g;
//               v_k += rho (S_k.w_k - S_g.w_g); V_k = (1-rho) V_k + rho H_k;
//               server S_g = delta I + sum V_k, w_g = S_g^{-1} sum v_k.
//   FedLap-Func adds signed soft-label terms over shared memory points and a
//               server-side optimisation instead of the plain sum.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlap/adam.hpp"
#include "fedlap/dataset.hpp"
#include "fedlap/matrix.hpp"
#include "fedlap/model.hpp"
#include "fedlap/objective.hpp"
#include "fedlap/split.hpp"

namespace fedlap {

enum class Algorithm { FedAvg, FedProx, FedAdmm, FedDyn, FedLap, FedLapCov, FedLapFunc };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedProx: return "fedprox";
    case Algorithm::FedAdmm: return "fedadmm";
    case Algorithm::FedDyn: return "feddyn";
    case Algorithm::FedLap: return "fedlap";
    case Algorithm::FedLapCov: return "fedlap-cov";
    case Algorithm::FedLapFunc: return "fedlap-func";
  }
  return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "fedavg") return Algorithm::FedAvg;
  if (s == "fedprox") return Algorithm::FedProx;
  if (s == "fedadmm") return Algorithm::FedAdmm;
  if (s == "feddyn") return Algorithm::FedDyn;
  if (s == "fedlap") return Algorithm::FedLap;
  if (s == "fedlap-cov") return Algorithm::FedLapCov;
  if (s == "fedlap-func") return Algorithm::FedLapFunc;
  throw std::invalid_argument("unknown algorithm: " + s);
}

struct RhoMode {
  enum class Kind { NkOverN, OneOverK, Fixed, Schedule } kind = Kind::NkOverN;
  double value = 1.0;              // Fixed
  std::size_t switch_round = 10;   // Schedule: NkOverN then OneOverK
};

// Damping for client k at a given round.
inline double resolve_rho(const RhoMode& mode, std::size_t n_k, std::size_t n_total,
                          std::size_t clients, std::size_t round) {
  switch (mode.kind) {
    case RhoMode::Kind::NkOverN:
      return static_cast<double>(n_k) / static_cast<double>(n_total);
    case RhoMode::Kind::OneOverK:
      return 1.0 / static_cast<double>(clients);
    case RhoMode::Kind::Fixed:
      return mode.value;
    case RhoMode::Kind::Schedule:
      return round <= mode.switch_round
                 ? static_cast<double>(n_k) / static_cast<double>(n_total)
                 : 1.0 / static_cast<double>(clients);
  }
  return 1.0;
}

struct StrategyConfig {
  Algorithm algorithm = Algorithm::FedLap;
  double delta = 1.0;               // prior precision (FedLap family, oracle)
  double alpha = 1.0;               // FedProx/FedADMM/FedDyn
  RhoMode rho;
  double feddyn_weight_decay = 0.0; // extra local L2 for FedDyn
  double tau_f = 1.0;               // FedLap-Func function-space weight factor
  std::size_t memory_points_per_class = 1;
  AdamConfig server_opt;            // FedLap-Func server optimisation
  bool zero_curvature = false;      // test hook: forces H_k = 0 in FedLap-Cov

  bool fedlap_family() const {
    return algorithm == Algorithm::FedLap || algorithm == Algorithm::FedLapCov ||
           algorithm == Algorithm::FedLapFunc;
  }
};

struct GlobalMsg {
  std::uint32_t round = 0;
  Vector w_g;
  std::optional<Vector> s_g;                           // FedLap-Cov precision
  std::map<std::uint32_t, Vector> global_soft_labels;  // FedLap-Func

  bool operator==(const GlobalMsg&) const = default;
};

struct ClientMsg {
  std::uint32_t client_id = 0;
  Vector v;                                            // site mean parameter
  std::optional<Vector> big_v;                         // site precision (diag)
  std::map<std::uint32_t, Vector> client_soft_labels;  // FedLap-Func
  std::optional<Vector> w;                             // baselines send weights
  std::uint64_t n_k = 0;                               // FedAvg/FedProx weighting

  bool operator==(const ClientMsg&) const = default;
};

struct ClientState {
  std::size_t client_id = 0;
  Vector v;                                        // dual / site mean, init 0
  Vector big_v;                                    // site precision, init 0
  Vector w;                                        // last local parameters
  std::map<std::uint32_t, Vector> own_soft_labels; // FedLap-Func memory labels
};

// Shared memory points for FedLap-Func: inputs known to every party, soft
// labels traded per round. rep_weight is N_{k,c}/M_{k,c} so that each point
// stands in for its class mass at its owner.
struct MemoryPoint {
  std::uint32_t id = 0;
  std::size_t owner = 0;
  int label = 0;
  Vector input;
  double rep_weight = 1.0;
};

struct MemorySet {
  std::vector<MemoryPoint> points;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
  std::vector<const MemoryPoint*> of_client(std::size_t k) const {
    std::vector<const MemoryPoint*> out;
    for (const auto& p : points)
      if (p.owner == k) out.push_back(&p);
    return out;
  }
  Matrix inputs_of(const std::vector<const MemoryPoint*>& pts) const {
    Matrix m(pts.size(), pts.empty() ? 0 : pts[0]->input.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      std::copy(pts[i]->input.begin(), pts[i]->input.end(), m.row(i));
    return m;
  }
};

// Default memory: points_per_class randomly-selected points per class per
// client (classes a client does not hold contribute none).
inline MemorySet build_memory(const Matrix& train_inputs, const std::vector<int>& labels,
                              const ShardAssignment& shards, std::size_t class_count,
                              std::size_t points_per_class, std::uint64_t seed) {
  MemorySet mem;
  std::uint32_t next_id = 0;
  for (std::size_t k = 0; k < shards.client_count(); ++k) {
    Rng rng(derive_seed(seed, 0x3e3u, k));
    for (std::size_t c = 0; c < class_count; ++c) {
      std::vector<std::size_t> members;
      for (std::size_t i : shards.shards[k])
        if (labels[i] == static_cast<int>(c)) members.push_back(i);
      if (members.empty()) continue;
      rng.shuffle(members);
      const std::size_t m = std::min(points_per_class, members.size());
      for (std::size_t t = 0; t < m; ++t) {
        MemoryPoint p;
        p.id = next_id++;
        p.owner = k;
        p.label = static_cast<int>(c);
        p.input.assign(train_inputs.row(members[t]), train_inputs.row(members[t]) + train_inputs.cols);
        p.rep_weight = static_cast<double>(members.size()) / static_cast<double>(m);
        mem.points.push_back(std::move(p));
      }
    }
  }
  return mem;
}

// A client's local base loss: a model over its shard, or a synthetic
// quadratic. Curvature means diagonal GGN (exact Hessian diag for quadratics).
struct ClientProblem {
  const ModelSpec* model = nullptr;
  Batch data;
  const QuadraticClient* quadratic = nullptr;

  std::size_t size() const { return quadratic ? quadratic->size() : data.size(); }
  std::size_t dim() const { return quadratic ? quadratic->dim() : model->param_count(); }

  void attach_base(ObjectiveSpec& spec) const {
    if (quadratic)
      spec.base_quadratic = quadratic;
    else
      spec.base = ModelBatchRef{model, &data};
  }

  Vector curvature_diag(const Vector& w) const {
    if (quadratic) return quadratic->hessian_diag();
    return diag_ggn(*model, w, data.inputs).entries;
  }
};

// Local optimisation backend: minibatch Adam or the exact solvers.
struct LocalSolver {
  bool exact = false;
  AdamConfig adam;

  Vector solve(const ObjectiveSpec& spec, const Vector& init, std::uint64_t seed) const {
    if (exact) return solve_exact(spec, init);
    AdamConfig cfg = adam;
    cfg.seed = seed;
    return minimize(spec, init, cfg);
  }
};

struct ClientStepResult {
  ClientState state;
  ClientMsg msg;
};

// ---- FedLap -----------------------------------------------------------------

inline ClientStepResult fedlap_client_step(const ClientState& state, const GlobalMsg& msg,
                                           const ClientProblem& problem,
                                           const StrategyConfig& cfg, const LocalSolver& solver,
                                           double rho, std::uint64_t seed) {
  const std::size_t p = problem.dim();
  check_dim(state.v.size() == p && msg.w_g.size() == p, "fedlap client state");
  ObjectiveSpec spec;
  problem.attach_base(spec);
  spec.linear_dual = LinearDual{state.v, cfg.delta};
  spec.prox = ProxTerm{msg.w_g, Vector(p, cfg.delta)};

  ClientStepResult out;
  out.state = state;
  out.state.w = solver.solve(spec, msg.w_g, seed);
  for (std::size_t j = 0; j < p; ++j)
    out.state.v[j] = state.v[j] + rho * (out.state.w[j] - msg.w_g[j]);
  out.msg.client_id = static_cast<std::uint32_t>(state.client_id);
  out.msg.v = out.state.v;
  return out;
}

// Server line: the global mean is exactly the sum of the site means, summed in
// ascending client id for bit-reproducibility.
inline GlobalMsg fedlap_server_step(std::vector<ClientMsg> msgs, std::size_t expected_clients) {
  if (msgs.size() != expected_clients)
    throw std::runtime_error("fedlap server: expected " + std::to_string(expected_clients) +
                             " client messages, got " + std::to_string(msgs.size()));
  std::sort(msgs.begin(), msgs.end(),
            [](const ClientMsg& a, const ClientMsg& b) { return a.client_id < b.client_id; });
  GlobalMsg out;
  out.w_g.assign(msgs[0].v.size(), 0.0);
  for (const auto& m : msgs) {
    check_dim(m.v.size() == out.w_g.size(), "fedlap server");
    axpy(1.0, m.v, out.w_g);
  }
  return out;
}

// ---- FedLap-Cov ---------------------------------------------------------------

inline ClientStepResult fedlapcov_client_step(const ClientState& state, const GlobalMsg& msg,
                                              const ClientProblem& problem,
                                              const StrategyConfig& cfg,
                                              const LocalSolver& solver, double rho,
                                              std::uint64_t seed) {
  const std::size_t p = problem.dim();
  if (!msg.s_g) throw std::runtime_error("fedlap-cov: global message lacks S_g");
  check_dim(msg.s_g->size() == p && state.big_v.size() == p, "fedlap-cov client state");
  for (double s : *msg.s_g)
    if (s < cfg.delta - 1e-9)
      throw std::runtime_error("fedlap-cov: S_g entry below delta");

  ObjectiveSpec spec;
  problem.attach_base(spec);
  spec.linear_dual = LinearDual{state.v, 1.0};
  spec.quad_dual = state.big_v;
  spec.prox = ProxTerm{msg.w_g, *msg.s_g};

  ClientStepResult out;
  out.state = state;
  out.state.w = solver.solve(spec, msg.w_g, seed);

  const Vector h = cfg.zero_curvature ? Vector(p, 0.0) : problem.curvature_diag(out.state.w);
  // S_k = H_k - V_k + S_g must stay positive to keep every covariance valid
  Vector s_k(p);
  for (std::size_t j = 0; j < p; ++j) {
    s_k[j] = h[j] - state.big_v[j] + (*msg.s_g)[j];
    if (s_k[j] <= 0.0)
      throw std::runtime_error("fedlap-cov: local precision lost positive-definiteness at entry " +
                               std::to_string(j));
  }
  for (std::size_t j = 0; j < p; ++j) {
    out.state.v[j] = state.v[j] + rho * (s_k[j] * out.state.w[j] - (*msg.s_g)[j] * msg.w_g[j]);
    out.state.big_v[j] = (1.0 - rho) * state.big_v[j] + rho * h[j];
  }
  out.msg.client_id = static_cast<std::uint32_t>(state.client_id);
  out.msg.v = out.state.v;
  out.msg.big_v = out.state.big_v;
  return out;
}

inline GlobalMsg fedlapcov_server_step(std::vector<ClientMsg> msgs, double delta,
                                       std::size_t expected_clients) {
  if (msgs.size() != expected_clients)
    throw std::runtime_error("fedlap-cov server: missing client messages");
  std::sort(msgs.begin(), msgs.end(),
            [](const ClientMsg& a, const ClientMsg& b) { return a.client_id < b.client_id; });
  const std::size_t p = msgs[0].v.size();
  GlobalMsg out;
  out.w_g.assign(p, 0.0);
  Vector s_g(p, delta);
  for (const auto& m : msgs) {
    if (!m.big_v) throw std::runtime_error("fedlap-cov server: client message lacks V_k");
    check_dim(m.v.size() == p && m.big_v->size() == p, "fedlap-cov server");
    for (double v : *m.big_v)
      if (v < 0.0) throw std::runtime_error("fedlap-cov server: negative V_k entry");
    axpy(1.0, m.v, out.w_g);
    axpy(1.0, *m.big_v, s_g);
  }
  for (std::size_t j = 0; j < p; ++j) out.w_g[j] /= s_g[j];
  out.s_g = std::move(s_g);
  return out;
}

// ---- FedLap-Func --------------------------------------------------------------

namespace detail {

// Soft-label cross-entropy terms over memory points, weighted by
// tau_i = tau_f * N_{k,c} / M_{k,c}.
inline FuncTerm make_func_term(const std::vector<const MemoryPoint*>& pts,
                               const std::map<std::uint32_t, Vector>& labels, double tau_f,
                               double sign, const char* who) {
  FuncTerm ft;
  ft.sign = sign;
  ft.batch.inputs = Matrix(pts.size(), pts.empty() ? 0 : pts[0]->input.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto it = labels.find(pts[i]->id);
    if (it == labels.end())
      throw std::runtime_error(std::string(who) + ": missing soft label for memory point " +
                               std::to_string(pts[i]->id));
    if (ft.batch.soft_labels.rows == 0) ft.batch.soft_labels = Matrix(pts.size(), it->second.size());
    std::copy(pts[i]->input.begin(), pts[i]->input.end(), ft.batch.inputs.row(i));
    std::copy(it->second.begin(), it->second.end(), ft.batch.soft_labels.row(i));
    ft.batch.weights.push_back(tau_f * pts[i]->rep_weight);
  }
  return ft;
}

inline std::vector<const MemoryPoint*> all_points(const MemorySet& mem) {
  std::vector<const MemoryPoint*> out;
  for (const auto& p : mem.points) out.push_back(&p);
  return out;
}

}  // namespace detail

inline ClientStepResult fedlapfunc_client_step(const ClientState& state, const GlobalMsg& msg,
                                               const ClientProblem& problem,
                                               const MemorySet& memory,
                                               const StrategyConfig& cfg,
                                               const LocalSolver& solver, double rho,
                                               std::uint64_t seed) {
  const std::size_t p = problem.dim();
  check_dim(state.v.size() == p && msg.w_g.size() == p, "fedlap-func client state");
  ObjectiveSpec spec;
  problem.attach_base(spec);
  spec.linear_dual = LinearDual{state.v, cfg.delta};
  spec.prox = ProxTerm{msg.w_g, Vector(p, cfg.delta)};
  spec.func_model = problem.model;

  const auto own = memory.of_client(state.client_id);
  if (cfg.tau_f != 0.0 && !memory.empty()) {
    if (!own.empty())
      spec.func_terms.push_back(
          detail::make_func_term(own, state.own_soft_labels, cfg.tau_f, -1.0, "fedlap-func client"));
    spec.func_terms.push_back(detail::make_func_term(
        detail::all_points(memory), msg.global_soft_labels, cfg.tau_f, +1.0, "fedlap-func client"));
  }

  ClientStepResult out;
  out.state = state;
  out.state.w = solver.solve(spec, msg.w_g, seed);
  for (std::size_t j = 0; j < p; ++j)
    out.state.v[j] = state.v[j] + rho * (out.state.w[j] - msg.w_g[j]);

  // fresh soft labels at the new local weights
  out.state.own_soft_labels.clear();
  if (!own.empty()) {
    const Matrix inputs = memory.inputs_of(own);
    const Matrix labels = soft_label(*problem.model, out.state.w, inputs);
    for (std::size_t i = 0; i < own.size(); ++i)
      out.state.own_soft_labels[own[i]->id] =
          Vector(labels.row(i), labels.row(i) + labels.cols);
  }
  out.msg.client_id = static_cast<std::uint32_t>(state.client_id);
  out.msg.v = out.state.v;
  out.msg.client_soft_labels = out.state.own_soft_labels;
  return out;
}

// Server optimisation over the sites plus the function-space terms. With no
// memory (or tau_f = 0) the objective's exact argmin is the FedLap sum.
inline GlobalMsg fedlapfunc_server_step(std::vector<ClientMsg> msgs, const MemorySet& memory,
                                        const ModelSpec& model, const Vector& prev_w_g,
                                        const StrategyConfig& cfg,
                                        std::size_t expected_clients) {
  GlobalMsg out = fedlap_server_step(msgs, expected_clients);  // also validates and sorts
  Vector site_sum = out.w_g;

  std::map<std::uint32_t, Vector> collected;
  for (const auto& m : msgs)
    for (const auto& [id, row] : m.client_soft_labels) collected[id] = row;

  if (!memory.empty() && cfg.tau_f != 0.0) {
    // w_g = argmin sum_k [ sum_{i in M_k} tau_i l(yhat_i, w) - delta v_k' w ]
    //              + delta/2 ||w||^2
    ObjectiveSpec spec;
    spec.func_model = &model;
    spec.func_terms.push_back(detail::make_func_term(detail::all_points(memory), collected,
                                                     cfg.tau_f, +1.0, "fedlap-func server"));
    spec.linear_dual = LinearDual{site_sum, -cfg.delta};
    spec.l2 = cfg.delta;
    out.w_g = minimize(spec, prev_w_g, cfg.server_opt);
  }

  // broadcast predictions at the new global weights over every memory point
  if (!memory.empty()) {
    const auto pts = detail::all_points(memory);
    const Matrix inputs = memory.inputs_of(pts);
    const Matrix labels = soft_label(model, out.w_g, inputs);
    for (std::size_t i = 0; i < pts.size(); ++i)
      out.global_soft_labels[pts[i]->id] = Vector(labels.row(i), labels.row(i) + labels.cols);
  }
  return out;
}

// ---- baselines ------------------------------------------------------------------

// FedAvg / FedProx / FedADMM / FedDyn client update. All four minimise the
// mean local loss; FedProx adds the prox term, FedADMM adds the dual, FedDyn
// uses alpha_k = alpha/N_k plus a local weight-decay.
inline ClientStepResult baseline_client_step(const ClientState& state, const GlobalMsg& msg,
                                             const ClientProblem& problem,
                                             const StrategyConfig& cfg, const LocalSolver& solver,
                                             std::uint64_t seed) {
  const std::size_t p = problem.dim();
  check_dim(msg.w_g.size() == p, "baseline client");
  const double n_k = static_cast<double>(problem.size());
  const double alpha_k =
      cfg.algorithm == Algorithm::FedDyn ? cfg.alpha / n_k : cfg.alpha;

  ObjectiveSpec spec;
  problem.attach_base(spec);
  spec.base_scale = 1.0 / n_k;  // mean loss
  if (cfg.algorithm == Algorithm::FedAdmm || cfg.algorithm == Algorithm::FedDyn)
    spec.linear_dual = LinearDual{state.v, 1.0};
  if (cfg.algorithm != Algorithm::FedAvg) spec.prox = ProxTerm{msg.w_g, Vector(p, alpha_k)};
  if (cfg.algorithm == Algorithm::FedDyn && cfg.feddyn_weight_decay > 0.0)
    spec.l2 = cfg.feddyn_weight_decay;

  ClientStepResult out;
  out.state = state;
  out.state.w = solver.solve(spec, msg.w_g, seed);
  if (cfg.algorithm == Algorithm::FedAdmm || cfg.algorithm == Algorithm::FedDyn)
    for (std::size_t j = 0; j < p; ++j)
      out.state.v[j] = state.v[j] + alpha_k * (out.state.w[j] - msg.w_g[j]);
  out.msg.client_id = static_cast<std::uint32_t>(state.client_id);
  out.msg.w = out.state.w;
  if (cfg.algorithm == Algorithm::FedAvg || cfg.algorithm == Algorithm::FedProx)
    out.msg.n_k = problem.size();  // admm/dyn servers know the sizes already
  return out;
}

// Baseline aggregation. FedADMM/FedDyn clients send only w_k; the server
// reconstructs the duals from its own copies (it performed the same update),
// keeping the up-cost at P scalars.
struct BaselineServerState {
  Vector w_g;                       // last broadcast
  std::vector<Vector> v_copies;     // per-client duals (admm/dyn)
  std::vector<std::size_t> client_sizes;
};

inline GlobalMsg baseline_server_step(BaselineServerState& server, std::vector<ClientMsg> msgs,
                                      const StrategyConfig& cfg, std::size_t expected_clients) {
  if (msgs.size() != expected_clients)
    throw std::runtime_error("baseline server: missing client messages");
  std::sort(msgs.begin(), msgs.end(),
            [](const ClientMsg& a, const ClientMsg& b) { return a.client_id < b.client_id; });
  const std::size_t p = server.w_g.size();
  GlobalMsg out;
  out.w_g.assign(p, 0.0);

  if (cfg.algorithm == Algorithm::FedAvg || cfg.algorithm == Algorithm::FedProx) {
    double n_total = 0.0;
    for (const auto& m : msgs) n_total += static_cast<double>(m.n_k);
    for (const auto& m : msgs) {
      if (!m.w) throw std::runtime_error("baseline server: client message lacks weights");
      axpy(static_cast<double>(m.n_k) / n_total, *m.w, out.w_g);
    }
  } else {
    const double k = static_cast<double>(msgs.size());
    for (const auto& m : msgs) {
      if (!m.w) throw std::runtime_error("baseline server: client message lacks weights");
      const std::size_t id = m.client_id;
      const double alpha_k = cfg.algorithm == Algorithm::FedDyn
                                 ? cfg.alpha / static_cast<double>(server.client_sizes[id])
                                 : cfg.alpha;
      Vector& v = server.v_copies[id];
      for (std::size_t j = 0; j < p; ++j) {
        v[j] += alpha_k * ((*m.w)[j] - server.w_g[j]);
        out.w_g[j] += ((*m.w)[j] + v[j] / alpha_k) / k;
      }
    }
  }
  server.w_g = out.w_g;
  return out;
}

}  // namespace fedlap
