// Round orchestration: builds the federated problem from an ExperimentConfig,
// drives synchronous rounds with a worker pool, accounts communication,
// evaluates metrics, and persists JSONL results. The same engine backs the
// in-process and TCP transports.
#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fedlap/config.hpp"
#include "fedlap/strategies.hpp"
#include "fedlap/wire.hpp"

namespace fedlap {

// ---- communication accounting -----------------------------------------------

struct CommCost {
  std::size_t up_scalars = 0;    // per client, model payload doubles
  std::size_t down_scalars = 0;  // per client
};

// Scalar counts per round per client. bytes = scalars * 8.
inline CommCost comm_cost(Algorithm alg, std::size_t p, std::size_t c,
                          std::size_t mem_points_client, std::size_t mem_points_total) {
  switch (alg) {
    case Algorithm::FedAvg:
    case Algorithm::FedProx:
    case Algorithm::FedAdmm:  // server reconstructs the dual from w_k
    case Algorithm::FedDyn:
    case Algorithm::FedLap:
      return {p, p};
    case Algorithm::FedLapCov:
      return {2 * p, 2 * p};
    case Algorithm::FedLapFunc:
      return {p + mem_points_client * c, p + mem_points_total * c};
  }
  return {p, p};
}

// ---- metrics -----------------------------------------------------------------

struct EvalMetrics {
  double accuracy = 0.0;
  double nll = 0.0;  // mean per example
};

// argmax accuracy (ties take the lowest class index) and mean NLL.
inline EvalMetrics evaluate_model(const ModelSpec& model, const Vector& w, const Matrix& inputs,
                                  const std::vector<int>& labels) {
  EvalMetrics out;
  if (inputs.rows == 0) return out;
  const Matrix probs = predict_proba(model, w, inputs);
  std::size_t correct = 0;
  double nll = 0.0;
  for (std::size_t i = 0; i < inputs.rows; ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < probs.cols; ++j)
      if (probs(i, j) > probs(i, arg)) arg = j;
    if (static_cast<int>(arg) == labels[i]) ++correct;
    nll -= std::log(detail::clamp_prob(probs(i, labels[i])));
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(inputs.rows);
  out.nll = nll / static_cast<double>(inputs.rows);
  return out;
}

struct RoundRecord {
  std::uint64_t seed = 0;
  std::size_t round = 0;
  double test_accuracy = 0.0;
  double test_nll = 0.0;
  double train_nll = 0.0;
  Vector client_losses;  // local base loss at w_g
  std::uint64_t bytes_up = 0;
  std::uint64_t bytes_down = 0;
  double wall_ms = 0.0;
  double acc_avg_last3 = 0.0;
  double acc_max_last3 = 0.0;
};

// wall_ms is informational; omit it for byte-comparable serializations.
inline Json record_to_json(const RoundRecord& r, bool include_timing = true) {
  Json j{{"type", "round"},
         {"seed", r.seed},
         {"round", r.round},
         {"test_accuracy", r.test_accuracy},
         {"test_nll", r.test_nll},
         {"train_nll", r.train_nll},
         {"client_losses", r.client_losses},
         {"bytes_up", r.bytes_up},
         {"bytes_down", r.bytes_down},
         {"acc_avg_last3", r.acc_avg_last3},
         {"acc_max_last3", r.acc_max_last3}};
  if (include_timing) j["wall_ms"] = r.wall_ms;
  return j;
}

inline RoundRecord record_from_json(const Json& j) {
  RoundRecord r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.round = j.at("round").get<std::size_t>();
  r.test_accuracy = j.at("test_accuracy").get<double>();
  r.test_nll = j.at("test_nll").get<double>();
  r.train_nll = j.at("train_nll").get<double>();
  r.client_losses = j.at("client_losses").get<Vector>();
  r.bytes_up = j.at("bytes_up").get<std::uint64_t>();
  r.bytes_down = j.at("bytes_down").get<std::uint64_t>();
  r.wall_ms = j.value("wall_ms", 0.0);
  r.acc_avg_last3 = j.at("acc_avg_last3").get<double>();
  r.acc_max_last3 = j.at("acc_max_last3").get<double>();
  return r;
}

// First round whose accuracy meets the threshold (ties count as reached).
inline std::optional<std::size_t> rounds_to_accuracy(const std::vector<RoundRecord>& records,
                                                     double threshold) {
  for (const auto& r : records)
    if (r.test_accuracy >= threshold) return r.round;
  return std::nullopt;
}

// ---- worker pool ---------------------------------------------------------------

inline std::size_t worker_count() {
  if (const char* env = std::getenv("FEDLAP_WORKERS")) {
    const long n = std::atol(env);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? hc : 1;
}

// Index-parallel map; result order is by index, independent of scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---- the engine -----------------------------------------------------------------

// One (config, seed) federated problem with all state. client_round(k) calls
// are independent across k; server_round is a sequential reduction.
class FederatedRun {
 public:
  FederatedRun(const ExperimentConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    build_problem();
    init_state();
  }
  FederatedRun(const FederatedRun&) = delete;             // problems_ hold internal pointers
  FederatedRun& operator=(const FederatedRun&) = delete;

  std::size_t client_count() const { return problems_.size(); }
  std::size_t param_dim() const { return dim_; }
  const ExperimentConfig& config() const { return cfg_; }
  const ModelSpec& model() const { return model_; }
  const Vector& w_g() const { return server_w_; }
  const Dataset& dataset() const { return data_; }
  const ShardAssignment& shards() const { return shards_; }
  const MemorySet& memory() const { return memory_; }
  const std::vector<ClientProblem>& problems() const { return problems_; }

  GlobalMsg initial_msg() const { return initial_msg_; }

  ClientMsg client_round(std::size_t k, const GlobalMsg& msg) {
    const double rho = resolve_rho(cfg_.strategy.rho, problems_[k].size(), total_points_,
                                   client_count(), msg.round);
    const std::uint64_t step_seed = derive_seed(seed_, 100 + k, msg.round);
    ClientStepResult res;
    switch (cfg_.strategy.algorithm) {
      case Algorithm::FedLap:
        res = fedlap_client_step(clients_[k], msg, problems_[k], cfg_.strategy, cfg_.local, rho,
                                 step_seed);
        break;
      case Algorithm::FedLapCov:
        res = fedlapcov_client_step(clients_[k], msg, problems_[k], cfg_.strategy, cfg_.local, rho,
                                    step_seed);
        break;
      case Algorithm::FedLapFunc:
        res = fedlapfunc_client_step(clients_[k], msg, problems_[k], memory_, cfg_.strategy,
                                     cfg_.local, rho, step_seed);
        break;
      default:
        res = baseline_client_step(clients_[k], msg, problems_[k], cfg_.strategy, cfg_.local,
                                   step_seed);
        break;
    }
    clients_[k] = std::move(res.state);
    return res.msg;
  }

  GlobalMsg server_round(std::vector<ClientMsg> msgs, std::size_t round) {
    GlobalMsg out;
    switch (cfg_.strategy.algorithm) {
      case Algorithm::FedLap:
        out = fedlap_server_step(std::move(msgs), client_count());
        break;
      case Algorithm::FedLapCov:
        out = fedlapcov_server_step(std::move(msgs), cfg_.strategy.delta, client_count());
        break;
      case Algorithm::FedLapFunc:
        out = fedlapfunc_server_step(std::move(msgs), memory_, model_, server_w_, cfg_.strategy,
                                     client_count());
        break;
      default:
        out = baseline_server_step(baseline_server_, std::move(msgs), cfg_.strategy,
                                   client_count());
        break;
    }
    out.round = static_cast<std::uint32_t>(round + 1);  // next broadcast
    server_w_ = out.w_g;
    return out;
  }

  // Metrics at the current global parameters.
  RoundRecord evaluate(std::size_t round) const {
    RoundRecord r;
    r.seed = seed_;
    r.round = round;
    if (quadratic_mode()) {
      double total = 0.0;
      for (const auto& p : problems_) {
        const double l = p.quadratic->value(server_w_);
        r.client_losses.push_back(l);
        total += l;
      }
      r.train_nll = total / static_cast<double>(std::max<std::size_t>(total_points_, 1));
    } else {
      const EvalMetrics test =
          evaluate_model(model_, server_w_, data_.test_inputs, data_.test_labels);
      r.test_accuracy = test.accuracy;
      r.test_nll = test.nll;
      const EvalMetrics train =
          evaluate_model(model_, server_w_, data_.train_inputs, data_.train_labels);
      r.train_nll = train.nll;
      for (const auto& p : problems_)
        r.client_losses.push_back(p.data.size() ? nll_and_grad(model_, server_w_, p.data).first
                                                : 0.0);
    }
    // per-round accounting from the cost model
    std::uint64_t up = 0, down = 0;
    for (std::size_t k = 0; k < client_count(); ++k) {
      const auto cost =
          comm_cost(cfg_.strategy.algorithm, dim_, model_.class_count,
                    memory_.of_client(k).size(), memory_.size());
      up += cost.up_scalars;
      down += cost.down_scalars;
    }
    r.bytes_up = 8 * up;
    r.bytes_down = 8 * down;
    return r;
  }

  bool quadratic_mode() const { return cfg_.dataset.kind == DatasetKind::Quadratic; }

 private:
  void build_problem() {
    if (cfg_.dataset.kind == DatasetKind::Quadratic) {
      quads_ = make_quadratic_clients(cfg_.dataset.quad_clients, cfg_.dataset.quad_dim,
                                      cfg_.dataset.quad_rows, cfg_.dataset.quad_seed,
                                      cfg_.dataset.quad_diagonal, cfg_.dataset.quad_scale);
      dim_ = cfg_.dataset.quad_dim;
      total_points_ = 0;
      for (const auto& q : quads_) {
        ClientProblem p;
        p.quadratic = &q;
        problems_.push_back(std::move(p));
        total_points_ += q.size();
      }
      shards_.shards.assign(quads_.size(), {});
      return;
    }

    switch (cfg_.dataset.kind) {
      case DatasetKind::Csv: {
        CsvSchema schema;
        schema.test_fraction = cfg_.dataset.test_fraction;
        schema.positive_label = cfg_.dataset.positive_label;
        schema.label_col = cfg_.dataset.label_col;
        schema.categorical_cols = cfg_.dataset.categorical_cols;
        schema.missing_token = cfg_.dataset.missing_token;
        schema.seed = derive_seed(seed_, 1);
        data_ = load_csv(cfg_.dataset.path, schema);
        break;
      }
      case DatasetKind::Idx: {
        data_ = load_idx(cfg_.dataset.train_images, cfg_.dataset.train_labels,
                         cfg_.dataset.test_images, cfg_.dataset.test_labels);
        if (cfg_.dataset.subsample_fraction < 1.0)
          subsample_train(data_, cfg_.dataset.subsample_fraction, derive_seed(seed_, 1));
        break;
      }
      case DatasetKind::Blobs:
        data_ = generate_blobs(cfg_.dataset.blobs, cfg_.dataset.blobs_seed);
        break;
      case DatasetKind::Quadratic:
        break;
    }

    model_ = cfg_.model;
    if (model_.input_dim == 0) model_.input_dim = data_.input_dim();
    if (model_.kind != ModelKind::LogisticBinary) model_.class_count = data_.class_count;
    if (model_.kind == ModelKind::LogisticBinary && data_.class_count != 2)
      throw ConfigError("logistic-binary model on a dataset with more than two classes");
    dim_ = model_.param_count();

    SplitSpec split = cfg_.split;
    split.seed = derive_seed(seed_, 2);
    shards_ = make_split(data_.train_labels, data_.class_count, split);
    total_points_ = shards_.total();

    for (std::size_t k = 0; k < shards_.client_count(); ++k) {
      ClientProblem p;
      p.model = &model_;
      const auto& idx = shards_.shards[k];
      p.data.inputs = Matrix(idx.size(), data_.input_dim());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(data_.train_inputs.row(idx[i]), data_.train_inputs.row(idx[i]) + data_.input_dim(),
                  p.data.inputs.row(i));
        p.data.hard_labels.push_back(data_.train_labels[idx[i]]);
      }
      problems_.push_back(std::move(p));
    }

    if (cfg_.strategy.algorithm == Algorithm::FedLapFunc)
      memory_ = build_memory(data_.train_inputs, data_.train_labels, shards_, data_.class_count,
                             cfg_.strategy.memory_points_per_class, derive_seed(seed_, 4));
  }

  void init_state() {
    Vector w0 = quadratic_mode() ? Vector(dim_, 0.0) : init_params(model_, derive_seed(seed_, 3));
    server_w_ = w0;
    clients_.clear();
    for (std::size_t k = 0; k < client_count(); ++k) {
      ClientState s;
      s.client_id = k;
      s.v.assign(dim_, 0.0);
      s.big_v.assign(dim_, 0.0);
      s.w = w0;
      clients_.push_back(std::move(s));
    }
    baseline_server_.w_g = w0;
    baseline_server_.v_copies.assign(client_count(), Vector(dim_, 0.0));
    baseline_server_.client_sizes.clear();
    for (const auto& p : problems_) baseline_server_.client_sizes.push_back(p.size());

    initial_msg_.round = 1;
    initial_msg_.w_g = w0;
    if (cfg_.strategy.algorithm == Algorithm::FedLapCov)
      initial_msg_.s_g = Vector(dim_, cfg_.strategy.delta);
    if (cfg_.strategy.algorithm == Algorithm::FedLapFunc && !memory_.empty()) {
      // soft labels at the initial weights on both sides, so the signed
      // function-space terms cancel for own points in round one
      const auto pts = detail::all_points(memory_);
      const Matrix inputs = memory_.inputs_of(pts);
      const Matrix labels = soft_label(model_, w0, inputs);
      for (std::size_t i = 0; i < pts.size(); ++i)
        initial_msg_.global_soft_labels[pts[i]->id] =
            Vector(labels.row(i), labels.row(i) + labels.cols);
      for (auto& client : clients_)
        for (const auto* pt : memory_.of_client(client.client_id))
          client.own_soft_labels[pt->id] = initial_msg_.global_soft_labels.at(pt->id);
    }
  }

  ExperimentConfig cfg_;
  std::uint64_t seed_;
  Dataset data_;
  std::vector<QuadraticClient> quads_;
  ModelSpec model_;
  std::size_t dim_ = 0;
  std::size_t total_points_ = 0;
  ShardAssignment shards_;
  MemorySet memory_;
  std::vector<ClientProblem> problems_;
  std::vector<ClientState> clients_;
  BaselineServerState baseline_server_;
  Vector server_w_;
  GlobalMsg initial_msg_;
};

// ---- experiment driver --------------------------------------------------------

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<RoundRecord> records;
  Vector final_w_g;
  bool failed = false;
  std::string error;
};

using RoundObserver = std::function<void(const RoundRecord&, const GlobalMsg&)>;

namespace detail {

inline void fill_trailing_stats(std::vector<RoundRecord>& records) {
  // trailing window over the evaluated records only
  for (std::size_t i = 0; i < records.size(); ++i) {
    double sum = 0.0, mx = 0.0;
    std::size_t n = 0;
    for (std::size_t b = i + 1; b-- > 0 && n < 3; ++n) {
      sum += records[b].test_accuracy;
      mx = std::max(mx, records[b].test_accuracy);
    }
    records[i].acc_avg_last3 = sum / static_cast<double>(n);
    records[i].acc_max_last3 = mx;
  }
}

}  // namespace detail

// One seed, in-process transport. Client steps run on the worker pool; the
// result stream is independent of the pool size.
inline RunResult run_single_seed(const ExperimentConfig& cfg, std::uint64_t seed,
                                 const RoundObserver& observer = {}) {
  RunResult out;
  out.seed = seed;
  FederatedRun run(cfg, seed);
  const auto t0 = std::chrono::steady_clock::now();

  auto push_record = [&](RoundRecord rec, const GlobalMsg& msg) {
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    out.records.push_back(rec);
    detail::fill_trailing_stats(out.records);
    if (observer) observer(out.records.back(), msg);
  };

  GlobalMsg msg = run.initial_msg();
  push_record(run.evaluate(0), msg);  // round-0 record of the initial model
  std::size_t round = 0;
  try {
    for (round = 1; round <= cfg.rounds; ++round) {
      std::vector<ClientMsg> msgs(run.client_count());
      parallel_for(run.client_count(), [&](std::size_t k) { msgs[k] = run.client_round(k, msg); });
      msg = run.server_round(std::move(msgs), round);
      if (round % cfg.eval_every == 0 || round == cfg.rounds) push_record(run.evaluate(round), msg);
    }
    out.final_w_g = run.w_g();
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = "round " + std::to_string(round) + ": " + e.what();
  }
  return out;
}

// JSONL persistence: one header line with the resolved config, then one line
// per RoundRecord (a failed seed contributes a failure line).
inline void write_results(std::ostream& os, const ExperimentConfig& cfg,
                          const std::vector<RunResult>& results, bool include_timing = true) {
  Json header{{"type", "header"}, {"config", to_json(cfg)}};
  os << header.dump() << "\n";
  for (const auto& r : results) {
    for (const auto& rec : r.records) os << record_to_json(rec, include_timing).dump() << "\n";
    if (r.failed)
      os << Json{{"type", "failure"}, {"seed", r.seed}, {"error", r.error}}.dump() << "\n";
  }
}

// Opens the results file, creating parent directories as needed.
inline std::ofstream open_results_file(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open results file: " + path);
  return os;
}

inline std::vector<RunResult> run_experiment(const ExperimentConfig& cfg,
                                             const RoundObserver& observer = {}) {
  validate_config(cfg);
  std::vector<RunResult> results;
  for (const std::uint64_t seed : cfg.seeds) results.push_back(run_single_seed(cfg, seed, observer));
  if (!cfg.output.empty()) {
    std::ofstream os = open_results_file(cfg.output);
    write_results(os, cfg, results);
  }
  return results;
}

// ---- centralized oracle ---------------------------------------------------------

struct OracleResult {
  Vector w;
  double train_nll = 0.0;  // mean data NLL (quadratics: mean residual loss)
  double test_accuracy = 0.0;
  double test_nll = 0.0;
};

// Pooled-data training at the experiment's delta: closed form for quadratics,
// Newton for binary logistic, long-run Adam otherwise.
inline OracleResult centralized_oracle(const ExperimentConfig& cfg, std::uint64_t seed,
                                       std::optional<double> delta_override = {}) {
  const double delta = delta_override.value_or(cfg.strategy.delta);
  FederatedRun run(cfg, seed);
  OracleResult out;
  if (run.quadratic_mode()) {
    std::vector<QuadraticClient> quads;
    for (const auto& p : run.problems()) quads.push_back(*p.quadratic);
    out.w = quadratic_global_optimum(quads, delta);
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& q : quads) {
      total += q.value(out.w);
      n += q.size();
    }
    out.train_nll = total / static_cast<double>(std::max<std::size_t>(n, 1));
    return out;
  }

  const auto& data = run.dataset();
  Batch pooled;
  pooled.inputs = data.train_inputs;
  pooled.hard_labels = data.train_labels;
  ObjectiveSpec spec;
  const ModelSpec& model = run.model();
  spec.base = ModelBatchRef{&model, &pooled};
  if (delta > 0.0) spec.l2 = delta;
  const Vector init = init_params(model, derive_seed(seed, 3));
  if (model.kind == ModelKind::LogisticBinary) {
    out.w = solve_exact(spec, init);
  } else {
    AdamConfig adam = cfg.local.adam;
    adam.epochs = std::max<std::size_t>(adam.epochs, 200);
    adam.seed = derive_seed(seed, 0x0acceu);
    out.w = minimize(spec, init, adam);
  }
  out.train_nll = evaluate_model(model, out.w, data.train_inputs, data.train_labels).nll;
  const auto test = evaluate_model(model, out.w, data.test_inputs, data.test_labels);
  out.test_accuracy = test.accuracy;
  out.test_nll = test.nll;
  return out;
}

}  // namespace fedlap
