// Declarative experiment configuration: JSON schema, strict validation with
// the valid keys listed on error, dotted-path overrides, and round-tripping
// (the resolved config echoed into results headers reloads equivalently).
#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedlap/adam.hpp"
#include "fedlap/dataset.hpp"
#include "fedlap/model.hpp"
#include "fedlap/split.hpp"
#include "fedlap/strategies.hpp"

namespace fedlap {

using Json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DatasetKind { Csv, Idx, Blobs, Quadratic };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Blobs;
  std::string name;  // label used in tables; defaults per kind
  // csv
  std::string path;
  double test_fraction = 0.2;
  std::string positive_label;
  int label_col = -1;
  std::vector<std::size_t> categorical_cols;
  std::string missing_token = "?";
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  double subsample_fraction = 1.0;
  // blobs
  BlobsSpec blobs;
  std::uint64_t blobs_seed = 0;
  // quadratic
  std::size_t quad_clients = 4;
  std::size_t quad_dim = 8;
  std::size_t quad_rows = 8;
  bool quad_diagonal = true;
  double quad_scale = 1.0;
  std::uint64_t quad_seed = 0;
};

enum class TransportKind { Inproc, Tcp };

struct TransportSpec {
  TransportKind kind = TransportKind::Inproc;
  std::string host = "127.0.0.1";
  std::uint16_t port = 7700;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSpec dataset;
  SplitSpec split;
  ModelSpec model;
  StrategyConfig strategy;
  LocalSolver local;
  std::size_t rounds = 10;
  std::vector<std::uint64_t> seeds = {0};
  std::size_t eval_every = 1;
  std::string output;
  TransportSpec transport;
};

namespace detail {

inline void check_keys(const Json& obj, const std::string& where,
                       const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) {
      std::ostringstream os;
      os << where << ": unknown key '" << key << "'; valid keys:";
      for (const auto& k : allowed) os << " " << k;
      throw ConfigError(os.str());
    }
  }
}

template <typename T>
T get_or(const Json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  return obj.at(key).get<T>();
}

}  // namespace detail

// ---- from_json ---------------------------------------------------------------

inline DatasetSpec dataset_from_json(const Json& j) {
  detail::check_keys(j, "dataset",
                     {"kind", "name", "path", "test_fraction", "positive_label", "label_col",
                      "categorical_cols", "missing_token", "train_images", "train_labels",
                      "test_images", "test_labels", "subsample_fraction", "classes", "dim",
                      "train_per_class", "test_per_class", "separation", "noise", "seed",
                      "clients", "rows", "diagonal", "scale"});
  DatasetSpec d;
  const std::string kind = detail::get_or<std::string>(j, "kind", "blobs");
  if (kind == "csv" || kind == "uci-credit") {
    d.kind = DatasetKind::Csv;
    d.path = detail::get_or<std::string>(j, "path", "");
    d.test_fraction = detail::get_or<double>(j, "test_fraction", 0.2);
    d.positive_label = detail::get_or<std::string>(j, "positive_label",
                                                   kind == "uci-credit" ? "+" : "");
    d.label_col = detail::get_or<int>(j, "label_col", -1);
    d.categorical_cols = detail::get_or<std::vector<std::size_t>>(j, "categorical_cols", {});
    d.missing_token = detail::get_or<std::string>(j, "missing_token", "?");
    d.name = detail::get_or<std::string>(j, "name", kind == "uci-credit" ? "uci-credit" : "csv");
  } else if (kind == "idx" || kind == "mnist" || kind == "fmnist") {
    d.kind = DatasetKind::Idx;
    d.train_images = detail::get_or<std::string>(j, "train_images", "");
    d.train_labels = detail::get_or<std::string>(j, "train_labels", "");
    d.test_images = detail::get_or<std::string>(j, "test_images", "");
    d.test_labels = detail::get_or<std::string>(j, "test_labels", "");
    d.subsample_fraction = detail::get_or<double>(j, "subsample_fraction", 1.0);
    d.name = detail::get_or<std::string>(j, "name", kind);
  } else if (kind == "blobs") {
    d.kind = DatasetKind::Blobs;
    d.blobs.class_count = detail::get_or<std::size_t>(j, "classes", 2);
    d.blobs.dim = detail::get_or<std::size_t>(j, "dim", 2);
    d.blobs.train_per_class = detail::get_or<std::size_t>(j, "train_per_class", 100);
    d.blobs.test_per_class = detail::get_or<std::size_t>(j, "test_per_class", 50);
    d.blobs.separation = detail::get_or<double>(j, "separation", 4.0);
    d.blobs.noise = detail::get_or<double>(j, "noise", 1.0);
    d.blobs_seed = detail::get_or<std::uint64_t>(j, "seed", 0);
    d.name = detail::get_or<std::string>(j, "name", "blobs");
  } else if (kind == "quadratic") {
    d.kind = DatasetKind::Quadratic;
    d.quad_clients = detail::get_or<std::size_t>(j, "clients", 4);
    d.quad_dim = detail::get_or<std::size_t>(j, "dim", 8);
    d.quad_rows = detail::get_or<std::size_t>(j, "rows", 8);
    d.quad_diagonal = detail::get_or<bool>(j, "diagonal", true);
    d.quad_scale = detail::get_or<double>(j, "scale", 1.0);
    d.quad_seed = detail::get_or<std::uint64_t>(j, "seed", 0);
    d.name = detail::get_or<std::string>(j, "name", "quadratic");
  } else {
    throw ConfigError("dataset.kind: unknown kind '" + kind +
                      "'; valid kinds: csv uci-credit idx mnist fmnist blobs quadratic");
  }
  return d;
}

inline SplitSpec split_from_json(const Json& j) {
  detail::check_keys(j, "split", {"kind", "clients", "alpha1", "alpha2", "seed", "shards"});
  SplitSpec s;
  s.kind = split_kind_from_string(detail::get_or<std::string>(j, "kind", "homogeneous"));
  s.clients = detail::get_or<std::size_t>(j, "clients", s.kind == SplitKind::UciCreditFixed ? 10 : 1);
  s.alpha1 = detail::get_or<double>(j, "alpha1", 1.0);
  s.alpha2 = detail::get_or<double>(j, "alpha2", 0.5);
  s.seed = detail::get_or<std::uint64_t>(j, "seed", 0);
  if (j.contains("shards")) s.explicit_shards = j.at("shards").get<std::vector<std::vector<std::size_t>>>();
  if (s.kind == SplitKind::UciCreditFixed) s.clients = 10;
  return s;
}

inline ModelSpec model_from_json(const Json& j) {
  detail::check_keys(j, "model", {"kind", "input_dim", "classes", "hidden", "bias"});
  ModelSpec m;
  m.kind = model_kind_from_string(detail::get_or<std::string>(j, "kind", "logistic-binary"));
  m.input_dim = detail::get_or<std::size_t>(j, "input_dim", 0);  // 0 = resolved from data
  m.class_count = detail::get_or<std::size_t>(j, "classes", 2);
  m.hidden_sizes = detail::get_or<std::vector<std::size_t>>(j, "hidden", {200, 100});
  m.with_bias = detail::get_or<bool>(j, "bias", true);
  return m;
}

inline AdamConfig adam_from_json(const Json& j, const std::string& where) {
  detail::check_keys(j, where,
                     {"learning_rate", "beta1", "beta2", "eps", "epochs", "iterations",
                      "batch_size", "grad_clip_norm", "solver"});
  AdamConfig a;
  a.learning_rate = detail::get_or<double>(j, "learning_rate", 1e-3);
  a.beta1 = detail::get_or<double>(j, "beta1", 0.9);
  a.beta2 = detail::get_or<double>(j, "beta2", 0.999);
  a.eps = detail::get_or<double>(j, "eps", 1e-8);
  a.epochs = detail::get_or<std::size_t>(j, "epochs", detail::get_or<std::size_t>(j, "iterations", 1));
  a.batch_size = detail::get_or<std::size_t>(j, "batch_size", 0);
  if (j.contains("grad_clip_norm") && !j.at("grad_clip_norm").is_null())
    a.grad_clip_norm = j.at("grad_clip_norm").get<double>();
  return a;
}

inline StrategyConfig strategy_from_json(const Json& j) {
  detail::check_keys(j, "strategy",
                     {"algorithm", "delta", "alpha", "rho", "feddyn_weight_decay", "tau_f",
                      "memory_points_per_class", "server_opt", "zero_curvature"});
  StrategyConfig s;
  s.algorithm = algorithm_from_string(detail::get_or<std::string>(j, "algorithm", "fedlap"));
  s.delta = detail::get_or<double>(j, "delta", 1.0);
  s.alpha = detail::get_or<double>(j, "alpha", 1.0);
  s.feddyn_weight_decay = detail::get_or<double>(j, "feddyn_weight_decay", 0.0);
  s.tau_f = detail::get_or<double>(j, "tau_f", 1.0);
  s.memory_points_per_class = detail::get_or<std::size_t>(j, "memory_points_per_class", 1);
  s.zero_curvature = detail::get_or<bool>(j, "zero_curvature", false);
  if (j.contains("rho")) {
    const Json& r = j.at("rho");
    detail::check_keys(r, "strategy.rho", {"mode", "value", "switch_round"});
    const std::string mode = detail::get_or<std::string>(r, "mode", "nk-over-n");
    if (mode == "nk-over-n")
      s.rho.kind = RhoMode::Kind::NkOverN;
    else if (mode == "one-over-k")
      s.rho.kind = RhoMode::Kind::OneOverK;
    else if (mode == "fixed")
      s.rho.kind = RhoMode::Kind::Fixed;
    else if (mode == "schedule")
      s.rho.kind = RhoMode::Kind::Schedule;
    else
      throw ConfigError("strategy.rho.mode: unknown mode '" + mode +
                        "'; valid modes: nk-over-n one-over-k fixed schedule");
    s.rho.value = detail::get_or<double>(r, "value", 1.0);
    s.rho.switch_round = detail::get_or<std::size_t>(r, "switch_round", 10);
  } else {
    // published defaults: N_k/N for FedLap/FedLap-Func, 1/K for FedLap-Cov
    s.rho.kind = s.algorithm == Algorithm::FedLapCov ? RhoMode::Kind::OneOverK
                                                     : RhoMode::Kind::NkOverN;
  }
  if (j.contains("server_opt")) {
    s.server_opt = adam_from_json(j.at("server_opt"), "strategy.server_opt");
  } else {
    s.server_opt.learning_rate = 1e-3;
    s.server_opt.epochs = 5000;
  }
  return s;
}

inline LocalSolver local_from_json(const Json& j) {
  LocalSolver l;
  const std::string solver = detail::get_or<std::string>(j, "solver", "adam");
  if (solver == "exact") {
    l.exact = true;
  } else if (solver == "adam") {
    l.exact = false;
  } else {
    throw ConfigError("local.solver: unknown solver '" + solver + "'; valid: adam exact");
  }
  l.adam = adam_from_json(j, "local");
  return l;
}

inline ExperimentConfig config_from_json(const Json& j) {
  detail::check_keys(j, "config",
                     {"name", "dataset", "split", "model", "strategy", "local", "rounds", "seeds",
                      "eval_every", "output", "transport"});
  ExperimentConfig c;
  c.name = detail::get_or<std::string>(j, "name", "experiment");
  if (j.contains("dataset")) c.dataset = dataset_from_json(j.at("dataset"));
  if (j.contains("split")) c.split = split_from_json(j.at("split"));
  if (j.contains("model")) c.model = model_from_json(j.at("model"));
  if (j.contains("strategy")) c.strategy = strategy_from_json(j.at("strategy"));
  if (j.contains("local")) c.local = local_from_json(j.at("local"));
  c.rounds = detail::get_or<std::size_t>(j, "rounds", 10);
  c.seeds = detail::get_or<std::vector<std::uint64_t>>(j, "seeds", {0});
  c.eval_every = detail::get_or<std::size_t>(j, "eval_every", 1);
  c.output = detail::get_or<std::string>(j, "output", "");
  if (j.contains("transport")) {
    const Json& t = j.at("transport");
    detail::check_keys(t, "transport", {"kind", "host", "port"});
    const std::string kind = detail::get_or<std::string>(t, "kind", "inproc");
    if (kind == "tcp")
      c.transport.kind = TransportKind::Tcp;
    else if (kind == "inproc")
      c.transport.kind = TransportKind::Inproc;
    else
      throw ConfigError("transport.kind: unknown kind '" + kind + "'; valid: inproc tcp");
    c.transport.host = detail::get_or<std::string>(t, "host", "127.0.0.1");
    c.transport.port = static_cast<std::uint16_t>(detail::get_or<unsigned>(t, "port", 7700));
  }
  return c;
}

// Strategy/model/dataset compatibility; called after defaults are resolved.
inline void validate_config(const ExperimentConfig& c) {
  if (c.rounds > 1000000) throw ConfigError("rounds: implausibly large");
  if (c.seeds.empty()) throw ConfigError("seeds: need at least one seed");
  if (c.eval_every < 1) throw ConfigError("eval_every: must be >= 1");
  if (c.strategy.fedlap_family() && c.strategy.delta <= 0.0)
    throw ConfigError("strategy.delta: must be > 0 for the fedlap family");
  if (c.strategy.algorithm == Algorithm::FedLapFunc) {
    if (c.dataset.kind == DatasetKind::Quadratic)
      throw ConfigError("fedlap-func requires a classification dataset (memory points need classes)");
    if (c.strategy.tau_f < 0.0) throw ConfigError("strategy.tau_f: must be >= 0");
  }
  if (c.dataset.kind == DatasetKind::Quadratic && !c.local.exact &&
      c.local.adam.batch_size != 0)
    throw ConfigError("quadratic datasets train full-batch (set local.batch_size to 0)");
  if (c.dataset.kind == DatasetKind::Csv && c.dataset.path.empty())
    throw ConfigError("dataset.path: required for csv datasets");
}

// ---- to_json -----------------------------------------------------------------

inline Json to_json(const AdamConfig& a, bool include_batching = true) {
  Json j{{"learning_rate", a.learning_rate}, {"beta1", a.beta1},     {"beta2", a.beta2},
         {"eps", a.eps},                     {"epochs", a.epochs}};
  if (include_batching) {
    j["batch_size"] = a.batch_size;
    if (a.grad_clip_norm) j["grad_clip_norm"] = *a.grad_clip_norm;
  }
  return j;
}

inline Json to_json(const ExperimentConfig& c) {
  Json d;
  switch (c.dataset.kind) {
    case DatasetKind::Csv:
      d = {{"kind", "csv"},
           {"name", c.dataset.name},
           {"path", c.dataset.path},
           {"test_fraction", c.dataset.test_fraction},
           {"positive_label", c.dataset.positive_label},
           {"label_col", c.dataset.label_col},
           {"categorical_cols", c.dataset.categorical_cols},
           {"missing_token", c.dataset.missing_token}};
      break;
    case DatasetKind::Idx:
      d = {{"kind", "idx"},
           {"name", c.dataset.name},
           {"train_images", c.dataset.train_images},
           {"train_labels", c.dataset.train_labels},
           {"test_images", c.dataset.test_images},
           {"test_labels", c.dataset.test_labels},
           {"subsample_fraction", c.dataset.subsample_fraction}};
      break;
    case DatasetKind::Blobs:
      d = {{"kind", "blobs"},
           {"name", c.dataset.name},
           {"classes", c.dataset.blobs.class_count},
           {"dim", c.dataset.blobs.dim},
           {"train_per_class", c.dataset.blobs.train_per_class},
           {"test_per_class", c.dataset.blobs.test_per_class},
           {"separation", c.dataset.blobs.separation},
           {"noise", c.dataset.blobs.noise},
           {"seed", c.dataset.blobs_seed}};
      break;
    case DatasetKind::Quadratic:
      d = {{"kind", "quadratic"},
           {"name", c.dataset.name},
           {"clients", c.dataset.quad_clients},
           {"dim", c.dataset.quad_dim},
           {"rows", c.dataset.quad_rows},
           {"diagonal", c.dataset.quad_diagonal},
           {"scale", c.dataset.quad_scale},
           {"seed", c.dataset.quad_seed}};
      break;
  }
  Json rho;
  switch (c.strategy.rho.kind) {
    case RhoMode::Kind::NkOverN: rho = {{"mode", "nk-over-n"}}; break;
    case RhoMode::Kind::OneOverK: rho = {{"mode", "one-over-k"}}; break;
    case RhoMode::Kind::Fixed: rho = {{"mode", "fixed"}, {"value", c.strategy.rho.value}}; break;
    case RhoMode::Kind::Schedule:
      rho = {{"mode", "schedule"}, {"switch_round", c.strategy.rho.switch_round}};
      break;
  }
  Json local = to_json(c.local.adam);
  local["solver"] = c.local.exact ? "exact" : "adam";
  return Json{
      {"name", c.name},
      {"dataset", d},
      {"split",
       {{"kind", to_string(c.split.kind)},
        {"clients", c.split.clients},
        {"alpha1", c.split.alpha1},
        {"alpha2", c.split.alpha2},
        {"seed", c.split.seed}}},
      {"model",
       {{"kind", to_string(c.model.kind)},
        {"input_dim", c.model.input_dim},
        {"classes", c.model.class_count},
        {"hidden", c.model.hidden_sizes},
        {"bias", c.model.with_bias}}},
      {"strategy",
       {{"algorithm", to_string(c.strategy.algorithm)},
        {"delta", c.strategy.delta},
        {"alpha", c.strategy.alpha},
        {"rho", rho},
        {"feddyn_weight_decay", c.strategy.feddyn_weight_decay},
        {"tau_f", c.strategy.tau_f},
        {"memory_points_per_class", c.strategy.memory_points_per_class},
        {"zero_curvature", c.strategy.zero_curvature},
        {"server_opt", to_json(c.strategy.server_opt, false)}}},
      {"local", local},
      {"rounds", c.rounds},
      {"seeds", c.seeds},
      {"eval_every", c.eval_every},
      {"output", c.output},
      {"transport",
       {{"kind", c.transport.kind == TransportKind::Tcp ? "tcp" : "inproc"},
        {"host", c.transport.host},
        {"port", c.transport.port}}}};
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  auto cfg = config_from_json(j);
  validate_config(cfg);
  return cfg;
}

// Apply one key=value override on a raw json config; the path is dotted
// (strategy.delta=0.1). The value parses as JSON when possible, else string.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (...) {
    value = raw;
  }
  Json* node = &j;
  std::istringstream is(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(is, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = value;
}

}  // namespace fedlap
