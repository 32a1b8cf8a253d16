// fedlap: run federated experiments from JSON configs, sweep hyperparameters,
// query the centralized oracle, render comparison tables, and drive the TCP
// transport (serve/client).
//
// Exit codes: 0 ok, 1 runtime failure, 2 usage/config error.

#include <glob.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedlap/config.hpp"
#include "fedlap/harness.hpp"
#include "fedlap/sweep.hpp"
#include "fedlap/tcp.hpp"

namespace {

using namespace fedlap;

ExperimentConfig load_with_overrides(const std::string& path,
                                     const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + std::string(e.what()));
  }
  for (const auto& o : overrides) apply_override(j, o);
  auto cfg = config_from_json(j);
  validate_config(cfg);
  return cfg;
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> out;
  if (::glob(pattern.c_str(), GLOB_TILDE, nullptr, &g) == 0)
    for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
  ::globfree(&g);
  return out;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = load_with_overrides(config_path, overrides);
  if (cfg.transport.kind == TransportKind::Tcp)
    std::cout << "note: running in-process; use `fedlap serve`/`fedlap client` for the wire "
                 "transport (results are identical)\n";
  if (cfg.output.empty())
    cfg.output = std::filesystem::path(config_path).stem().string() + ".jsonl";
  std::cout << "running " << cfg.name << " (" << to_string(cfg.strategy.algorithm) << ", "
            << cfg.seeds.size() << " seed(s), " << cfg.rounds << " rounds)\n";
  auto results = run_experiment(cfg);
  bool any_failed = false;
  for (const auto& r : results) {
    if (r.failed) {
      any_failed = true;
      std::cerr << "seed " << r.seed << " failed: " << r.error << "\n";
    } else if (!r.records.empty()) {
      const auto& last = r.records.back();
      std::cout << "seed " << r.seed << ": round " << last.round
                << " acc=" << 100.0 * last.test_accuracy << "% nll=" << last.test_nll << "\n";
    }
  }
  std::cout << "results written to " << cfg.output << "\n";
  return any_failed ? 1 : 0;
}

int cmd_sweep(const std::string& sweep_path) {
  std::ifstream in(sweep_path);
  if (!in) throw ConfigError("cannot open sweep file: " + sweep_path);
  Json j;
  in >> j;
  SweepSpec spec = sweep_from_json(j, std::filesystem::path(sweep_path).parent_path().string());
  const std::size_t grid = sweep_grid_size(spec);
  std::size_t seeds = spec.seeds.empty()
                          ? config_from_json(spec.base).seeds.size()
                          : spec.seeds.size();
  std::cout << "sweep: " << grid << " grid points x " << seeds << " seed(s) = "
            << grid * seeds << " runs -> " << spec.output_dir << "\n";
  auto outcome = run_sweep(spec);
  std::cout << outcome.result_files.size() << " results files; summary at "
            << outcome.summary_csv_path << "\n";
  return 0;
}

int cmd_oracle(const std::string& config_path, const std::vector<std::string>& overrides,
               std::optional<double> delta, std::uint64_t seed) {
  ExperimentConfig cfg = load_with_overrides(config_path, overrides);
  auto res = centralized_oracle(cfg, seed, delta);
  Json j{{"delta", delta.value_or(cfg.strategy.delta)},
         {"train_nll", res.train_nll},
         {"test_accuracy", res.test_accuracy},
         {"test_nll", res.test_nll},
         {"param_count", res.w.size()}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_table(const std::vector<std::string>& patterns, const TableOptions& opt,
              const std::string& csv_path) {
  std::vector<ResultsFile> files;
  for (const auto& pat : patterns)
    for (const auto& path : expand_glob(pat)) files.push_back(read_results(path));
  if (files.empty()) throw ConfigError("table: no results files matched");
  std::string csv;
  std::cout << make_table(files, opt, &csv);
  if (!csv_path.empty()) {
    std::ofstream os(csv_path);
    os << csv;
    std::cout << "csv written to " << csv_path << "\n";
  }
  return 0;
}

int cmd_serve(const std::string& config_path, const std::vector<std::string>& overrides,
              std::uint16_t port) {
  ExperimentConfig cfg = load_with_overrides(config_path, overrides);
  TcpServer server(cfg, port ? port : cfg.transport.port);
  std::cout << "serving on port " << server.port() << std::endl;
  auto results = server.serve();
  for (const auto& r : results)
    if (r.failed) {
      std::cerr << "seed " << r.seed << " failed: " << r.error << "\n";
      return 1;
    }
  if (!cfg.output.empty()) std::cout << "results written to " << cfg.output << "\n";
  return 0;
}

int cmd_client(const std::string& config_path, const std::vector<std::string>& overrides,
               std::size_t id, const std::string& host, std::uint16_t port) {
  ExperimentConfig cfg = load_with_overrides(config_path, overrides);
  tcp_client(cfg, host.empty() ? cfg.transport.host : host, port ? port : cfg.transport.port, id);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated optimization laboratory"};
  app.require_subcommand(1);

  std::string config_path, sweep_path, csv_path, host;
  std::vector<std::string> overrides, patterns;
  std::vector<std::size_t> rounds{10};
  std::vector<double> thresholds{0.75};
  std::string mode = "avg";
  std::optional<double> oracle_delta;
  std::uint64_t oracle_seed = 0;
  std::uint16_t port = 0;
  std::size_t client_id = 0;

  long long rounds_override = -1;
  auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("config", config_path, "config file")->required();
  run->add_option("--set", overrides, "override, e.g. strategy.delta=0.1");
  run->add_option("--rounds", rounds_override, "shortcut for --set rounds=N");

  auto* sweep = app.add_subcommand("sweep", "run a hyperparameter sweep");
  sweep->add_option("sweep", sweep_path, "sweep spec file")->required();

  auto* oracle = app.add_subcommand("oracle", "train the centralized oracle");
  oracle->add_option("config", config_path, "config file")->required();
  oracle->add_option("--set", overrides, "config override");
  oracle->add_option("--delta", oracle_delta, "override the regularizer");
  oracle->add_option("--seed", oracle_seed, "seed");

  auto* table = app.add_subcommand("table", "render a comparison table from results files");
  table->add_option("results", patterns, "results file(s) or glob(s)")->required();
  table->add_option("--rounds", rounds, "rounds to report");
  table->add_option("--thresholds", thresholds, "accuracy thresholds (rounds mode)");
  table->add_option("--mode", mode, "avg | max | rounds")
      ->check(CLI::IsMember({"avg", "max", "rounds"}));
  table->add_option("--csv", csv_path, "also write csv here");

  auto* serve = app.add_subcommand("serve", "run the TCP server side of an experiment");
  serve->add_option("config", config_path, "config file")->required();
  serve->add_option("--set", overrides, "config override");
  serve->add_option("--port", port, "listen port (0 = from config)");

  auto* client = app.add_subcommand("client", "run one TCP client");
  client->add_option("config", config_path, "config file")->required();
  client->add_option("--set", overrides, "config override");
  client->add_option("--id", client_id, "client id")->required();
  client->add_option("--host", host, "server host");
  client->add_option("--port", port, "server port (0 = from config)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      if (rounds_override >= 0)
        overrides.push_back("rounds=" + std::to_string(rounds_override));
      return cmd_run(config_path, overrides);
    }
    if (sweep->parsed()) return cmd_sweep(sweep_path);
    if (oracle->parsed()) return cmd_oracle(config_path, overrides, oracle_delta, oracle_seed);
    if (table->parsed()) {
      TableOptions opt;
      opt.rounds = rounds;
      opt.thresholds = thresholds;
      opt.mode = mode == "max"      ? TableOptions::Mode::MaxLast3
                 : mode == "rounds" ? TableOptions::Mode::RoundsTo
                                    : TableOptions::Mode::AvgLast3;
      return cmd_table(patterns, opt, csv_path);
    }
    if (serve->parsed()) return cmd_serve(config_path, overrides, port);
    if (client->parsed()) return cmd_client(config_path, overrides, client_id, host, port);
  } catch (const fedlap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
