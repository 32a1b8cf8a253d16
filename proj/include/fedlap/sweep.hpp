// Hyperparameter sweeps (cross-product of config overrides) and comparison
// tables over JSONL results files.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedlap/harness.hpp"

namespace fedlap {

// ---- results file reading ------------------------------------------------------

struct ResultsFile {
  std::string path;
  ExperimentConfig cfg;
  std::map<std::uint64_t, std::vector<RoundRecord>> by_seed;
};

inline ResultsFile read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open results file: " + path);
  ResultsFile out;
  out.path = path;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j = Json::parse(line);
    const std::string type = j.value("type", "");
    if (type == "header") {
      out.cfg = config_from_json(j.at("config"));
      have_header = true;
    } else if (type == "round") {
      RoundRecord r = record_from_json(j);
      out.by_seed[r.seed].push_back(r);
    }
  }
  if (!have_header) throw std::runtime_error(path + ": missing header line");
  for (auto& [seed, recs] : out.by_seed)
    std::sort(recs.begin(), recs.end(),
              [](const RoundRecord& a, const RoundRecord& b) { return a.round < b.round; });
  return out;
}

// Latest record at or before the requested round.
inline const RoundRecord* record_at(const std::vector<RoundRecord>& recs, std::size_t round) {
  const RoundRecord* best = nullptr;
  for (const auto& r : recs)
    if (r.round <= round && (!best || r.round > best->round)) best = &r;
  return best;
}

// ---- tables ---------------------------------------------------------------------

struct TableOptions {
  enum class Mode { AvgLast3, MaxLast3, RoundsTo } mode = Mode::AvgLast3;
  std::vector<std::size_t> rounds = {10};     // accuracy modes
  std::vector<double> thresholds = {0.75};    // rounds-to-accuracy mode
};

namespace detail {

struct CellStats {
  double mean = 0.0;
  double stddev = 0.0;
  bool valid = false;
};

inline CellStats stats_of(const std::vector<double>& xs) {
  CellStats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  for (double x : xs) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(xs.size()));
  s.valid = true;
  return s;
}

}  // namespace detail

// rows = dataset x algorithm, columns = requested rounds (or thresholds),
// cells = mean(std) across every seed found in the matching files.
// Percentages print with one decimal; unreached thresholds print "--".
inline std::string make_table(const std::vector<ResultsFile>& files, const TableOptions& opt,
                              std::string* csv_out = nullptr) {
  struct Key {
    std::string dataset, algorithm;
    auto operator<=>(const Key&) const = default;
  };
  std::map<Key, std::vector<const ResultsFile*>> groups;
  for (const auto& f : files)
    groups[{f.cfg.dataset.name, to_string(f.cfg.strategy.algorithm)}].push_back(&f);

  const bool rounds_mode = opt.mode == TableOptions::Mode::RoundsTo;
  std::vector<std::string> col_names;
  if (rounds_mode)
    for (double t : opt.thresholds) {
      std::ostringstream os;
      os << std::fixed << std::setprecision(1) << 100.0 * t << "%";
      col_names.push_back(os.str());
    }
  else
    for (std::size_t r : opt.rounds) col_names.push_back("round " + std::to_string(r));

  std::ostringstream text, csv;
  csv << "dataset,algorithm";
  for (const auto& c : col_names) csv << "," << c;
  csv << "\n";

  std::vector<std::vector<std::string>> cells;
  std::vector<Key> keys;
  for (const auto& [key, group] : groups) {
    keys.push_back(key);
    std::vector<std::string> row;
    for (std::size_t col = 0; col < col_names.size(); ++col) {
      std::vector<double> values;
      bool unreached = false;
      for (const ResultsFile* f : group) {
        for (const auto& [seed, recs] : f->by_seed) {
          if (rounds_mode) {
            auto hit = rounds_to_accuracy(recs, opt.thresholds[col]);
            if (hit)
              values.push_back(static_cast<double>(*hit));
            else
              unreached = true;
          } else {
            const RoundRecord* rec = record_at(recs, opt.rounds[col]);
            if (!rec) continue;
            values.push_back(opt.mode == TableOptions::Mode::AvgLast3 ? rec->acc_avg_last3
                                                                      : rec->acc_max_last3);
          }
        }
      }
      std::ostringstream cell;
      if (rounds_mode && (unreached || values.empty())) {
        cell << "--";
      } else if (rounds_mode) {
        const auto s = detail::stats_of(values);
        cell << std::fixed << std::setprecision(0) << s.mean << "(" << s.stddev << ")";
      } else if (values.empty()) {
        cell << "--";
      } else {
        const auto s = detail::stats_of(values);
        cell << std::fixed << std::setprecision(1) << 100.0 * s.mean << "("
             << std::setprecision(1) << 100.0 * s.stddev << ")";
      }
      row.push_back(cell.str());
    }
    cells.push_back(std::move(row));
  }

  // column widths for the text rendering
  std::size_t name_w = std::string("dataset/algorithm").size();
  for (const auto& k : keys) name_w = std::max(name_w, k.dataset.size() + k.algorithm.size() + 1);
  std::vector<std::size_t> widths(col_names.size());
  for (std::size_t c = 0; c < col_names.size(); ++c) {
    widths[c] = col_names[c].size();
    for (const auto& row : cells) widths[c] = std::max(widths[c], row[c].size());
  }
  text << std::left << std::setw(static_cast<int>(name_w)) << "dataset/algorithm";
  for (std::size_t c = 0; c < col_names.size(); ++c)
    text << "  " << std::setw(static_cast<int>(widths[c])) << col_names[c];
  text << "\n";
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const std::string name = keys[i].dataset + "/" + keys[i].algorithm;
    text << std::left << std::setw(static_cast<int>(name_w)) << name;
    csv << keys[i].dataset << "," << keys[i].algorithm;
    for (std::size_t c = 0; c < col_names.size(); ++c) {
      text << "  " << std::setw(static_cast<int>(widths[c])) << cells[i][c];
      csv << "," << cells[i][c];
    }
    text << "\n";
    csv << "\n";
  }
  if (csv_out) *csv_out = csv.str();
  return text.str();
}

// ---- sweeps ---------------------------------------------------------------------

struct SweepSpec {
  Json base;                                                   // base config json
  std::vector<std::pair<std::string, std::vector<Json>>> axes;  // dotted key -> values
  std::vector<std::uint64_t> seeds;                             // optional override
  std::vector<std::size_t> report_rounds = {10};
  std::string output_dir = "sweep-results";
};

inline SweepSpec sweep_from_json(const Json& j, const std::string& base_dir) {
  detail::check_keys(j, "sweep", {"base_config", "base", "axes", "seeds", "report_rounds",
                                  "output_dir"});
  SweepSpec s;
  if (j.contains("base_config")) {
    std::filesystem::path p = j.at("base_config").get<std::string>();
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    std::ifstream in(p);
    if (!in) throw ConfigError("sweep: cannot open base config " + p.string());
    in >> s.base;
  } else if (j.contains("base")) {
    s.base = j.at("base");
  } else {
    throw ConfigError("sweep: need base or base_config");
  }
  if (!j.contains("axes")) throw ConfigError("sweep: need axes");
  for (const auto& [key, values] : j.at("axes").items()) {
    if (!values.is_array() || values.empty())
      throw ConfigError("sweep: axis '" + key + "' must be a non-empty array");
    s.axes.emplace_back(key, std::vector<Json>(values.begin(), values.end()));
  }
  if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("report_rounds"))
    s.report_rounds = j.at("report_rounds").get<std::vector<std::size_t>>();
  if (j.contains("output_dir")) s.output_dir = j.at("output_dir").get<std::string>();
  return s;
}

inline std::size_t sweep_grid_size(const SweepSpec& s) {
  std::size_t n = 1;
  for (const auto& [key, values] : s.axes) n *= values.size();
  return n;
}

// Resolved config for one grid point (validates override keys).
inline ExperimentConfig sweep_point(const SweepSpec& s, std::size_t index,
                                    std::string* label = nullptr) {
  Json j = s.base;
  std::size_t rem = index;
  std::string lab;
  for (const auto& [key, values] : s.axes) {
    const std::size_t pick = rem % values.size();
    rem /= values.size();
    Json node = values[pick];
    apply_override(j, key + "=" + node.dump());
    if (!lab.empty()) lab += "_";
    std::string vs = node.dump();
    std::erase_if(vs, [](char c) { return c == '"' || c == '[' || c == ']' || c == ','; });
    lab += key.substr(key.rfind('.') + 1) + vs;
  }
  if (!s.seeds.empty()) j["seeds"] = s.seeds;
  auto cfg = config_from_json(j);
  validate_config(cfg);
  if (label) *label = lab;
  return cfg;
}

struct SweepOutcome {
  std::vector<std::string> result_files;
  std::string summary_csv_path;
};

// One results file per grid point per seed, plus a summary CSV of
// mean/std acc_avg_last3 at the requested rounds.
inline SweepOutcome run_sweep(const SweepSpec& s) {
  namespace fs = std::filesystem;
  fs::create_directories(s.output_dir);
  SweepOutcome out;
  const std::size_t grid = sweep_grid_size(s);

  std::ostringstream csv;
  csv << "grid_index,label";
  for (std::size_t r : s.report_rounds) csv << ",round" << r << "_mean,round" << r << "_std";
  csv << "\n";

  for (std::size_t g = 0; g < grid; ++g) {
    std::string label;
    ExperimentConfig cfg = sweep_point(s, g, &label);
    std::map<std::size_t, std::vector<double>> per_round;
    for (const std::uint64_t seed : cfg.seeds) {
      ExperimentConfig one = cfg;
      one.seeds = {seed};
      std::ostringstream name;
      name << "grid" << std::setw(3) << std::setfill('0') << g << "_seed" << seed << ".jsonl";
      one.output = (fs::path(s.output_dir) / name.str()).string();
      auto results = run_experiment(one);
      out.result_files.push_back(one.output);
      for (std::size_t r : s.report_rounds) {
        const RoundRecord* rec = record_at(results[0].records, r);
        if (rec && !results[0].failed) per_round[r].push_back(rec->acc_avg_last3);
      }
    }
    csv << g << "," << label;
    for (std::size_t r : s.report_rounds) {
      const auto st = detail::stats_of(per_round[r]);
      csv << "," << st.mean << "," << st.stddev;
    }
    csv << "\n";
  }
  out.summary_csv_path = (fs::path(s.output_dir) / "summary.csv").string();
  std::ofstream os(out.summary_csv_path);
  os << csv.str();
  return out;
}

}  // namespace fedlap
