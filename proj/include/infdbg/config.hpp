#pragma once

#include <chrono>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "infdbg/analysis.hpp"
#include "infdbg/warnings.hpp"

namespace infdbg {

/// Recompute when any chain gained `every_n_iterations` post-tune draws, or
/// when `max_interval` passed with unanalyzed data, whichever comes first.
struct AnalysisSchedule {
  std::size_t every_n_iterations = 100;
  std::chrono::milliseconds max_interval{1000};
};

struct EngineConfig {
  Thresholds thresholds;
  AnalysisSchedule schedule;
  AnalysisOptions analysis;
  bool include_tune = false;
  std::string spill_dir;  // empty: no JSONL spill

  void validate() const {
    thresholds.validate();
    if (schedule.every_n_iterations < 1) throw Error(ErrorCode::invalid_argument, "every_n_iterations must be > 0");
    if (schedule.max_interval.count() < 1) throw Error(ErrorCode::invalid_argument, "max_interval_ms must be > 0");
    if (analysis.acceptance_window < 1) throw Error(ErrorCode::invalid_argument, "acceptance_window must be > 0");
  }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_argument, key + ": expected a number, got \"" + v + "\"");
  }
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  double d = parse_double(key, v);
  if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d)))
    throw Error(ErrorCode::invalid_argument, key + ": expected a non-negative integer");
  return static_cast<std::size_t>(d);
}

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Applies one `key = value` setting. Band values are written "low,high".
inline void apply_setting(EngineConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_count;
  using detail::parse_double;
  auto& th = cfg.thresholds;
  if (key == "rhat_warn") th.rhat_warn = parse_double(key, value);
  else if (key == "ess_low_per_chain") th.ess_low_per_chain = parse_double(key, value);
  else if (key == "stuck_window") th.stuck_window = parse_count(key, value);
  else if (key == "min_draws_for_warnings") th.min_draws_for_warnings = parse_count(key, value);
  else if (key == "burn_in_full_threshold") th.burn_in_full_threshold = parse_double(key, value);
  else if (key == "funnel_score_min") th.funnel_score_min = parse_double(key, value);
  else if (key == "acceptance_window") cfg.analysis.acceptance_window = parse_count(key, value);
  else if (key == "every_n_iterations") cfg.schedule.every_n_iterations = parse_count(key, value);
  else if (key == "max_interval_ms")
    cfg.schedule.max_interval = std::chrono::milliseconds(static_cast<long>(parse_count(key, value)));
  else if (key == "include_tune") {
    if (value != "true" && value != "false") throw Error(ErrorCode::invalid_argument, key + ": expected true or false");
    cfg.include_tune = value == "true";
  } else if (key == "spill_dir") cfg.spill_dir = value;
  else if (key.rfind("band.", 0) == 0) {
    const auto name = key.substr(5);
    auto algo = Algorithm::parse(name);
    if (algo.kind == AlgorithmKind::other && name != "other")
      throw Error(ErrorCode::invalid_argument,
                  key + ": bands are keyed by random_walk_mh, hmc, nuts or other");
    auto comma = value.find(',');
    if (comma == std::string::npos) throw Error(ErrorCode::invalid_argument, key + ": expected \"low,high\"");
    AcceptanceBand b{parse_double(key, detail::trim(value.substr(0, comma))),
                     parse_double(key, detail::trim(value.substr(comma + 1)))};
    th.acceptance_bands[algo.kind] = b;
  } else {
    throw Error(ErrorCode::invalid_argument, "unknown config key \"" + key + "\"");
  }
}

/// Reads a config file: either a JSON object of settings or `key = value`
/// lines (`#` starts a comment).
inline void load_config_file(EngineConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::invalid_argument, "cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const auto text = buf.str();
  const auto body = detail::trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::invalid_argument, path + ": " + e.what());
    }
    for (const auto& [k, v] : j.items()) {
      if (v.is_string()) apply_setting(cfg, k, v.get<std::string>());
      else if (v.is_boolean()) apply_setting(cfg, k, v.get<bool>() ? "true" : "false");
      else if (v.is_array() && v.size() == 2) apply_setting(cfg, k, v[0].dump() + "," + v[1].dump());
      else apply_setting(cfg, k, v.dump());
    }
  } else {
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorCode::invalid_argument, path + ":" + std::to_string(lineno) + ": expected key = value");
      apply_setting(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
  }
  cfg.validate();
}

}  // namespace infdbg
