#pragma once

#include <iomanip>
#include <sstream>
#include <string>

#include "infdbg/engine.hpp"
#include "infdbg/wire.hpp"

namespace infdbg {

enum class ReportFormat { text, json };

namespace detail {

inline std::string cell(const std::optional<double>& v, int precision) {
  if (!v) return "-";
  if (!std::isfinite(*v)) return *v > 0 ? "inf" : "nan";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

inline void write_warning(std::ostream& os, const Warning& w) {
  os << "  [" << to_string(w.severity) << "] " << to_string(w.kind);
  for (const auto& v : w.variables) {
    os << " " << v.name;
    if (!v.indices.empty()) {
      os << " indices=";
      for (std::size_t i = 0; i < v.indices.size(); ++i) os << (i ? "," : "") << v.indices[i];
    }
  }
  if (!w.chains.empty()) {
    os << " chains=";
    for (std::size_t i = 0; i < w.chains.size(); ++i) os << (i ? "," : "") << w.chains[i];
  }
  os << " id=" << w.id << " seen=" << w.first_seen << ".." << w.last_seen << "\n";
  os << "    " << w.message << "\n";
  os << "    suggestion: " << w.suggestion << "\n";
  for (const auto& [k, v] : w.evidence) os << "    evidence " << k << " = " << cell(v, 4) << "\n";
  for (const auto& [k, v] : w.notes) os << "    " << k << ": " << v << "\n";
  if (w.suggested_code) {
    os << "    suggested code:\n";
    std::istringstream lines(*w.suggested_code);
    std::string line;
    while (std::getline(lines, line)) os << "      " << line << "\n";
  }
  if (w.source_span)
    os << "    source: " << w.source_span->file << ":" << w.source_span->line_start << "-"
       << w.source_span->line_end << "\n";
}

}  // namespace detail

/// Stats plus active and resolved warnings of the latest evaluation. Contains
/// no wall-clock data, so replays of one log render identically.
inline std::string render_report(const Engine& engine, const std::string& run_id, ReportFormat format) {
  const auto summary = engine.summary(run_id);
  const auto state = engine.latest(run_id);
  if (format == ReportFormat::json) {
    wire::json progress = wire::json::array();
    for (const auto& c : summary.chains) progress.push_back({{"n_tune", c.n_tune}, {"n_sample", c.n_sample}});
    wire::json j{{"run", wire::to_json(summary.metadata)},
                 {"status", to_string(summary.status)},
                 {"stop_requested", summary.stop_requested},
                 {"progress", progress}};
    j["run"].erase("started_at");
    if (state) {
      j["diagnostics"] = wire::to_json(state->report);
      j["warnings"] = wire::to_json(state->warnings);
    }
    return j.dump(2) + "\n";
  }

  std::ostringstream os;
  const auto& m = summary.metadata;
  os << "run " << m.run_id << "\n";
  os << "  algorithm: " << m.algorithm.name() << "  chains: " << m.n_chains << "  tune: " << m.n_tune
     << "  draws planned: " << m.n_draws_planned << "  status: " << to_string(summary.status) << "\n";
  os << "  post-tune draws per chain:";
  for (const auto& c : summary.chains) os << " " << c.n_sample;
  os << "\n";
  if (!state) {
    os << "  no analysis yet\n";
    return os.str();
  }
  const auto& r = state->report;
  os << "\n"
     << std::left << std::setw(16) << "variable" << std::right << std::setw(12) << "mean" << std::setw(12) << "sd"
     << std::setw(10) << "rhat" << std::setw(12) << "ess_bulk" << "\n";
  for (const auto& s : r.stats) {
    if (s.chain != kAllChains) continue;
    os << std::left << std::setw(16) << s.variable << std::right << std::setw(12) << detail::cell(s.mean, 4)
       << std::setw(12) << detail::cell(s.sd, 4) << std::setw(10) << detail::cell(s.rhat, 4) << std::setw(12)
       << detail::cell(s.ess_bulk, 1) << (s.degenerate ? "  (constant)" : "") << "\n";
  }
  os << "\n" << std::left << std::setw(8) << "chain" << std::right << std::setw(12) << "acceptance" << std::setw(12)
     << "stuck_run" << "\n";
  for (const auto& c : r.chains)
    os << std::left << std::setw(8) << c.chain << std::right << std::setw(12) << detail::cell(c.acceptance_rate, 4)
       << std::setw(12) << c.stuck_run_length << "\n";
  for (const auto& f : r.funnels)
    os << "funnel candidate: " << f.candidate.path_text() << "  sample score " << detail::cell(f.score, 4) << "\n";

  const auto& w = state->warnings;
  os << "\nactive warnings (" << w.added.size() + w.persisting.size() << "):\n";
  std::vector<Warning> active = w.added;
  active.insert(active.end(), w.persisting.begin(), w.persisting.end());
  std::sort(active.begin(), active.end(), [](const Warning& a, const Warning& b) {
    return a.kind != b.kind ? a.kind < b.kind : a.id < b.id;
  });
  for (const auto& x : active) detail::write_warning(os, x);
  os << "resolved warnings (" << w.resolved.size() << "):\n";
  for (const auto& x : w.resolved) detail::write_warning(os, x);
  return os.str();
}

}  // namespace infdbg
