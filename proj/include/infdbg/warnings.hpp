#pragma once

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "infdbg/analysis.hpp"
#include "infdbg/chain_store.hpp"
#include "infdbg/funnel.hpp"

namespace infdbg {

struct AcceptanceBand {
  double low = 0.0;
  double high = 1.0;

  bool operator==(const AcceptanceBand&) const = default;
};

/// Every rule trigger. Defaults: R-hat bound 1.01; low ESS means fewer than
/// 100 effective draws per chain; acceptance bands keyed by algorithm.
struct Thresholds {
  double rhat_warn = 1.01;
  double ess_low_per_chain = 100.0;
  std::map<AlgorithmKind, AcceptanceBand> acceptance_bands = {
      {AlgorithmKind::random_walk_mh, {0.15, 0.45}},
      {AlgorithmKind::hmc, {0.60, 0.90}},
      {AlgorithmKind::nuts, {0.70, 0.95}},
      {AlgorithmKind::other, {0.10, 0.95}},
  };
  std::size_t stuck_window = 200;
  std::size_t min_draws_for_warnings = 200;
  double burn_in_full_threshold = 1.05;
  double funnel_score_min = 0.2;

  AcceptanceBand band_for(const Algorithm& a) const {
    auto it = acceptance_bands.find(a.kind);
    if (it != acceptance_bands.end()) return it->second;
    return acceptance_bands.at(AlgorithmKind::other);
  }

  void validate() const {
    if (!(rhat_warn > 1.0)) throw Error(ErrorCode::invalid_argument, "rhat_warn must be > 1");
    for (const auto& [k, b] : acceptance_bands)
      if (!(0.0 <= b.low && b.low < b.high && b.high <= 1.0))
        throw Error(ErrorCode::invalid_argument, "acceptance band must satisfy 0 <= low < high <= 1");
    if (!acceptance_bands.count(AlgorithmKind::other))
      throw Error(ErrorCode::invalid_argument, "acceptance band for 'other' is required");
  }

  bool operator==(const Thresholds&) const = default;
};

enum class WarningKind {
  HighRhat,
  BurnIn,
  FunnelAcceptance,
  LowEssHighAcceptance,
  LowEssLowAcceptance,
  StuckChain,
  LowEssIsolated,
  AcceptanceIsolated,
};

enum class Severity { info, warn, critical };

inline const char* to_string(WarningKind k) {
  switch (k) {
    case WarningKind::HighRhat: return "HighRhat";
    case WarningKind::BurnIn: return "BurnIn";
    case WarningKind::FunnelAcceptance: return "FunnelAcceptance";
    case WarningKind::LowEssHighAcceptance: return "LowEssHighAcceptance";
    case WarningKind::LowEssLowAcceptance: return "LowEssLowAcceptance";
    case WarningKind::StuckChain: return "StuckChain";
    case WarningKind::LowEssIsolated: return "LowEssIsolated";
    case WarningKind::AcceptanceIsolated: return "AcceptanceIsolated";
  }
  return "Unknown";
}

inline const char* to_string(Severity s) {
  switch (s) {
    case Severity::info: return "info";
    case Severity::warn: return "warn";
    case Severity::critical: return "critical";
  }
  return "warn";
}

/// Fix suggestion shown for each warning kind.
inline const char* suggestion_for(WarningKind k) {
  switch (k) {
    case WarningKind::HighRhat: return "See other warnings. Check rank plots.";
    case WarningKind::BurnIn: return "Increase the burn-in period.";
    case WarningKind::FunnelAcceptance: return "Reparameterize the model.";
    case WarningKind::LowEssHighAcceptance: return "Increase the proposer's step size.";
    case WarningKind::LowEssLowAcceptance: return "Lower the proposer's step size.";
    case WarningKind::StuckChain: return "Check your proposal functions and step size.";
    case WarningKind::LowEssIsolated: return "Check other warnings, they might be indicative.";
    case WarningKind::AcceptanceIsolated: return "Maybe change the step size.";
  }
  return "";
}

struct AffectedVariable {
  std::string name;                  // root (unflattened) name
  std::vector<std::size_t> indices;  // flat indices involved

  bool operator==(const AffectedVariable&) const = default;
};

struct Warning {
  std::string id;
  WarningKind kind = WarningKind::HighRhat;
  Severity severity = Severity::warn;
  std::vector<AffectedVariable> variables;  // empty for run-level warnings
  std::vector<int> chains;
  std::map<std::string, double> evidence;
  std::map<std::string, std::string> notes;  // non-numeric evidence (funnel path)
  std::string message;
  std::string suggestion;
  std::optional<std::string> suggested_code;
  std::optional<SourceSpan> source_span;
  std::uint64_t first_seen = 0;
  std::uint64_t last_seen = 0;

  std::string root() const { return variables.empty() ? std::string() : variables.front().name; }
  bool operator==(const Warning&) const = default;
};

/// FNV-1a over (kind, root variable, chain set), hex encoded.
inline std::string warning_id(WarningKind kind, const std::string& root, const std::vector<int>& chains) {
  std::string key = std::string(to_string(kind)) + "|" + root + "|";
  for (std::size_t i = 0; i < chains.size(); ++i) key += (i ? "," : "") + std::to_string(chains[i]);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

namespace detail {

inline std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

inline std::string join_flat(const std::vector<std::string>& names) {
  std::string s;
  for (std::size_t i = 0; i < names.size(); ++i) s += (i ? ", " : "") + names[i];
  return s;
}

inline std::vector<int> all_chains(int n) {
  std::vector<int> c(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = i;
  return c;
}

}  // namespace detail

/// Rule table over one diagnostics report. Pure: same inputs, same output.
///
/// Per root variable, FunnelAcceptance outranks LowEssHigh/LowAcceptance,
/// which outrank LowEssIsolated; at most one of them fires. AcceptanceIsolated
/// is run-level and suppressed once any of those three fired. HighRhat, BurnIn
/// and StuckChain are independent.
inline std::vector<Warning> evaluate(const DiagnosticsReport& report,
                                     const std::vector<FunnelCandidate>& candidates,
                                     const ModelDescriptor& descriptor, const Thresholds& th,
                                     const RunMetadata& metadata) {
  std::vector<Warning> out;
  if (report.chains.empty() || report.min_sample_draws < th.min_draws_for_warnings) return out;

  const auto band = th.band_for(metadata.algorithm);
  const double ess_threshold = th.ess_low_per_chain * static_cast<double>(report.n_chains);
  const auto every_chain = detail::all_chains(report.n_chains);

  std::vector<double> rates;
  std::vector<int> low_chains, high_chains;
  for (const auto& c : report.chains) {
    if (!c.acceptance_rate) continue;
    rates.push_back(*c.acceptance_rate);
    if (*c.acceptance_rate < band.low) low_chains.push_back(c.chain);
    if (*c.acceptance_rate > band.high) high_chains.push_back(c.chain);
  }
  const std::optional<double> acceptance =
      rates.empty() ? std::nullopt : std::optional<double>(detail::mean(rates));
  const bool acc_low = acceptance && *acceptance < band.low;
  const bool acc_high = acceptance && *acceptance > band.high;

  auto make = [&](WarningKind kind, Severity sev, const std::string& root, std::vector<std::size_t> idx,
                  std::vector<int> chains) {
    Warning w;
    w.kind = kind;
    w.severity = sev;
    if (!root.empty()) w.variables.push_back({root, std::move(idx)});
    w.chains = std::move(chains);
    w.id = warning_id(kind, root, w.chains);
    w.suggestion = suggestion_for(kind);
    w.first_seen = w.last_seen = report.frontier;
    return w;
  };
  auto add_acceptance = [&](Warning& w) {
    if (!acceptance) return;
    w.evidence["acceptance_rate"] = *acceptance;
    w.evidence["acceptance_band_low"] = band.low;
    w.evidence["acceptance_band_high"] = band.high;
  };
  auto note_chains = [](Warning& w, const char* key, const std::vector<int>& chains) {
    std::string text;
    for (int c : chains) text += (text.empty() ? "" : ",") + std::to_string(c);
    w.notes[key] = text.empty() ? "none" : text;
  };

  bool any_step_rule = false;
  for (const auto& v : descriptor.variables) {
    if (!v.has_draws()) continue;
    std::vector<const SeriesDiagnostics*> series;
    for (const auto& s : report.series)
      if (s.root == v.name) series.push_back(&s);
    if (series.empty()) continue;

    // HighRhat
    {
      std::vector<std::size_t> idx;
      std::vector<std::string> names;
      double worst = 0;
      for (const auto* s : series)
        if (s->rhat && !s->rhat->degenerate && s->rhat->value > th.rhat_warn) {
          idx.push_back(s->index);
          names.push_back(s->name);
          worst = std::max(worst, s->rhat->value);
        }
      if (!idx.empty()) {
        auto w = make(WarningKind::HighRhat, Severity::warn, v.name, idx, every_chain);
        w.evidence["rhat_max"] = worst;
        w.evidence["rhat_warn"] = th.rhat_warn;
        w.message = "R-hat above " + detail::fmt(th.rhat_warn, 2) + " for " + detail::join_flat(names) +
                    " (max " + detail::fmt(worst) + "): the chains disagree about the distribution.";
        out.push_back(std::move(w));
      }
    }

    // BurnIn
    {
      std::vector<std::size_t> idx;
      double full_max = 0, tail_max = 0;
      for (const auto* s : series) {
        if (!s->burn_in) continue;
        const auto& b = *s->burn_in;
        if (b.rhat_full.degenerate || b.rhat_tail.degenerate) continue;
        if (b.rhat_full.value > th.burn_in_full_threshold && b.rhat_tail.value <= th.rhat_warn) {
          idx.push_back(s->index);
          full_max = std::max(full_max, b.rhat_full.value);
          tail_max = std::max(tail_max, b.rhat_tail.value);
        }
      }
      if (!idx.empty()) {
        auto w = make(WarningKind::BurnIn, Severity::warn, v.name, idx, every_chain);
        w.evidence["rhat_full"] = full_max;
        w.evidence["rhat_tail"] = tail_max;
        w.evidence["burn_in_full_threshold"] = th.burn_in_full_threshold;
        w.evidence["rhat_warn"] = th.rhat_warn;
        w.message = "R-hat over all post-tune draws of " + v.name + " is " + detail::fmt(full_max) +
                    " but only " + detail::fmt(tail_max) +
                    " over the second half of each chain: early draws are still transient.";
        out.push_back(std::move(w));
      }
    }

    // ESS / acceptance / funnel family
    std::vector<std::size_t> low_idx;
    double ess_min = HUGE_VAL;
    for (const auto* s : series) {
      if (!s->ess || s->ess->degenerate) continue;
      ess_min = std::min(ess_min, s->ess->value);
      if (s->ess->value < ess_threshold) low_idx.push_back(s->index);
    }
    const bool ess_low = !low_idx.empty();
    std::vector<const FunnelCandidate*> funnels;
    if (v.kind == VariableKind::latent)
      for (const auto& c : candidates)
        if (c.child == v.name) funnels.push_back(&c);

    auto add_ess = [&](Warning& w) {
      if (ess_min < HUGE_VAL) w.evidence["ess_bulk_min"] = ess_min;
      w.evidence["ess_threshold"] = ess_threshold;
    };
    std::vector<std::size_t> all_idx;
    for (const auto* s : series) all_idx.push_back(s->index);

    if (!funnels.empty() && (acc_low || acc_high || ess_low)) {
      auto w = make(WarningKind::FunnelAcceptance, Severity::critical, v.name, ess_low ? low_idx : all_idx,
                    every_chain);
      add_acceptance(w);
      add_ess(w);
      std::string parents, paths;
      for (const auto* f : funnels) {
        parents += (parents.empty() ? "" : ", ") + f->parent;
        paths += (paths.empty() ? "" : "; ") + f->path_text();
        for (const auto& fe : report.funnels)
          if (fe.candidate == *f && fe.score) {
            auto key = "funnel_score." + f->parent;
            w.evidence[key] = *fe.score;
          }
      }
      w.notes["parents"] = parents;
      w.notes["path"] = paths;
      auto rewrite = render_reparameterization(*funnels.front(), descriptor);
      if (rewrite.templated) w.suggested_code = rewrite.code;
      w.source_span = rewrite.source_span;
      std::string cause = ess_low ? "low ESS (min " + detail::fmt(ess_min, 1) + ")" : "";
      if (acc_low || acc_high) {
        cause += (cause.empty() ? "" : " and ") + std::string("acceptance ") + detail::fmt(*acceptance, 2) +
                 " outside [" + detail::fmt(band.low, 2) + ", " + detail::fmt(band.high, 2) + "]";
      }
      w.message = "Potential funnel: the scale of " + v.name + " depends on " + parents + " (" + paths +
                  "), a geometry " + metadata.algorithm.name() + " explores poorly; observed " + cause + ".";
      out.push_back(std::move(w));
      any_step_rule = true;
    } else if (ess_low && acc_high) {
      auto w = make(WarningKind::LowEssHighAcceptance, Severity::warn, v.name, low_idx, every_chain);
      add_acceptance(w);
      note_chains(w, "chains_above_band", high_chains);
      add_ess(w);
      w.message = "ESS of " + v.name + " is low (min " + detail::fmt(ess_min, 1) + " < " +
                  detail::fmt(ess_threshold, 0) + ") while acceptance " + detail::fmt(*acceptance, 2) +
                  " is above the band: steps are too small and draws strongly autocorrelated.";
      out.push_back(std::move(w));
      any_step_rule = true;
    } else if (ess_low && acc_low) {
      auto w = make(WarningKind::LowEssLowAcceptance, Severity::warn, v.name, low_idx, every_chain);
      add_acceptance(w);
      note_chains(w, "chains_below_band", low_chains);
      add_ess(w);
      w.message = "ESS of " + v.name + " is low (min " + detail::fmt(ess_min, 1) + " < " +
                  detail::fmt(ess_threshold, 0) + ") while acceptance " + detail::fmt(*acceptance, 2) +
                  " is below the band: steps are too large and most proposals are rejected.";
      out.push_back(std::move(w));
      any_step_rule = true;
    } else if (ess_low) {
      auto w = make(WarningKind::LowEssIsolated, Severity::warn, v.name, low_idx, every_chain);
      add_acceptance(w);
      add_ess(w);
      w.message = "ESS of " + v.name + " is low (min " + detail::fmt(ess_min, 1) + " < " +
                  detail::fmt(ess_threshold, 0) + ") with acceptance in band; the source of the autocorrelation "
                  "is not clear yet.";
      out.push_back(std::move(w));
    }
  }

  // StuckChain
  {
    std::vector<int> stuck;
    Warning w;
    for (const auto& c : report.chains)
      if (c.stuck_run_length >= th.stuck_window) {
        stuck.push_back(c.chain);
        w.evidence["stuck_run_length.chain" + std::to_string(c.chain)] = static_cast<double>(c.stuck_run_length);
      }
    if (!stuck.empty()) {
      auto ev = std::move(w.evidence);
      w = make(WarningKind::StuckChain, Severity::critical, "", {}, stuck);
      w.evidence = std::move(ev);
      w.evidence["stuck_window"] = static_cast<double>(th.stuck_window);
      std::string names;
      for (int c : stuck) names += (names.empty() ? "" : ", ") + std::to_string(c);
      w.message = "Chain(s) " + names + " rejected every proposal for at least " +
                  std::to_string(th.stuck_window) + " iterations.";
      out.push_back(std::move(w));
    }
  }

  // AcceptanceIsolated
  if ((acc_low || acc_high) && !any_step_rule) {
    auto w = make(WarningKind::AcceptanceIsolated, Severity::info, "", {}, every_chain);
    add_acceptance(w);
    if (acc_low) note_chains(w, "chains_below_band", low_chains);
    else note_chains(w, "chains_above_band", high_chains);
    w.message = "Acceptance rate " + detail::fmt(*acceptance, 2) + " is outside the " +
                metadata.algorithm.name() + " band [" + detail::fmt(band.low, 2) + ", " +
                detail::fmt(band.high, 2) + "]; the effect on efficiency is not visible yet.";
    out.push_back(std::move(w));
  }
  return out;
}

struct WarningDiff {
  std::vector<Warning> added;  // "new" on the wire
  std::vector<Warning> persisting;
  std::vector<Warning> resolved;
};

/// Keyed by id. Persisting warnings keep their original first_seen.
inline WarningDiff diff_warnings(const std::vector<Warning>& previous, const std::vector<Warning>& current) {
  WarningDiff d;
  std::map<std::string, const Warning*> prev;
  for (const auto& w : previous) prev[w.id] = &w;
  std::set<std::string> cur;
  for (const auto& w : current) {
    cur.insert(w.id);
    auto it = prev.find(w.id);
    if (it == prev.end()) {
      d.added.push_back(w);
    } else {
      auto p = w;
      p.first_seen = it->second->first_seen;
      d.persisting.push_back(std::move(p));
    }
  }
  for (const auto& w : previous)
    if (!cur.count(w.id)) d.resolved.push_back(w);
  return d;
}

/// Per-run warning lifecycle: active set plus the history of resolved ones.
class WarningTracker {
 public:
  /// Applies a new evaluation. The returned diff lists only what changed in
  /// this step; `state()` gives the cumulative view.
  WarningDiff update(const std::vector<Warning>& current) {
    auto d = diff_warnings(active_, current);
    active_.clear();
    for (const auto& w : d.added) active_.push_back(w);
    for (const auto& w : d.persisting) active_.push_back(w);
    std::sort(active_.begin(), active_.end(), order);
    for (const auto& w : d.added) resolved_.erase(w.id);
    for (const auto& w : d.resolved) resolved_[w.id] = w;
    for (const auto& w : d.added) latest_new_.insert(w.id);
    for (const auto& w : d.persisting) latest_new_.erase(w.id);
    for (const auto& w : d.resolved) latest_new_.erase(w.id);
    return d;
  }

  /// new = active warnings first raised by the latest evaluation.
  WarningDiff state() const {
    WarningDiff s;
    for (const auto& w : active_) (latest_new_.count(w.id) ? s.added : s.persisting).push_back(w);
    for (const auto& [id, w] : resolved_) s.resolved.push_back(w);
    std::sort(s.resolved.begin(), s.resolved.end(), order);
    return s;
  }

  const std::vector<Warning>& active() const { return active_; }

 private:
  static bool order(const Warning& a, const Warning& b) {
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.id < b.id;
  }
  std::vector<Warning> active_;
  std::map<std::string, Warning> resolved_;
  std::set<std::string> latest_new_;
};

}  // namespace infdbg
