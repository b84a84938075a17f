#pragma once

// Builds the full diagnostics picture of one run snapshot: per-variable and
// per-chain statistics plus the inputs the warning rules read.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "infdbg/chain_store.hpp"
#include "infdbg/diagnostics.hpp"
#include "infdbg/funnel.hpp"

namespace infdbg {

inline constexpr int kAllChains = -1;

struct VariableChainStats {
  std::string variable;
  int chain = kAllChains;
  std::size_t n = 0;
  double mean = 0;
  double sd = 0;
  std::optional<double> rhat;  // only for chain = ALL
  std::optional<double> ess_bulk;
  std::optional<double> acceptance_rate;
  bool degenerate = false;
};

struct SeriesDiagnostics {
  std::string name;
  std::string root;
  std::size_t index = 0;
  std::optional<RhatResult> rhat;
  std::optional<EssResult> ess;
  std::optional<BurnInProfile> burn_in;
};

struct ChainDiagnostics {
  int chain = 0;
  std::size_t n_draws = 0;    // draws under the phase filter
  std::size_t n_sample = 0;   // post-tune draws stored
  std::optional<double> acceptance_rate;  // windowed
  std::size_t stuck_run_length = 0;
};

struct FunnelEvidence {
  FunnelCandidate candidate;
  std::optional<double> score;  // mean over the child's flat series
};

struct DiagnosticsReport {
  std::string run_id;
  Algorithm algorithm;
  int n_chains = 0;
  PhaseFilter phase = PhaseFilter::sample;
  std::size_t min_sample_draws = 0;  // gating quantity
  std::uint64_t frontier = 0;        // post-tune iterations present on every chain
  std::vector<VariableChainStats> stats;  // per flat series: ALL, then each chain
  std::vector<SeriesDiagnostics> series;
  std::vector<ChainDiagnostics> chains;
  std::vector<FunnelEvidence> funnels;

  const VariableChainStats* find_stats(std::string_view variable, int chain) const {
    for (const auto& s : stats)
      if (s.variable == variable && s.chain == chain) return &s;
    return nullptr;
  }
};

struct AnalysisOptions {
  std::size_t acceptance_window = 500;
};

namespace detail {

inline Chains truncated_chains(const RunSnapshot& snap, std::size_t series) {
  Chains chains;
  for (const auto& c : snap.chains) chains.push_back(c.series[series].to_vector());
  if (chains.empty()) return chains;
  const std::size_t n = min_length(chains);
  for (auto& c : chains) c.resize(n);
  return chains;
}

inline double sd_of(std::span<const double> x) { return std::sqrt(variance(x)); }

/// With `convergence` false the caller fills rhat and ess_bulk.
inline VariableChainStats stats_for(const std::string& name, int chain, const Chains& chains,
                                    bool convergence = true) {
  VariableChainStats s;
  s.variable = name;
  s.chain = chain;
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  s.n = pooled.size();
  if (pooled.empty()) return s;
  s.mean = mean(pooled);
  s.sd = sd_of(pooled);
  s.degenerate = all_identical(chains);
  if (convergence && min_length(chains) >= 4) {
    auto ess = bulk_ess(chains);
    if (!ess.degenerate) s.ess_bulk = ess.value;
    if (chain == kAllChains) s.rhat = split_rank_normalized_rhat(chains).value;
  }
  return s;
}

}  // namespace detail

/// Statistics for one flat series and one chain (or kAllChains), computed on
/// demand from a snapshot.
inline VariableChainStats variable_stats(const RunSnapshot& snap, std::size_t series, int chain,
                                         const AnalysisOptions& opts = {}) {
  const auto& name = (*snap.flat)[series].name;
  if (chain == kAllChains) {
    auto s = detail::stats_for(name, chain, detail::truncated_chains(snap, series));
    std::vector<double> rates;
    for (const auto& c : snap.chains) {
      auto acc = c.accept.to_vector();
      if (!acc.empty()) rates.push_back(acceptance_rate(acc, opts.acceptance_window));
    }
    if (!rates.empty()) s.acceptance_rate = detail::mean(rates);
    return s;
  }
  const auto& c = snap.chains.at(static_cast<std::size_t>(chain));
  auto s = detail::stats_for(name, chain, Chains{c.series[series].to_vector()});
  auto acc = c.accept.to_vector();
  if (!acc.empty()) s.acceptance_rate = acceptance_rate(acc, opts.acceptance_window);
  return s;
}

inline DiagnosticsReport analyze(const RunSnapshot& snap, const std::vector<FunnelCandidate>& candidates,
                                 const AnalysisOptions& opts = {}) {
  DiagnosticsReport r;
  r.run_id = snap.metadata.run_id;
  r.algorithm = snap.metadata.algorithm;
  r.n_chains = static_cast<int>(snap.chains.size());
  r.phase = snap.phase;
  if (!snap.chains.empty()) {
    r.min_sample_draws = snap.chains.front().n_sample;
    for (const auto& c : snap.chains) r.min_sample_draws = std::min(r.min_sample_draws, c.n_sample);
  }
  r.frontier = r.min_sample_draws;

  for (std::size_t ci = 0; ci < snap.chains.size(); ++ci) {
    const auto& c = snap.chains[ci];
    ChainDiagnostics d;
    d.chain = static_cast<int>(ci);
    d.n_draws = c.accept.size();
    d.n_sample = c.n_sample;
    auto acc = c.accept.to_vector();
    if (!acc.empty()) {
      d.acceptance_rate = acceptance_rate(acc, opts.acceptance_window);
      d.stuck_run_length = stuck_run_length(acc);
    }
    r.chains.push_back(d);
  }

  const auto& flat = *snap.flat;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    auto chains = detail::truncated_chains(snap, i);
    SeriesDiagnostics sd;
    sd.name = flat[i].name;
    sd.root = flat[i].root;
    sd.index = flat[i].index;
    const std::size_t n = chains.empty() ? 0 : detail::min_length(chains);
    if (n >= 4) {
      auto cd = convergence_diagnostics(chains);
      sd.rhat = cd.rhat;
      sd.ess = cd.ess;
      sd.burn_in = cd.burn_in;
    }

    auto all = detail::stats_for(sd.name, kAllChains, chains, false);
    if (sd.rhat) all.rhat = sd.rhat->value;
    if (sd.ess && !sd.ess->degenerate) all.ess_bulk = sd.ess->value;
    std::vector<double> rates;
    for (const auto& cd : r.chains)
      if (cd.acceptance_rate) rates.push_back(*cd.acceptance_rate);
    if (!rates.empty()) all.acceptance_rate = detail::mean(rates);
    r.stats.push_back(all);
    for (std::size_t ci = 0; ci < snap.chains.size(); ++ci) {
      auto s = detail::stats_for(sd.name, static_cast<int>(ci),
                                 Chains{snap.chains[ci].series[i].to_vector()});
      s.acceptance_rate = r.chains[ci].acceptance_rate;
      r.stats.push_back(s);
    }
    r.series.push_back(std::move(sd));
  }

  for (const auto& cand : candidates) {
    FunnelEvidence fe{cand, std::nullopt};
    const auto* source = snap.descriptor->find(cand.scale_source());
    std::vector<std::size_t> child_idx, source_idx;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      if (flat[i].root == cand.child) child_idx.push_back(i);
      if (flat[i].root == cand.scale_source()) source_idx.push_back(i);
    }
    if (source && !child_idx.empty() && !source_idx.empty()) {
      double total = 0;
      std::size_t used = 0;
      for (std::size_t k = 0; k < child_idx.size(); ++k) {
        // Element-wise when shapes agree, otherwise broadcast the first element.
        std::size_t s = source_idx.size() == child_idx.size() ? source_idx[k] : source_idx.front();
        std::vector<double> x, y;
        for (const auto& c : detail::truncated_chains(snap, s)) x.insert(x.end(), c.begin(), c.end());
        for (const auto& c : detail::truncated_chains(snap, child_idx[k])) y.insert(y.end(), c.begin(), c.end());
        if (y.size() < 50) continue;
        auto score = detect_funnel_sample(x, y, source->support);
        if (score.degenerate) continue;
        total += score.value;
        ++used;
      }
      if (used) fe.score = total / static_cast<double>(used);
    }
    r.funnels.push_back(std::move(fe));
  }
  return r;
}

}  // namespace infdbg
