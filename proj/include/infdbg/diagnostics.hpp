#pragma once

// Convergence diagnostics and plot-ready series. Everything here is a pure
// function of its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "infdbg/error.hpp"
#include "infdbg/model.hpp"

namespace infdbg {

using Chains = std::vector<std::vector<double>>;

inline constexpr double kLogGuard = 1e-12;
inline constexpr double kRejectionProbability = 1e-6;

namespace detail {

/// Wichura's AS241 (PPND16); relative accuracy about 1e-16.
inline double inverse_normal_cdf(double p) {
  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
               1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
               5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }
  double r = q < 0 ? p : 1.0 - p;
  if (r <= 0) return q < 0 ? -HUGE_VAL : HUGE_VAL;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
  } else {
    r -= 5.0;
    val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
  }
  return q < 0 ? -val : val;
}

/// 1-based ranks; tied values share the average of their positions.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::pair<double, std::size_t>> order(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) order[i] = {x[i], i};
  std::sort(order.begin(), order.end());
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && order[j + 1].first == order[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k].second] = avg;
    i = j + 1;
  }
  return ranks;
}

inline std::size_t min_length(const Chains& chains) {
  std::size_t n = chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  return n;
}

inline void require_chains(const Chains& chains, std::size_t min_len) {
  if (chains.empty()) throw Error(ErrorCode::not_enough_data, "no chains");
  if (min_length(chains) < min_len)
    throw Error(ErrorCode::not_enough_data,
                "each chain needs at least " + std::to_string(min_len) + " draws");
}

/// Truncates to the shortest chain, then halves every chain (the middle draw
/// of an odd-length chain is dropped).
inline Chains split_chains(const Chains& chains) {
  const std::size_t n = min_length(chains);
  const std::size_t half = n / 2;
  Chains out;
  out.reserve(2 * chains.size());
  for (const auto& c : chains) {
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(n - half),
                     c.begin() + static_cast<std::ptrdiff_t>(n));
  }
  return out;
}

inline Chains rank_normalize(const Chains& chains) {
  std::vector<double> pooled;
  for (const auto& c : chains) pooled.insert(pooled.end(), c.begin(), c.end());
  const auto ranks = average_ranks(pooled);
  const double s = static_cast<double>(pooled.size());
  Chains out;
  std::size_t k = 0;
  for (const auto& c : chains) {
    std::vector<double> z(c.size());
    for (auto& v : z) v = inverse_normal_cdf((ranks[k++] - 0.375) / (s + 0.25));
    out.push_back(std::move(z));
  }
  return out;
}

inline bool all_identical(const Chains& chains) {
  const double first = chains.front().front();
  for (const auto& c : chains)
    for (double v : c)
      if (v != first) return false;
  return true;
}

inline double mean(std::span<const double> x) {
  double s = 0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// Sample variance with n-1 normalization.
inline double variance(std::span<const double> x) {
  if (x.size() < 2 || std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); })) return 0.0;
  const double m = mean(x);
  double s = 0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

struct VarianceComponents {
  double within = 0;    // W
  double var_plus = 0;  // (n-1)/n W + B/n
  std::size_t n = 0;    // draws per chain
};

inline VarianceComponents variance_components(const Chains& chains) {
  VarianceComponents vc;
  vc.n = chains.front().size();
  const double n = static_cast<double>(vc.n);
  std::vector<double> means;
  for (const auto& c : chains) {
    means.push_back(mean(c));
    vc.within += variance(c);
  }
  vc.within /= static_cast<double>(chains.size());
  const double between = chains.size() > 1 ? n * variance(means) : 0.0;
  vc.var_plus = (n - 1.0) / n * vc.within + between / n;
  return vc;
}

}  // namespace detail

struct RhatResult {
  double value = 1.0;
  bool degenerate = false;
};

struct EssResult {
  double value = 0.0;
  bool degenerate = false;
};

namespace detail {

inline RhatResult rhat_of_normalized(const Chains& z) {
  const auto vc = variance_components(z);
  if (vc.within <= 0.0) return {HUGE_VAL, false};
  return {std::sqrt(vc.var_plus / vc.within), false};
}

/// Draws the split construction uses; an odd middle draw is dropped.
inline double split_total(const Chains& chains) {
  return static_cast<double>(2 * chains.size() * (min_length(chains) / 2));
}

inline EssResult ess_of_normalized(const Chains& z, double total) {
  const auto vc = variance_components(z);
  const std::size_t n = vc.n;
  const double m = static_cast<double>(z.size());

  std::vector<double> means;
  for (const auto& c : z) means.push_back(mean(c));
  // Biased (1/n) autocovariance averaged over chains.
  auto mean_acov = [&](std::size_t lag) {
    double acc = 0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      double s = 0;
      for (std::size_t i = 0; i + lag < n; ++i) s += (z[j][i] - means[j]) * (z[j][i + lag] - means[j]);
      acc += s / static_cast<double>(n);
    }
    return acc / m;
  };
  auto rho = [&](std::size_t lag) {
    if (lag == 0) return 1.0;
    return 1.0 - (vc.within - mean_acov(lag)) / vc.var_plus;
  };

  double sum_pairs = 0;
  double prev_pair = 0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (k > 0 && pair < 0) break;
    if (k > 0) pair = std::min(pair, prev_pair);
    sum_pairs += pair;
    prev_pair = pair;
  }
  const double tau = -1.0 + 2.0 * sum_pairs;
  return {total / std::max(tau, 1.0), false};
}

}  // namespace detail

/// Rank-normalized split R-hat. Chains of unequal length are truncated to the
/// shortest. Constant input reports 1.0 with the degenerate flag; chains that
/// are individually constant but disagree report +inf.
inline RhatResult split_rank_normalized_rhat(const Chains& chains) {
  detail::require_chains(chains, 4);
  if (detail::all_identical(chains)) return {1.0, true};
  return detail::rhat_of_normalized(detail::rank_normalize(detail::split_chains(chains)));
}

/// Bulk effective sample size on the rank-normalized split chains, using
/// Geyer's initial monotone sequence. Capped at the total draw count.
inline EssResult bulk_ess(const Chains& chains) {
  detail::require_chains(chains, 4);
  if (detail::all_identical(chains)) return {detail::split_total(chains), true};
  return detail::ess_of_normalized(detail::rank_normalize(detail::split_chains(chains)), detail::split_total(chains));
}

/// Mean acceptance over the evidence (or its last `window` entries).
/// Booleans arrive as 0/1; probabilities must lie in [0, 1].
inline double acceptance_rate(std::span<const double> evidence,
                              std::optional<std::size_t> window = std::nullopt) {
  if (evidence.empty()) throw Error(ErrorCode::not_enough_data, "empty acceptance evidence");
  if (window && *window > 0 && *window < evidence.size())
    evidence = evidence.subspan(evidence.size() - *window);
  double s = 0;
  for (double a : evidence) {
    if (!(a >= 0.0 && a <= 1.0)) throw Error(ErrorCode::invalid_argument, "probability out of range");
    s += a;
  }
  return s / static_cast<double>(evidence.size());
}

/// Length of the rejection run ending at the latest iteration.
inline std::size_t stuck_run_length(std::span<const double> evidence) {
  if (evidence.empty()) throw Error(ErrorCode::not_enough_data, "empty acceptance evidence");
  std::size_t n = 0;
  for (auto it = evidence.rbegin(); it != evidence.rend() && *it < kRejectionProbability; ++it) ++n;
  return n;
}

struct HistogramData {
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;
};

inline HistogramData histogram(std::span<const double> series, std::size_t bins) {
  if (series.empty()) throw Error(ErrorCode::not_enough_data, "empty series");
  if (bins < 1) throw Error(ErrorCode::invalid_argument, "bin count must be >= 1");
  auto [lo_it, hi_it] = std::minmax_element(series.begin(), series.end());
  double lo = *lo_it, hi = *hi_it;
  if (lo == hi) {
    lo -= 0.5;
    hi += 0.5;
  }
  HistogramData h;
  h.bin_edges.resize(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i)
    h.bin_edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  h.bin_edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double v : series) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

struct RankHistogramData {
  std::vector<double> bin_edges;  // in pooled-rank units, [0, S]
  std::vector<std::vector<std::size_t>> counts;  // per chain
};

inline RankHistogramData rank_histogram(const Chains& chains, std::size_t bins) {
  if (chains.empty()) throw Error(ErrorCode::not_enough_data, "no chains");
  if (bins < 1) throw Error(ErrorCode::invalid_argument, "bin count must be >= 1");
  std::vector<double> pooled;
  for (const auto& c : chains) {
    if (c.empty()) throw Error(ErrorCode::not_enough_data, "empty series");
    pooled.insert(pooled.end(), c.begin(), c.end());
  }
  const auto ranks = detail::average_ranks(pooled);
  const double s = static_cast<double>(pooled.size());
  RankHistogramData out;
  for (std::size_t i = 0; i <= bins; ++i)
    out.bin_edges.push_back(s * static_cast<double>(i) / static_cast<double>(bins));
  std::size_t k = 0;
  for (const auto& c : chains) {
    std::vector<std::size_t> counts(bins, 0);
    for (std::size_t i = 0; i < c.size(); ++i) {
      auto b = static_cast<std::size_t>((ranks[k++] - 1.0) * static_cast<double>(bins) / s);
      ++counts[std::min(b, bins - 1)];
    }
    out.counts.push_back(std::move(counts));
  }
  return out;
}

struct TraceSlice {
  std::vector<std::size_t> iterations;
  std::vector<double> values;
};

/// Uniform striding down to at most `max_points`; the first and the last
/// iteration are always kept.
inline TraceSlice trace_slice(std::span<const double> series, std::size_t max_points,
                              std::size_t first_iteration = 0) {
  if (series.empty()) throw Error(ErrorCode::not_enough_data, "empty series");
  if (max_points < 2) throw Error(ErrorCode::invalid_argument, "max_points must be >= 2");
  const std::size_t n = series.size();
  const std::size_t stride = (n + max_points - 1) / max_points;
  TraceSlice t;
  for (std::size_t i = 0; i < n; i += stride) t.iterations.push_back(i);
  if (t.iterations.back() != n - 1) {
    if (t.iterations.size() < max_points)
      t.iterations.push_back(n - 1);
    else
      t.iterations.back() = n - 1;
  }
  for (auto& i : t.iterations) {
    t.values.push_back(series[i]);
    i += first_iteration;
  }
  return t;
}

struct FunnelScore {
  double value = 0.0;
  bool degenerate = false;
};

/// Pearson correlation between the log scale of the parent and the log
/// absolute deviation of the child. Positive values indicate that the child's
/// spread grows with the parent.
inline FunnelScore detect_funnel_sample(std::span<const double> scale_parent,
                                        std::span<const double> child, Support parent_support) {
  if (scale_parent.size() != child.size())
    throw Error(ErrorCode::invalid_argument, "funnel series lengths differ");
  if (child.size() < 50) throw Error(ErrorCode::not_enough_data, "funnel score needs 50 paired draws");
  const std::size_t n = child.size();
  const double child_mean = detail::mean(child);
  std::vector<double> t(n), a(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = parent_support == Support::positive ? std::log(scale_parent[i])
                                               : std::log(std::abs(scale_parent[i]) + kLogGuard);
    a[i] = std::log(std::abs(child[i] - child_mean) + kLogGuard);
  }
  const double mt = detail::mean(t), ma = detail::mean(a);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (t[i] - mt) * (a[i] - ma);
    sxx += (t[i] - mt) * (t[i] - mt);
    syy += (a[i] - ma) * (a[i] - ma);
  }
  const bool child_constant = std::all_of(child.begin(), child.end(),
                                          [&](double v) { return v == child.front(); });
  if (child_constant || sxx <= 0.0 || syy <= 0.0 || !std::isfinite(sxx * syy)) return {0.0, true};
  const double dn = static_cast<double>(n - 1);
  return {std::clamp((sxy / dn) / std::sqrt((sxx / dn) * (syy / dn)), -1.0, 1.0), false};
}

struct PairData {
  std::vector<std::size_t> iterations;
  std::vector<double> x;
  std::vector<double> y;
  std::optional<double> funnel_hint;
};

/// Pairs draws of two flat variables from the same chain. When the x series
/// is a scale parent (its support given), the funnel score over all pairs is
/// attached.
inline PairData pair_data(std::span<const double> x, std::span<const double> y, std::size_t thin = 1,
                          std::optional<Support> scale_parent_support = std::nullopt) {
  if (x.empty() || y.empty()) throw Error(ErrorCode::not_enough_data, "empty series");
  if (x.size() != y.size()) throw Error(ErrorCode::invalid_argument, "pair series lengths differ");
  if (thin < 1) throw Error(ErrorCode::invalid_argument, "thin must be >= 1");
  PairData p;
  for (std::size_t i = 0; i < x.size(); i += thin) {
    p.iterations.push_back(i);
    p.x.push_back(x[i]);
    p.y.push_back(y[i]);
  }
  if (scale_parent_support && x.size() >= 50) {
    auto s = detect_funnel_sample(x, y, *scale_parent_support);
    if (!s.degenerate) p.funnel_hint = s.value;
  }
  return p;
}

struct BurnInProfile {
  RhatResult rhat_full;
  RhatResult rhat_tail;  // over the last half of every chain
};

inline BurnInProfile burn_in_rhat_profile(const Chains& chains) {
  detail::require_chains(chains, 8);
  const std::size_t n = detail::min_length(chains);
  Chains tail;
  for (const auto& c : chains)
    tail.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(n - n / 2),
                      c.begin() + static_cast<std::ptrdiff_t>(n));
  Chains full;
  for (const auto& c : chains) full.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n));
  return {split_rank_normalized_rhat(full), split_rank_normalized_rhat(tail)};
}

struct ConvergenceDiagnostics {
  RhatResult rhat;
  EssResult ess;
  std::optional<BurnInProfile> burn_in;  // from 8 draws per chain
};

/// R-hat, bulk ESS and the burn-in profile over one rank normalization. The
/// profile's full-chain R-hat is the R-hat itself.
inline ConvergenceDiagnostics convergence_diagnostics(const Chains& chains) {
  detail::require_chains(chains, 4);
  ConvergenceDiagnostics d;
  const double total = detail::split_total(chains);
  if (detail::all_identical(chains)) {
    d.rhat = {1.0, true};
    d.ess = {total, true};
  } else {
    const auto z = detail::rank_normalize(detail::split_chains(chains));
    d.rhat = detail::rhat_of_normalized(z);
    d.ess = detail::ess_of_normalized(z, total);
  }
  const std::size_t n = detail::min_length(chains);
  if (n >= 8) {
    Chains tail;
    for (const auto& c : chains)
      tail.emplace_back(c.begin() + static_cast<std::ptrdiff_t>(n - n / 2),
                        c.begin() + static_cast<std::ptrdiff_t>(n));
    d.burn_in = BurnInProfile{d.rhat, split_rank_normalized_rhat(tail)};
  }
  return d;
}

}  // namespace infdbg
