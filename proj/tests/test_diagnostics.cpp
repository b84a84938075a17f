#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "infdbg/diagnostics.hpp"
#include "test_util.hpp"

using namespace infdbg;
using namespace infdbg::testing;

namespace {

// Brute-force reference: quadratic-time average ranks, boost normal quantile,
// textbook between/within variances.
double reference_rhat(const Chains& input) {
  std::size_t n = input.front().size();
  for (const auto& c : input) n = std::min(n, c.size());
  const std::size_t half = n / 2;
  Chains split;
  for (const auto& c : input) {
    split.emplace_back(c.begin(), c.begin() + static_cast<long>(half));
    split.emplace_back(c.begin() + static_cast<long>(n - half), c.begin() + static_cast<long>(n));
  }
  std::vector<double> pooled;
  for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
  const double S = static_cast<double>(pooled.size());
  boost::math::normal_distribution<double> phi;
  Chains z;
  for (const auto& c : split) {
    std::vector<double> zc;
    for (double x : c) {
      double less = 0, equal = 0;
      for (double y : pooled) {
        less += y < x;
        equal += y == x;
      }
      const double rank = less + (equal + 1) / 2;
      zc.push_back(boost::math::quantile(phi, (rank - 0.375) / (S + 0.25)));
    }
    z.push_back(zc);
  }
  const double m = static_cast<double>(z.size()), len = static_cast<double>(half);
  double grand = 0, w = 0;
  std::vector<double> means;
  for (const auto& c : z) {
    means.push_back(std::accumulate(c.begin(), c.end(), 0.0) / len);
    grand += means.back() / m;
  }
  for (std::size_t j = 0; j < z.size(); ++j) {
    double s = 0;
    for (double v : z[j]) s += (v - means[j]) * (v - means[j]);
    w += s / (len - 1) / m;
  }
  double b = 0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= len / (m - 1);
  return std::sqrt(((len - 1) / len * w + b / len) / w);
}

Chains random_chains(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nchains(2, 4), len(8, 64);
  std::normal_distribution<double> normal;
  Chains c(static_cast<std::size_t>(nchains(rng)));
  const auto n = static_cast<std::size_t>(len(rng));
  for (auto& chain : c) {
    const double shift = normal(rng) * 0.5;
    double prev = 0;
    for (std::size_t i = 0; i < n; ++i) {
      prev = 0.6 * prev + normal(rng);
      chain.push_back(prev + shift);
    }
  }
  return c;
}

nlohmann::json load_fixtures() {
  std::ifstream in(std::string(INFDBG_TEST_DATA) + "/rhat_oracle_fixtures.json");
  return nlohmann::json::parse(in).at("fixtures");
}

}  // namespace

// --- normal quantile -------------------------------------------------------

TEST(InverseNormal, MatchesBoost) {
  boost::math::normal_distribution<double> phi;
  for (double p : {1e-300, 1e-20, 1e-10, 1e-4, 0.01, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.9, 0.975, 0.999, 1 - 1e-12}) {
    const double expected = boost::math::quantile(phi, p);
    EXPECT_NEAR(detail::inverse_normal_cdf(p), expected, 1e-14 * std::max(1.0, std::abs(expected))) << p;
  }
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1e-9, 1 - 1e-9);
  for (int i = 0; i < 2000; ++i) {
    const double p = u(rng);
    const double expected = boost::math::quantile(phi, p);
    ASSERT_NEAR(detail::inverse_normal_cdf(p), expected, 1e-14 * std::max(1.0, std::abs(expected))) << p;
  }
}

TEST(InverseNormal, Symmetry) {
  for (double p : {0.001, 0.2, 0.4999})
    EXPECT_NEAR(detail::inverse_normal_cdf(p), -detail::inverse_normal_cdf(1 - p), 1e-13);
  EXPECT_EQ(detail::inverse_normal_cdf(0.5), 0.0);
}

TEST(Ranks, AverageTies) {
  std::vector<double> x{3, 1, 3, 2, 3};
  EXPECT_EQ(detail::average_ranks(x), (std::vector<double>{4, 1, 4, 2, 4}));
}

// --- R-hat -----------------------------------------------------------------

TEST(Rhat, ConstantChainsAreDegenerate) {
  auto r = split_rank_normalized_rhat({{5, 5, 5, 5}, {5, 5, 5, 5}});
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.value, 1.0);
}

TEST(Rhat, ShiftedRampMatchesOracle) {
  Chains c{{1, 2, 3, 4, 5, 6, 7, 8}, {1.1, 2.1, 3.1, 4.1, 5.1, 6.1, 7.1, 8.1}};
  EXPECT_NEAR(split_rank_normalized_rhat(c).value, 1.7299566224270406, 1e-10);
  EXPECT_NEAR(split_rank_normalized_rhat(c).value, reference_rhat(c), 1e-10);
}

TEST(Rhat, FrozenOracleFixtures) {
  auto fixtures = load_fixtures();
  ASSERT_GE(fixtures.size(), 26u);
  for (const auto& f : fixtures) {
    auto chains = f.at("chains").get<Chains>();
    EXPECT_NEAR(split_rank_normalized_rhat(chains).value, f.at("rhat").get<double>(), 1e-10) << f.at("name");
    const double ess = f.at("ess").get<double>();
    EXPECT_NEAR(bulk_ess(chains).value, ess, 1e-9 * ess) << f.at("name");
  }
}

TEST(Rhat, MatchesBruteForceReference) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    auto c = random_chains(rng);
    if (i % 4 == 0)
      for (auto& chain : c)
        for (auto& v : chain) v = std::round(v);  // heavy ties
    ASSERT_NEAR(split_rank_normalized_rhat(c).value, reference_rhat(c), 1e-10) << "case " << i;
  }
}

TEST(Rhat, IidBelowThreshold) {
  EXPECT_LT(split_rank_normalized_rhat(iid_normal(4, 1000, 42)).value, 1.01);
}

// Rank normalization bounds R-hat for fully separated chains: with two chains
// the split halves occupy the two half-normals, so R-hat tends to
// sqrt(1 + 4/3 * (2/pi) / (1 - 2/pi)) ~ 1.83 however large the shift.
TEST(Rhat, SeparatedChainsSaturate) {
  auto c = iid_normal(2, 500, 42, 10.0);
  const double r = split_rank_normalized_rhat(c).value;
  EXPECT_NEAR(r, reference_rhat(c), 1e-10);
  EXPECT_GT(r, 1.8);
  EXPECT_EQ(r, split_rank_normalized_rhat(iid_normal(2, 500, 42, 1000.0)).value);
}

TEST(Rhat, TooShort) {
  try {
    split_rank_normalized_rhat({{1, 2, 3}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_enough_data);
  }
  EXPECT_THROW(split_rank_normalized_rhat({}), Error);
}

TEST(Rhat, UnequalLengthsTruncateToShortest) {
  auto c = iid_normal(3, 40, 5);
  auto longer = c;
  longer[1].insert(longer[1].end(), {100, 200, 300});
  EXPECT_EQ(split_rank_normalized_rhat(c).value, split_rank_normalized_rhat(longer).value);
}

TEST(Rhat, DisagreeingConstantChainsAreInfinite) {
  auto r = split_rank_normalized_rhat({{1, 1, 1, 1}, {2, 2, 2, 2}});
  EXPECT_FALSE(r.degenerate);
  EXPECT_TRUE(std::isinf(r.value));
}

TEST(RhatProperty, AffineInvariance) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> scale(0.1, 100), offset(-50, 50);
  for (int i = 0; i < 100; ++i) {
    auto c = random_chains(rng);
    const double r = split_rank_normalized_rhat(c).value, e = bulk_ess(c).value;
    for (double sign : {1.0, -1.0}) {
      const double a = sign * scale(rng), b = offset(rng);
      auto t = c;
      for (auto& chain : t)
        for (auto& v : chain) v = a * v + b;
      ASSERT_NEAR(split_rank_normalized_rhat(t).value, r, 1e-12) << i;
      ASSERT_NEAR(bulk_ess(t).value, e, 1e-12 * e) << i;
    }
  }
}

TEST(RhatProperty, ChainOrderIrrelevant) {
  std::mt19937_64 rng(22);
  for (int i = 0; i < 100; ++i) {
    auto c = random_chains(rng);
    auto p = c;
    std::shuffle(p.begin(), p.end(), rng);
    ASSERT_NEAR(split_rank_normalized_rhat(p).value, split_rank_normalized_rhat(c).value, 1e-12);
    ASSERT_NEAR(bulk_ess(p).value, bulk_ess(c).value, 1e-9);
    auto rc = rank_histogram(c, 5), rp = rank_histogram(p, 5);
    EXPECT_EQ(rc.bin_edges, rp.bin_edges);
    auto sorted = [](auto v) {
      std::sort(v.begin(), v.end());
      return v;
    };
    EXPECT_EQ(sorted(rc.counts), sorted(rp.counts));
  }
}

// var_plus >= (n-1)/n * W, with equality when the split means coincide.
TEST(RhatProperty, LowerBound) {
  std::mt19937_64 rng(23);
  for (int i = 0; i < 500; ++i) {
    auto c = random_chains(rng);
    std::size_t len = c.front().size();
    for (const auto& x : c) len = std::min(len, x.size());
    const double n = static_cast<double>(len / 2);
    auto r = split_rank_normalized_rhat(c);
    if (!r.degenerate) {
      ASSERT_GE(r.value, std::sqrt((n - 1) / n) - 1e-12) << i;
    }
  }
}

// --- ESS -------------------------------------------------------------------

TEST(Ess, IidNearTotal) {
  auto e = bulk_ess(iid_normal(4, 1000, 42)).value;
  EXPECT_GE(e, 0.5 * 4000);
  EXPECT_LE(e, 4000.0);
}

TEST(Ess, Ar1MatchesAnalytic) {
  const double analytic = 10000 * (1 - 0.9) / (1 + 0.9);
  auto e = bulk_ess({ar1(10000, 0.9, 42)}).value;
  EXPECT_GT(e, analytic / 2);
  EXPECT_LT(e, analytic * 2);
}

TEST(Ess, AntitheticCapped) {
  std::vector<double> alt(1000);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? -1.0 : 1.0;
  EXPECT_EQ(bulk_ess({alt}).value, 1000.0);
}

TEST(Ess, DegenerateAndBounds) {
  EXPECT_TRUE(bulk_ess({{2, 2, 2, 2, 2}}).degenerate);
  std::mt19937_64 rng(24);
  for (int i = 0; i < 200; ++i) {
    auto c = random_chains(rng);
    std::size_t n = c.front().size();
    for (const auto& x : c) n = std::min(n, x.size());
    const double e = bulk_ess(c).value;
    ASSERT_GT(e, 0.0);
    ASSERT_LE(e, static_cast<double>(n * c.size()));
  }
}

// --- acceptance, stuck -----------------------------------------------------

TEST(Acceptance, Booleans) { EXPECT_EQ(acceptance_rate(std::vector<double>{1, 0, 1, 0}), 0.5); }

TEST(Acceptance, ProbabilityOutOfRange) {
  try {
    acceptance_rate(std::vector<double>{0.2, 1.3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("probability out of range"), std::string::npos);
  }
}

TEST(Acceptance, Window) {
  std::vector<double> ev(1000, 1.0);
  for (std::size_t i = 500; i < 1000; ++i) ev[i] = i % 10 < 3 ? 1.0 : 0.0;
  EXPECT_NEAR(acceptance_rate(ev, 500), 0.30, 1e-12);
  EXPECT_NEAR(acceptance_rate(ev), 0.65, 1e-12);
  EXPECT_THROW(acceptance_rate(std::vector<double>{}), Error);
}

TEST(Stuck, TrailingRejections) {
  EXPECT_EQ(stuck_run_length(std::vector<double>{1, 0, 0, 0}), 3u);
  EXPECT_EQ(stuck_run_length(std::vector<double>{1, 1, 1}), 0u);
  std::vector<double> ev(1000, 1.0);
  std::fill(ev.end() - 300, ev.end(), 0.0);
  EXPECT_EQ(stuck_run_length(ev), 300u);
  EXPECT_EQ(stuck_run_length(std::vector<double>{0.5, 1e-7, 0.0}), 2u);  // probabilities below 1e-6
  EXPECT_THROW(stuck_run_length(std::vector<double>{}), Error);
}

// --- plot data -------------------------------------------------------------

TEST(Histogram, Example) {
  auto h = histogram(std::vector<double>{1, 1, 2, 2}, 2);
  EXPECT_EQ(h.bin_edges, (std::vector<double>{1, 1.5, 2}));
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{2, 2}));
}

TEST(Histogram, ConservesCountsAndEdgesIncrease) {
  auto x = iid_normal(1, 997, 9)[0];
  for (std::size_t bins : {1u, 7u, 30u}) {
    auto h = histogram(x, bins);
    EXPECT_EQ(std::accumulate(h.counts.begin(), h.counts.end(), std::size_t{0}), x.size());
    ASSERT_EQ(h.bin_edges.size(), bins + 1);
    for (std::size_t i = 1; i < h.bin_edges.size(); ++i) EXPECT_LT(h.bin_edges[i - 1], h.bin_edges[i]);
  }
  auto c = histogram(std::vector<double>{3, 3, 3}, 4);
  EXPECT_EQ(std::accumulate(c.counts.begin(), c.counts.end(), std::size_t{0}), 3u);
  EXPECT_THROW(histogram(std::vector<double>{}, 3), Error);
  EXPECT_THROW(histogram(x, 0), Error);
}

TEST(RankHistogram, UniformUnderConvergence) {
  auto c = iid_normal(2, 1000, 77);
  const std::size_t bins = 20;
  auto r = rank_histogram(c, bins);
  const double expected = 1000.0 / bins, p = 1.0 / bins;
  const double sigma = std::sqrt(1000 * p * (1 - p));
  ASSERT_EQ(r.counts.size(), 2u);
  for (const auto& chain : r.counts) {
    EXPECT_EQ(std::accumulate(chain.begin(), chain.end(), std::size_t{0}), 1000u);
    for (auto k : chain) EXPECT_LT(std::abs(static_cast<double>(k) - expected), 4 * sigma);
  }
}

TEST(TraceSlice, Striding) {
  std::vector<double> x(3000);
  std::iota(x.begin(), x.end(), 0.0);
  auto t = trace_slice(x, 300);
  ASSERT_EQ(t.iterations.size(), 300u);
  EXPECT_EQ(t.iterations.front(), 0u);
  EXPECT_EQ(t.iterations[1], 10u);
  EXPECT_EQ(t.iterations.back(), 2999u);
  EXPECT_EQ(t.values.back(), 2999.0);
  for (std::size_t i = 1; i < t.iterations.size(); ++i) EXPECT_LT(t.iterations[i - 1], t.iterations[i]);
}

TEST(TraceSlice, ShortAndOddLengths) {
  std::vector<double> x(7, 1.0);
  EXPECT_EQ(trace_slice(x, 100).iterations.size(), 7u);
  std::vector<double> y(1001, 0.0);
  for (std::size_t max : {2u, 3u, 10u, 999u}) {
    auto t = trace_slice(y, max);
    EXPECT_LE(t.iterations.size(), max);
    EXPECT_EQ(t.iterations.front(), 0u);
    EXPECT_EQ(t.iterations.back(), 1000u);
  }
  EXPECT_EQ(trace_slice(x, 5, 100).iterations.front(), 100u);
  EXPECT_THROW(trace_slice(x, 1), Error);
}

TEST(PairData, KeepsPairingAndThins) {
  std::vector<double> x(100), y(100);
  for (std::size_t i = 0; i < 100; ++i) {
    x[i] = static_cast<double>(i);
    y[i] = static_cast<double>(i) * 2;
  }
  auto p = pair_data(x, y, 3);
  ASSERT_EQ(p.x.size(), 34u);
  for (std::size_t k = 0; k < p.x.size(); ++k) {
    EXPECT_EQ(p.iterations[k], 3 * k);
    EXPECT_EQ(p.y[k], 2 * p.x[k]);
  }
  EXPECT_FALSE(p.funnel_hint);
  EXPECT_THROW(pair_data(x, std::vector<double>(99), 1), Error);
}

// --- funnel score -------------------------------------------------------

namespace {

struct FunnelDraws {
  std::vector<double> y, scale, x;
};

FunnelDraws neal_funnel_draws(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  FunnelDraws d;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = 3 * normal(rng);
    d.y.push_back(y);
    d.scale.push_back(std::exp(y / 2));
    d.x.push_back(std::exp(y / 2) * normal(rng));
  }
  return d;
}

}  // namespace

TEST(FunnelScore, NealFunnel) {
  auto d = neal_funnel_draws(5000, 13);
  EXPECT_GT(detect_funnel_sample(d.scale, d.x, Support::positive).value, 0.5);
}

TEST(FunnelScore, IndependentPairs) {
  auto c = iid_normal(2, 5000, 14);
  EXPECT_LT(std::abs(detect_funnel_sample(c[0], c[1], Support::real).value), 0.1);
}

TEST(FunnelScore, ConstantChildDegenerate) {
  auto c = iid_normal(1, 60, 15)[0];
  auto s = detect_funnel_sample(c, std::vector<double>(60, 2.0), Support::real);
  EXPECT_TRUE(s.degenerate);
  EXPECT_EQ(s.value, 0.0);
  EXPECT_THROW(detect_funnel_sample(std::vector<double>(49, 1.0), std::vector<double>(49, 1.0), Support::real),
               Error);
}

TEST(FunnelScore, ShufflingBreaksPairing) {
  auto d = neal_funnel_draws(5000, 16);
  auto shuffled = d.x;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(17));
  EXPECT_LT(std::abs(detect_funnel_sample(d.scale, shuffled, Support::positive).value), 0.1);
  auto p = pair_data(d.scale, d.x, 1, Support::positive);
  ASSERT_TRUE(p.funnel_hint);
  EXPECT_EQ(*p.funnel_hint, detect_funnel_sample(d.scale, d.x, Support::positive).value);
}

// --- burn-in profile --------------------------------------------------------

TEST(BurnIn, TransientFixture) {
  auto b = burn_in_rhat_profile(transient_chains(4, 1000, 31));
  EXPECT_GT(b.rhat_full.value, 1.05);
  EXPECT_LT(b.rhat_tail.value, 1.01);
}

TEST(BurnIn, IidBothLow) {
  auto b = burn_in_rhat_profile(iid_normal(4, 1000, 42));
  EXPECT_LT(b.rhat_full.value, 1.01);
  EXPECT_LT(b.rhat_tail.value, 1.01);
}

TEST(BurnIn, ConstantAndShort) {
  auto b = burn_in_rhat_profile(Chains(2, std::vector<double>(10, 1.0)));
  EXPECT_TRUE(b.rhat_full.degenerate);
  EXPECT_TRUE(b.rhat_tail.degenerate);
  EXPECT_THROW(burn_in_rhat_profile(Chains(2, std::vector<double>(7, 1.0))), Error);
}

TEST(Purity, SameInputSameOutput) {
  auto c = iid_normal(3, 200, 8);
  EXPECT_EQ(split_rank_normalized_rhat(c).value, split_rank_normalized_rhat(c).value);
  EXPECT_EQ(bulk_ess(c).value, bulk_ess(c).value);
  EXPECT_EQ(rank_histogram(c, 10).counts, rank_histogram(c, 10).counts);
}
