// Acceptance checks: one PASS/FAIL line per criterion.
//
//   infdbg_acceptance [--known-failure NAME]... [--only NAME]
//
// A criterion named with --known-failure still prints FAIL, tagged "(known)",
// but does not change the exit code. Exit code: 0 when every other criterion
// passes, 1 otherwise.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "infdbg/replay.hpp"
#include "infdbg/report.hpp"
#include "infdbg/sampler.hpp"
#include "infdbg/server.hpp"
#include "test_util.hpp"

namespace {

using namespace infdbg;
using namespace std::chrono_literals;
using testing::iid_normal;
using testing::make_batch;
using testing::meta;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (ok) return;
    pass = false;
    detail += (detail.empty() ? "" : "; ") + what;
  }
};

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<Warning> active(const AnalysisState& s) {
  auto out = s.warnings.added;
  out.insert(out.end(), s.warnings.persisting.begin(), s.warnings.persisting.end());
  return out;
}

const Warning* find(const std::vector<Warning>& ws, WarningKind k) {
  for (const auto& w : ws)
    if (w.kind == k) return &w;
  return nullptr;
}

std::string kind_list(const std::vector<Warning>& ws) {
  std::vector<std::string> k;
  for (const auto& w : ws) k.push_back(to_string(w.kind));
  std::sort(k.begin(), k.end());
  std::string s;
  for (const auto& x : k) s += (s.empty() ? "" : ",") + x;
  return s.empty() ? "none" : s;
}

// --- 1 ----------------------------------------------------------------------

Outcome rhat_oracle() {
  Outcome o;
  std::ifstream in(std::string(INFDBG_TEST_DATA) + "/rhat_oracle_fixtures.json");
  o.require(static_cast<bool>(in), "cannot open oracle fixtures");
  if (!o.pass) return o;
  auto doc = nlohmann::json::parse(in);
  const auto t0 = Clock::now();
  int n = 0;
  double worst = 0;
  for (const auto& f : doc.at("fixtures")) {
    const auto name = f.at("name").get<std::string>();
    if (name.rfind("random_", 0) != 0) continue;
    auto chains = f.at("chains").get<Chains>();
    const double got = split_rank_normalized_rhat(chains).value;
    const double want = f.at("rhat").get<double>();
    const double err = std::abs(got - want);
    worst = std::max(worst, err);
    o.require(err <= 1e-10, name + " off by " + num(err));
    ++n;
  }
  const double secs = seconds_since(t0);
  o.require(n == 25, "expected 25 randomized fixtures, found " + std::to_string(n));
  o.require(secs < 5.0, "took " + num(secs) + " s");
  o.detail = std::to_string(n) + " fixtures, max |diff| " + num(worst, 3) + ", " + num(secs, 3) + " s" +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// --- 2 ----------------------------------------------------------------------

Outcome rhat_discrimination() {
  Outcome o;
  const double iid = split_rank_normalized_rhat(iid_normal(4, 1000, 42)).value;
  const double sep = split_rank_normalized_rhat(iid_normal(4, 1000, 42, 10.0)).value;
  o.require(iid < 1.01, "iid rhat " + num(iid));
  o.require(sep > 3.0, "separated rhat " + num(sep) + " not > 3");
  o.detail = "iid " + num(iid, 5) + ", separated by 10 sd " + num(sep, 5) + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// --- 3 ----------------------------------------------------------------------

Outcome ess_sanity() {
  Outcome o;
  const auto t0 = Clock::now();
  const double iid = bulk_ess(iid_normal(4, 1000, 42)).value;
  o.require(iid >= 2000 && iid <= 4000, "iid ESS " + num(iid) + " outside [2000, 4000]");

  const double analytic = 10000 * (1 - 0.9) / (1 + 0.9);
  const double ar = bulk_ess({testing::ar1(10000, 0.9, 42)}).value;
  o.require(ar > analytic / 2 && ar < analytic * 2, "AR(1) ESS " + num(ar) + " vs " + num(analytic));

  std::vector<double> alt(1000);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = i % 2 ? -1.0 : 1.0;
  const double anti = bulk_ess({alt}).value;
  o.require(anti == 1000.0, "antithetic ESS " + num(anti));

  const double secs = seconds_since(t0);
  o.require(secs < 10.0, "took " + num(secs) + " s");
  o.detail = "iid " + num(iid, 5) + "/4000, AR(1) " + num(ar, 4) + " vs " + num(analytic, 4) + ", antithetic " +
             num(anti, 5) + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// --- 4 ----------------------------------------------------------------------

/// Healthy report over the centered eight-schools descriptor at a given acceptance rate.
struct ReportBuilder {
  ModelDescriptor descriptor = builtin_model("eight_schools_centered").descriptor;
  DiagnosticsReport report;

  explicit ReportBuilder(double acceptance) {
    report.n_chains = 4;
    report.min_sample_draws = report.frontier = 1000;
    for (int c = 0; c < 4; ++c) {
      ChainDiagnostics d;
      d.chain = c;
      d.n_draws = d.n_sample = 1000;
      d.acceptance_rate = acceptance;
      report.chains.push_back(d);
    }
    for (const auto& v : descriptor.variables) {
      if (!v.has_draws()) continue;
      for (std::size_t i = 0; i < v.flat_size(); ++i) {
        SeriesDiagnostics s;
        s.root = v.name;
        s.index = i;
        s.name = v.shape.empty() ? v.name : v.name + "[" + std::to_string(i) + "]";
        s.rhat = RhatResult{1.001, false};
        s.ess = EssResult{3000, false};
        s.burn_in = BurnInProfile{{1.001, false}, {1.001, false}};
        report.series.push_back(s);
      }
    }
  }

  SeriesDiagnostics& series(const std::string& root, std::size_t index = 0) {
    for (auto& s : report.series)
      if (s.root == root && s.index == index) return s;
    throw std::out_of_range(root);
  }

  std::vector<Warning> run(bool funnel = true) const {
    auto cands = funnel ? funnel_static_detect(descriptor) : std::vector<FunnelCandidate>{};
    return evaluate(report, cands, descriptor, {}, meta(4));
  }
};

Outcome rule_table() {
  Outcome o;
  const std::map<WarningKind, std::string> table = {
      {WarningKind::HighRhat, "See other warnings. Check rank plots."},
      {WarningKind::BurnIn, "Increase the burn-in period."},
      {WarningKind::FunnelAcceptance, "Reparameterize the model."},
      {WarningKind::LowEssHighAcceptance, "Increase the proposer's step size."},
      {WarningKind::LowEssLowAcceptance, "Lower the proposer's step size."},
      {WarningKind::StuckChain, "Check your proposal functions and step size."},
      {WarningKind::LowEssIsolated, "Check other warnings, they might be indicative."},
      {WarningKind::AcceptanceIsolated, "Maybe change the step size."},
  };
  std::set<WarningKind> seen;
  auto check = [&](const std::string& label, const std::vector<Warning>& ws, const std::string& want) {
    o.require(kind_list(ws) == want, label + ": got " + kind_list(ws) + ", want " + want);
    for (const auto& w : ws) {
      seen.insert(w.kind);
      o.require(w.suggestion == table.at(w.kind), label + ": suggestion for " + to_string(w.kind));
    }
  };

  // Acceptance (ok, high, low) x theta ESS (ok, low) x funnel candidate (no, yes).
  struct Case {
    double acc;
    bool low_ess;
    bool funnel;
    const char* want;
  };
  const Case cases[] = {
      {0.75, false, false, "none"},
      {0.75, false, true, "none"},
      {0.75, true, false, "LowEssIsolated"},
      {0.75, true, true, "FunnelAcceptance"},
      {0.97, false, false, "AcceptanceIsolated"},
      {0.97, false, true, "FunnelAcceptance"},
      {0.97, true, false, "LowEssHighAcceptance"},
      {0.97, true, true, "FunnelAcceptance"},
      {0.30, false, false, "AcceptanceIsolated"},
      {0.30, false, true, "FunnelAcceptance"},
      {0.30, true, false, "LowEssLowAcceptance"},
      {0.30, true, true, "FunnelAcceptance"},
  };
  for (const auto& c : cases) {
    ReportBuilder b(c.acc);
    if (c.low_ess) b.series("theta", 3).ess = EssResult{150, false};
    check("acc " + num(c.acc) + (c.low_ess ? " low-ess" : "") + (c.funnel ? " funnel" : ""), b.run(c.funnel), c.want);
  }

  ReportBuilder rhat(0.75);
  for (std::size_t i = 0; i < 8; ++i) rhat.series("theta", i).rhat = RhatResult{1.05 + 0.01 * i, false};
  auto ws = rhat.run();
  check("rhat on theta[0..7]", ws, "HighRhat");
  o.require(ws.size() == 1 && ws[0].variables.size() == 1 && ws[0].variables[0].indices.size() == 8,
            "HighRhat not aggregated into one warning with 8 indices");

  ReportBuilder burn(0.75);
  burn.series("mu").burn_in = BurnInProfile{{1.2, false}, {1.005, false}};
  check("burn-in on mu", burn.run(), "BurnIn");

  ReportBuilder stuck(0.75);
  stuck.report.chains[2].stuck_run_length = 300;
  check("stuck chain 2", stuck.run(), "StuckChain");

  o.require(seen.size() == table.size(), "only " + std::to_string(seen.size()) + " of 8 kinds fired");
  if (o.pass) o.detail = "17 cases, all 8 kinds, suggestions verbatim, HighRhat aggregated over 8 indices";
  return o;
}

// --- 5 ----------------------------------------------------------------------

struct DemoRun {
  std::shared_ptr<const AnalysisState> state;
  double seconds = 0;
};

DemoRun sample(const std::string& model, double step, int leapfrog, std::uint64_t tune) {
  SamplerConfig cfg;
  cfg.algorithm = AlgorithmKind::hmc;
  cfg.step_size = step;
  cfg.n_leapfrog = leapfrog;
  cfg.tune = tune;
  cfg.draws = 3000;
  cfg.chains = 4;
  cfg.seed = 7;
  Engine engine({}, Engine::Mode::inline_cadence);
  EngineSink sink(engine);
  const auto t0 = Clock::now();
  auto out = run_sampler(builtin_model(model), cfg, sink);
  return {engine.latest(out.run_id), seconds_since(t0)};
}

Outcome funnel_end_to_end() {
  Outcome o;
  auto centered = sample("eight_schools_centered", 0.2, 10, 100);
  o.require(centered.state != nullptr, "centered run produced no analysis");
  if (!o.pass) return o;
  auto ws = active(*centered.state);
  const auto* w = find(ws, WarningKind::FunnelAcceptance);
  o.require(w != nullptr, "centered: no FunnelAcceptance (active: " + kind_list(ws) + ")");
  if (w) {
    o.require(w->suggested_code && w->suggested_code->find("theta = mu + tau * Z") != std::string::npos,
              "centered: rewrite missing");
    o.require(w->source_span && w->source_span->file == "eight_schools.py" && w->source_span->line_start == 4 &&
                  w->source_span->line_end == 5,
              "centered: span is not eight_schools.py:4-5");
  }
  o.require(centered.seconds < 60, "centered took " + num(centered.seconds) + " s");

  auto tuned = sample("eight_schools_noncentered", 0.5, 8, 1000);
  o.require(tuned.state != nullptr, "noncentered run produced no analysis");
  if (!o.pass) return o;
  auto quiet = active(*tuned.state);
  o.require(quiet.empty(), "noncentered: active warnings " + kind_list(quiet));
  double worst = 0;
  for (const auto& s : tuned.state->report.series)
    if (s.rhat) worst = std::max(worst, s.rhat->value);
  o.require(worst <= 1.01, "noncentered: max rhat " + num(worst));
  o.require(tuned.seconds < 60, "noncentered took " + num(tuned.seconds) + " s");

  o.detail = "centered: " + kind_list(ws) + " in " + num(centered.seconds, 3) + " s; noncentered: " +
             kind_list(quiet) + ", max rhat " + num(worst, 5) + " in " + num(tuned.seconds, 3) + " s" +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// --- 6 ----------------------------------------------------------------------

std::vector<Warning> evaluate_store(const ModelDescriptor& m, AlgorithmKind algo,
                                    const std::function<SampleBatch(const std::string&, int)>& batch) {
  ChainStore store;
  auto id = store.create_run(m, meta(4, algo));
  for (int c = 0; c < 4; ++c) store.append_batch(batch(id, c));
  auto cands = funnel_static_detect(m);
  auto snap = store.snapshot(id);
  return evaluate(analyze(snap, cands), cands, m, {}, snap.metadata);
}

Outcome stuck_and_burn_in() {
  Outcome o;
  constexpr std::size_t n = 1000;

  auto lin = builtin_model("linreg");
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.3);
  auto stuck = evaluate_store(lin.descriptor, AlgorithmKind::random_walk_mh, [&](const std::string& id, int c) {
    auto b = make_batch(lin.descriptor, id, c, Phase::sample, 0, n, [&](std::uint64_t, std::size_t flat) {
      double v = normal(rng);
      return flat == 1 ? std::exp(v) : v;
    });
    for (auto& a : b.accept) a = coin(rng) ? 1.0 : 0.0;
    if (c == 2) {
      // Trailing 300 rejections: the state repeats.
      for (auto& [name, d] : b.draws)
        for (std::size_t r = n - 300; r < n; ++r)
          for (std::size_t k = 0; k < d.cols; ++k) d.values[r * d.cols + k] = d.values[(n - 301) * d.cols + k];
      b.accept[n - 301] = 1.0;
      for (std::size_t r = n - 300; r < n; ++r) b.accept[r] = 0.0;
    }
    return b;
  });
  const auto* s = find(stuck, WarningKind::StuckChain);
  o.require(s != nullptr, "no StuckChain (got " + kind_list(stuck) + ")");
  if (s) o.require(s->chains == std::vector<int>{2}, "StuckChain names the wrong chains");

  ModelDescriptor one;
  one.variables = {testing::latent("x")};
  auto draws = testing::transient_chains(4, n, 31);
  std::bernoulli_distribution ok(0.75);
  auto burn = evaluate_store(one, AlgorithmKind::hmc, [&](const std::string& id, int c) {
    auto b = make_batch(one, id, c, Phase::sample, 0, n,
                        [&](std::uint64_t it, std::size_t) { return draws[static_cast<std::size_t>(c)][it]; });
    for (auto& a : b.accept) a = ok(rng) ? 1.0 : 0.0;
    return b;
  });
  const auto* bw = find(burn, WarningKind::BurnIn);
  o.require(bw != nullptr, "no BurnIn (got " + kind_list(burn) + ")");
  double full = 0, tail = 0;
  if (bw) {
    full = bw->evidence.at("rhat_full");
    tail = bw->evidence.at("rhat_tail");
    o.require(full > 1.05, "full rhat " + num(full));
    o.require(tail < 1.01, "tail rhat " + num(tail));
    o.require(bw->suggestion == "Increase the burn-in period.", "BurnIn suggestion text");
  }
  o.detail = "stuck fixture: " + kind_list(stuck) + "; transient fixture: " + kind_list(burn) + " (full " +
             num(full) + ", tail " + num(tail) + ")" + (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// --- 7 ----------------------------------------------------------------------

Outcome determinism_and_latency() {
  Outcome o;
  auto replay = [](ReportFormat f) {
    Engine engine({}, Engine::Mode::inline_cadence);
    std::ifstream in(std::string(INFDBG_FIXTURES) + "/iid.jsonl");
    if (!in) throw Error(ErrorCode::invalid_argument, "cannot open fixtures/iid.jsonl");
    auto id = replay_log(engine, in);
    return render_report(engine, id, f);
  };
  o.require(replay(ReportFormat::json) == replay(ReportFormat::json), "JSON reports differ between replays");
  o.require(replay(ReportFormat::text) == replay(ReportFormat::text), "text reports differ between replays");

  // 4 chains x 3000 draws x 10 series, 50-iteration batches over HTTP.
  EngineConfig cfg;
  cfg.schedule.every_n_iterations = 100;
  cfg.schedule.max_interval = 250ms;
  Engine engine(cfg);
  HttpServer server(engine);
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  HttpSink sink("127.0.0.1", port);

  ModelDescriptor flat;
  flat.variables = {testing::latent("x", {10})};
  auto md = meta(4);
  md.n_draws_planned = 3000;
  const auto id = sink.create_run(flat, md);

  // Iteration count on every chain -> when it was acknowledged.
  std::vector<std::pair<std::uint64_t, Clock::time_point>> ingested;
  std::mutex ingested_mutex;
  std::vector<std::pair<std::uint64_t, Clock::time_point>> analyzed;
  std::atomic<bool> done{false};
  std::thread poller([&] {
    std::uint64_t last = 0;
    while (!done) {
      if (auto s = engine.latest(id); s && s->report.frontier > last) {
        last = s->report.frontier;
        analyzed.emplace_back(last, Clock::now());
      }
      std::this_thread::sleep_for(1ms);
    }
  });

  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  std::bernoulli_distribution coin(0.8);
  double max_ack = 0;
  for (std::uint64_t first = 0; first < 3000; first += 50) {
    for (int c = 0; c < 4; ++c) {
      auto b = make_batch(flat, id, c, Phase::sample, first, 50, [&](auto, auto) { return normal(rng); });
      for (auto& a : b.accept) a = coin(rng) ? 1.0 : 0.0;
      const auto t0 = Clock::now();
      sink.append(b);
      max_ack = std::max(max_ack, std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
    std::lock_guard l(ingested_mutex);
    ingested.emplace_back(first + 50, Clock::now());
  }
  const auto deadline = Clock::now() + 5s;
  while (Clock::now() < deadline) {
    if (auto s = engine.latest(id); s && s->report.frontier == 3000) break;
    std::this_thread::sleep_for(1ms);
  }
  std::this_thread::sleep_for(5ms);
  done = true;
  poller.join();
  sink.finish(id, RunStatus::finished);
  server.stop();

  // Staleness: time from a count boundary being ingested on every chain until
  // an analysis covering it became visible.
  double worst_stale = 0;
  bool covered = true;
  for (const auto& [count, at] : ingested) {
    if (count % cfg.schedule.every_n_iterations != 0) continue;
    auto it = std::find_if(analyzed.begin(), analyzed.end(), [&](const auto& a) { return a.first >= count; });
    if (it == analyzed.end()) {
      covered = false;
      continue;
    }
    worst_stale = std::max(worst_stale, std::chrono::duration<double, std::milli>(it->second - at).count());
  }
  const double tick = static_cast<double>(cfg.schedule.max_interval.count());
  o.require(max_ack < 50, "max ack " + num(max_ack) + " ms");
  o.require(covered, "some count boundary never analyzed");
  o.require(worst_stale <= tick, "staleness " + num(worst_stale) + " ms > one tick");
  o.detail = "replay byte-identical; max ack " + num(max_ack, 3) + " ms; max staleness " + num(worst_stale, 3) +
             " ms (tick " + num(tick) + " ms, " + std::to_string(analyzed.size()) + " analyses)" +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

// --- 8 ----------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-2, 2);
  double worst = 0;
  for (const auto& name : builtin_model_names()) {
    auto m = builtin_model(name);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> x(m.density->dimension());
      for (auto& v : x) v = u(rng);
      const double err = gradient_check(*m.density, x);
      worst = std::max(worst, err);
      o.require(err < 1e-6, name + " trial " + std::to_string(trial) + " error " + num(err));
    }
  }
  o.detail = std::to_string(builtin_model_names().size()) + " models x 20 points, max error " + num(worst, 3) +
             (o.detail.empty() ? "" : "; " + o.detail);
  return o;
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

constexpr Criterion kCriteria[] = {
    {"rhat_oracle", rhat_oracle},
    {"rhat_discrimination", rhat_discrimination},
    {"ess_sanity", ess_sanity},
    {"rule_table", rule_table},
    {"funnel_end_to_end", funnel_end_to_end},
    {"stuck_and_burn_in", stuck_and_burn_in},
    {"determinism_and_latency", determinism_and_latency},
    {"gradients", gradients},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<std::string> known, only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if ((a == "--known-failure" || a == "--only") && i + 1 < argc) {
      (a == "--only" ? only : known).insert(argv[++i]);
    } else {
      std::cerr << "usage: infdbg_acceptance [--known-failure NAME]... [--only NAME]...\n";
      return 2;
    }
  }

  int failed = 0;
  for (const auto& c : kCriteria) {
    if (!only.empty() && !only.count(c.name)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool is_known = known.count(c.name) > 0;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << (!o.pass && is_known ? " (known)" : "") << ": "
              << o.detail << std::endl;
    if (!o.pass && !is_known) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
