// infdbg: serve the engine, run seeded demos, replay batch logs, fetch reports.
//
// Exit codes: 0 ok, 1 domain error, 2 usage.

#include <csignal>
#include <functional>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "infdbg/config.hpp"
#include "infdbg/replay.hpp"
#include "infdbg/report.hpp"
#include "infdbg/sampler.hpp"
#include "infdbg/server.hpp"

namespace {

using namespace infdbg;

struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> settings;

  void add(CLI::App* app) {
    app->add_option("--config", config_file, "Config file (JSON object or key = value lines)")
        ->check(CLI::ExistingFile);
    app->add_option("--set", settings, "Override one setting, key=value (repeatable)");
  }

  // defaults < config file < --set flags
  EngineConfig build() const {
    EngineConfig cfg;
    if (!config_file.empty()) load_config_file(cfg, config_file);
    for (const auto& s : settings) {
      auto eq = s.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::invalid_argument, "--set expects key=value, got \"" + s + "\"");
      apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
  }
};

ReportFormat parse_format(const std::string& f) { return f == "json" ? ReportFormat::json : ReportFormat::text; }

std::atomic<bool> g_interrupted{false};
HttpServer* g_server = nullptr;

extern "C" void on_signal(int) {
  g_interrupted = true;
  if (g_server) g_server->stop();
}

int cmd_serve(const ConfigFlags& flags, const std::string& bind, int port) {
  Engine engine(flags.build());
  HttpServer server(engine);
  const int bound = server.bind(bind, port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on http://" << bind << ":" << bound << std::endl;
  server.listen();
  g_server = nullptr;
  return 0;
}

struct Profile {
  const char* name;
  AlgorithmKind algorithm;
  double step_size;
  int n_leapfrog;
  std::uint64_t tune;
  const char* about;
};

constexpr Profile kProfiles[] = {
    {"default", AlgorithmKind::hmc, 0.2, 10, 100, "hmc, step 0.2, 10 leapfrog steps, tune 100"},
    {"tuned", AlgorithmKind::hmc, 0.5, 8, 1000, "hmc, step 0.5, 8 leapfrog steps, tune 1000"},
    {"small-step", AlgorithmKind::hmc, 0.01, 10, 100, "hmc, step 0.01: acceptance near 1, slow mixing"},
    {"large-step", AlgorithmKind::hmc, 0.6, 10, 100, "hmc, step 0.6: many trajectories rejected"},
    {"stuck", AlgorithmKind::random_walk_mh, 1e6, 1, 100, "random-walk MH, step 1e6: every proposal rejected"},
};

const Profile& find_profile(const std::string& name) {
  for (const auto& p : kProfiles)
    if (name == p.name) return p;
  throw Error(ErrorCode::invalid_argument, "unknown fault profile \"" + name + "\"");
}

void print_timeline(HttpSink& client, const std::string& run_id, std::ostream& os) {
  std::uint64_t since = 0;
  for (;;) {
    auto page = client.get("/api/v1/runs/" + run_id + "/events?since=" + std::to_string(since) + "&timeout_ms=2000");
    since = page.at("next").get<std::uint64_t>();
    for (const auto& e : page.at("events")) {
      const auto type = e.at("type").get<std::string>();
      const auto& d = e.at("data");
      if (type == "warning-diff") {
        auto at = d.at("frontier").get<std::uint64_t>();
        for (const auto& w : d.at("new"))
          os << "  iter " << std::setw(5) << at << "  + " << w.at("kind").get<std::string>() << " "
             << w.at("variable").get<std::string>() << "\n";
        for (const auto& w : d.at("resolved"))
          os << "  iter " << std::setw(5) << at << "  - " << w.at("kind").get<std::string>() << " "
             << w.at("variable").get<std::string>() << "\n";
      } else if (type == "status" && d.contains("status") && d["status"] != "running") {
        os << "  run " << d["status"].get<std::string>() << "\n";
        return;
      }
    }
  }
}

struct DemoArgs {
  std::string model = "eight_schools_centered";
  std::string profile = "default";
  std::uint64_t seed = 7;
  int port = 0;
  std::optional<double> step_size;
  std::optional<int> n_leapfrog;
  std::optional<std::uint64_t> tune;
  std::uint64_t draws = 3000;
  int chains = 4;
  std::string format = "text";
};

int cmd_demo(const ConfigFlags& flags, const DemoArgs& a) {
  const auto& p = find_profile(a.profile);
  SamplerConfig sc;
  sc.algorithm = p.algorithm;
  sc.step_size = a.step_size.value_or(p.step_size);
  sc.n_leapfrog = a.n_leapfrog.value_or(p.n_leapfrog);
  sc.tune = a.tune.value_or(p.tune);
  sc.draws = a.draws;
  sc.chains = a.chains;
  sc.seed = a.seed;
  sc.validate();
  auto model = builtin_model(a.model);

  Engine engine(flags.build());
  HttpServer server(engine);
  const int port = server.bind("127.0.0.1", a.port);
  server.start();
  std::cout << "server on http://127.0.0.1:" << port << "\n";
  std::cout << "model " << a.model << ", profile " << p.name << " (" << p.about << "), seed " << a.seed << "\n";

  HttpSink sampler_link("127.0.0.1", port);
  std::string run_id;
  struct Announce final : BatchSink {
    HttpSink& inner;
    std::string& id;
    std::function<void()> started;
    Announce(HttpSink& i, std::string& r, std::function<void()> f) : inner(i), id(r), started(std::move(f)) {}
    std::string create_run(const ModelDescriptor& d, const RunMetadata& m) override {
      id = inner.create_run(d, m);
      started();
      return id;
    }
    void append(const SampleBatch& b) override { inner.append(b); }
    bool stop_requested(const std::string& r) override { return inner.stop_requested(r); }
    void finish(const std::string& r, RunStatus s) override { inner.finish(r, s); }
  };

  std::thread timeline;
  Announce sink(sampler_link, run_id, [&] {
    std::cout << "run " << run_id << " started; warnings timeline:" << std::endl;
    timeline = std::thread([&, id = run_id] {
      HttpSink watcher("127.0.0.1", port);
      print_timeline(watcher, id, std::cout);
    });
  });
  SamplerOutcome out;
  try {
    out = run_sampler(model, sc, sink);
  } catch (...) {
    if (timeline.joinable()) {
      if (!run_id.empty()) engine.finish_run(run_id, RunStatus::aborted);
      timeline.join();
    }
    throw;
  }
  timeline.join();

  std::cout << "\n" << render_report(engine, out.run_id, parse_format(a.format));
  server.stop();
  return 0;
}

int cmd_replay(const ConfigFlags& flags, const std::string& file, bool report, const std::string& format) {
  std::ifstream in(file);
  if (!in) throw Error(ErrorCode::invalid_argument, "cannot open " + file);
  Engine engine(flags.build(), Engine::Mode::inline_cadence);
  auto run_id = replay_log(engine, in);
  if (report) {
    std::cout << render_report(engine, run_id, parse_format(format));
  } else {
    auto s = engine.summary(run_id);
    std::cout << "replayed " << run_id << ": " << s.chains.size() << " chains, status " << to_string(s.status) << "\n";
  }
  return 0;
}

int cmd_report(const std::string& run_id, const std::string& server, const std::string& format) {
  std::string host = server;
  if (host.rfind("http://", 0) == 0) host = host.substr(7);
  int port = 8080;
  if (auto colon = host.rfind(':'); colon != std::string::npos) {
    port = std::stoi(host.substr(colon + 1));
    host = host.substr(0, colon);
  }
  httplib::Client client(host, port);
  auto res = client.Get("/api/v1/runs/" + run_id + "/report?format=" + format);
  if (!res) throw Error(ErrorCode::invalid_argument, "cannot reach " + server + ": " + httplib::to_string(res.error()));
  if (res->status != 200) {
    auto body = wire::json::parse(res->body, nullptr, false);
    std::string msg = body.is_object() && body.contains("message") ? body["message"].get<std::string>() : res->body;
    throw Error(res->status == 404 ? ErrorCode::unknown_run : ErrorCode::invalid_argument, msg);
  }
  std::cout << res->body;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Live diagnostics and warnings for MCMC runs"};
  app.require_subcommand(1);

  auto* serve = app.add_subcommand("serve", "Serve the engine over HTTP until interrupted");
  ConfigFlags serve_flags;
  serve_flags.add(serve);
  int serve_port = 8080;
  std::string serve_bind = "127.0.0.1";
  serve->add_option("--port", serve_port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--bind", serve_bind, "Address to bind");

  auto* demo = app.add_subcommand("demo", "Run a seeded sampler against an in-process server");
  ConfigFlags demo_flags;
  demo_flags.add(demo);
  DemoArgs demo_args;
  demo->add_option("--model", demo_args.model, "Builtin model")->check(CLI::IsMember(builtin_model_names()));
  std::vector<std::string> profile_names;
  for (const auto& p : kProfiles) profile_names.push_back(p.name);
  demo->add_option("--fault-profile", demo_args.profile, "Sampler settings profile")
      ->check(CLI::IsMember(profile_names));
  demo->add_option("--seed", demo_args.seed, "Sampler seed");
  demo->add_option("--port", demo_args.port, "Server port (0 picks a free one)")->check(CLI::Range(0, 65535));
  demo->add_option("--step-size", demo_args.step_size, "Override the profile's step size")
      ->check(CLI::PositiveNumber);
  demo->add_option("--n-leapfrog", demo_args.n_leapfrog, "Override the profile's leapfrog steps")
      ->check(CLI::PositiveNumber);
  demo->add_option("--tune", demo_args.tune, "Override the profile's tune iterations");
  demo->add_option("--draws", demo_args.draws, "Post-tune draws per chain")->check(CLI::PositiveNumber);
  demo->add_option("--chains", demo_args.chains, "Number of chains")->check(CLI::Range(1, 256));
  demo->add_option("--format", demo_args.format, "Final report format")->check(CLI::IsMember({"text", "json"}));

  auto* replay = app.add_subcommand("replay", "Replay a recorded JSONL batch log offline");
  ConfigFlags replay_flags;
  replay_flags.add(replay);
  std::string replay_file, replay_format = "text";
  bool replay_report = false;
  replay->add_option("file", replay_file, "Batch log")->required();
  replay->add_flag("--report", replay_report, "Print the final report");
  replay->add_option("--format", replay_format, "Report format")->check(CLI::IsMember({"text", "json"}));

  auto* report = app.add_subcommand("report", "Fetch a run's report from a server");
  std::string report_run, report_server = "http://127.0.0.1:8080", report_format = "text";
  report->add_option("run_id", report_run, "Run id")->required();
  report->add_option("--server", report_server, "Server address")->envname("INFDBG_URL");
  report->add_option("--format", report_format, "Report format")->check(CLI::IsMember({"text", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*serve) return cmd_serve(serve_flags, serve_bind, serve_port);
    if (*demo) return cmd_demo(demo_flags, demo_args);
    if (*replay) return cmd_replay(replay_flags, replay_file, replay_report, replay_format);
    if (*report) return cmd_report(report_run, report_server, report_format);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
