#pragma once

// HTTP/1.1 + JSON front end of the engine (protocol version 1).

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>

#include "infdbg/engine.hpp"
#include "infdbg/report.hpp"
#include "infdbg/sampler.hpp"
#include "infdbg/wire.hpp"

namespace infdbg {

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::unknown_run: return 404;
    case ErrorCode::contiguity:
    case ErrorCode::run_finished: return 409;
    case ErrorCode::invalid_descriptor:
    case ErrorCode::invalid_argument: return 422;
    case ErrorCode::not_enough_data: return 422;
  }
  return 500;
}

inline ErrorCode error_code_from(const std::string& s) {
  for (auto c : {ErrorCode::invalid_descriptor, ErrorCode::invalid_argument, ErrorCode::unknown_run,
                 ErrorCode::contiguity, ErrorCode::run_finished, ErrorCode::not_enough_data})
    if (s == to_string(c)) return c;
  return ErrorCode::invalid_argument;
}

class HttpServer {
 public:
  explicit HttpServer(Engine& engine) : engine_(engine) {
    http_.set_tcp_nodelay(true);  // small acks must not wait on delayed ACKs
    routes();
  }
  ~HttpServer() { stop(); }

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds without serving; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    int bound = port == 0 ? http_.bind_to_any_port(host) : (http_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::invalid_argument, "cannot bind " + host + ":" + std::to_string(port));
    port_ = bound;
    return bound;
  }

  /// Serves on the calling thread until stop().
  void listen() { http_.listen_after_bind(); }

  /// Serves on a background thread.
  void start() {
    thread_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
  }

  void stop() {
    http_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  using Request = httplib::Request;
  using Response = httplib::Response;
  using json = wire::json;

  static void send(Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(Response& res, const Error& e) {
    json body{{"error", to_string(e.code())}, {"message", e.what()}};
    if (e.expected()) body["expected"] = *e.expected();
    send(res, body, http_status(e.code()));
  }

  template <typename F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const Request& req, Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_error(res, e);
      } catch (const std::exception& e) {
        send(res, json{{"error", "internal"}, {"message", e.what()}}, 500);
      }
    };
  }

  static std::optional<std::string> param(const Request& req, const char* key) {
    if (!req.has_param(key)) return std::nullopt;
    return req.get_param_value(key);
  }

  static std::size_t count_param(const Request& req, const char* key, std::size_t fallback) {
    auto v = param(req, key);
    if (!v) return fallback;
    try {
      std::size_t used = 0;
      long long n = std::stoll(*v, &used);
      if (used != v->size() || n < 0) throw std::invalid_argument(*v);
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw Error(ErrorCode::invalid_argument, std::string("query.") + key + ": expected non-negative integer");
    }
  }

  static int chain_param(const Request& req, const RunSnapshot& snap, int fallback) {
    auto v = param(req, "chain");
    if (!v || *v == "ALL" || v->empty()) return v ? kAllChains : fallback;
    auto c = static_cast<int>(count_param(req, "chain", 0));
    if (c >= static_cast<int>(snap.chains.size()))
      throw Error(ErrorCode::invalid_argument, "query.chain: out of range");
    return c;
  }

  PhaseFilter phase_param(const Request& req) const {
    auto v = param(req, "phase");
    if (!v) return engine_.default_phase();
    if (*v == "tune") return PhaseFilter::tune;
    if (*v == "sample") return PhaseFilter::sample;
    if (*v == "all") return PhaseFilter::all;
    throw Error(ErrorCode::invalid_argument, "query.phase: expected tune, sample or all");
  }

  static std::size_t series_param(const Request& req, const RunSnapshot& snap, const char* key) {
    auto v = param(req, key);
    if (!v) throw Error(ErrorCode::invalid_argument, std::string("query.") + key + ": missing required field");
    auto idx = snap.series_index(*v);
    if (!idx) throw Error(ErrorCode::invalid_argument, std::string("query.") + key + ": unknown variable \"" + *v + "\"");
    return *idx;
  }

  static json summary_json(const RunSummary& s) {
    json progress = json::array();
    for (const auto& c : s.chains) progress.push_back({{"n_tune", c.n_tune}, {"n_sample", c.n_sample}});
    auto meta = wire::to_json(s.metadata);
    meta["status"] = to_string(s.status);
    meta["stop_requested"] = s.stop_requested;
    meta["progress"] = progress;
    return meta;
  }

  void routes() {
    auto& s = http_;
    const std::string run = R"(/api/v1/runs/([^/]+))";

    // GETs may be cached for one schedule tick; the event stream never.
    s.set_post_routing_handler([this](const Request& req, Response& res) {
      if (req.method != "GET") return;
      const bool events = req.path.size() >= 7 && req.path.compare(req.path.size() - 7, 7, "/events") == 0;
      const auto tick = std::chrono::duration_cast<std::chrono::seconds>(engine_.config().schedule.max_interval);
      res.set_header("Cache-Control", events ? "no-store" : "max-age=" + std::to_string(tick.count()));
    });

    s.Post("/api/v1/runs", guarded([this](const Request& req, Response& res) {
      auto payload = wire::open_envelope(wire::parse_body(req.body));
      auto desc = wire::descriptor_from_json(wire::detail::field(payload, "descriptor", "$.payload"),
                                             "$.payload.descriptor");
      auto meta = wire::metadata_from_json(wire::detail::field(payload, "metadata", "$.payload"),
                                           "$.payload.metadata");
      if (meta.started_at.empty()) meta.started_at = now_iso8601();
      auto id = engine_.create_run(std::move(desc), std::move(meta));
      send(res, json{{"run_id", id}}, 201);
    }));

    s.Get("/api/v1/runs", guarded([this](const Request&, Response& res) {
      json runs = json::array();
      for (const auto& id : engine_.run_ids()) runs.push_back(summary_json(engine_.summary(id)));
      send(res, json{{"runs", runs}});
    }));

    s.Get(run, guarded([this](const Request& req, Response& res) {
      const std::string id = req.matches[1];
      auto body = summary_json(engine_.summary(id));
      json analysis = nullptr;
      if (auto st = engine_.latest(id)) {
        json analyzed = json::array();
        for (const auto& c : st->analyzed) analyzed.push_back({{"n_tune", c.n_tune}, {"n_sample", c.n_sample}});
        analysis = {{"evaluation", st->evaluation},
                    {"frontier", st->report.frontier},
                    {"analyzed", analyzed},
                    {"duration_ms", st->duration_ms},
                    {"age_ms", std::chrono::duration<double, std::milli>(Clock::now() - st->started).count()}};
      }
      body["analysis"] = analysis;
      send(res, body);
    }));

    s.Get(run + "/model", guarded([this](const Request& req, Response& res) {
      const std::string id = req.matches[1];
      json cands = json::array();
      for (const auto& c : engine_.candidates(id)) cands.push_back(wire::to_json(c));
      send(res, json{{"descriptor", wire::to_json(*engine_.descriptor(id))}, {"funnel_candidates", cands}});
    }));

    s.Post(run + "/batches", guarded([this](const Request& req, Response& res) {
      const std::string id = req.matches[1];
      auto payload = wire::open_envelope(wire::parse_body(req.body));
      auto batch = wire::batch_from_json(payload, "$.payload");
      batch.run_id = id;
      auto through = engine_.append_batch(std::move(batch));
      send(res, json{{"accepted_through_iteration", through}});
    }));

    s.Get(run + "/control", guarded([this](const Request& req, Response& res) {
      send(res, json{{"stop", engine_.read_control(req.matches[1])}});
    }));

    s.Post(run + "/control", guarded([this](const Request& req, Response& res) {
      const std::string id = req.matches[1];
      auto payload = wire::open_envelope(wire::parse_body(req.body));
      const auto& stop = wire::detail::field(payload, "stop", "$.payload");
      if (!stop.is_boolean()) wire::detail::fail("$.payload.stop", "expected boolean");
      if (!stop.get<bool>()) wire::detail::fail("$.payload.stop", "the stop flag is a latch; only true is accepted");
      engine_.request_stop(id);
      send(res, json{{"stop", engine_.read_control(id)}});
    }));

    s.Post(run + "/finish", guarded([this](const Request& req, Response& res) {
      const std::string id = req.matches[1];
      auto payload = wire::open_envelope(wire::parse_body(req.body));
      auto o = wire::detail::as_string(wire::detail::field(payload, "outcome", "$.payload"), "$.payload.outcome");
      RunStatus outcome;
      if (o == "finished") outcome = RunStatus::finished;
      else if (o == "aborted") outcome = RunStatus::aborted;
      else wire::detail::fail("$.payload.outcome", "expected finished or aborted");
      send(res, json{{"status", to_string(engine_.finish_run(id, outcome))}});
    }));

    s.Get(run + "/stats", guarded([this](const Request& req, Response& res) {
      const std::string id = req.matches[1];
      auto snap = engine_.snapshot(id, phase_param(req));
      const int chain = chain_param(req, snap, kAllChains);
      const auto& opts = engine_.config().analysis;
      if (param(req, "variable")) {
        send(res, wire::to_json(variable_stats(snap, series_param(req, snap, "variable"), chain, opts)));
        return;
      }
      json all = json::array();
      for (std::size_t i = 0; i < snap.flat->size(); ++i) all.push_back(wire::to_json(variable_stats(snap, i, chain, opts)));
      send(res, json{{"stats", all}});
    }));

    s.Get(run + "/plots/trace", guarded([this](const Request& req, Response& res) {
      auto snap = engine_.snapshot(req.matches[1], phase_param(req));
      auto idx = series_param(req, snap, "variable");
      const int chain = chain_param(req, snap, kAllChains);
      const auto max_points = count_param(req, "max_points", 500);
      json chains = json::array();
      for (std::size_t c = 0; c < snap.chains.size(); ++c) {
        if (chain != kAllChains && chain != static_cast<int>(c)) continue;
        auto values = snap.chains[c].series[idx].to_vector();
        json entry{{"chain", c}};
        if (values.empty()) {
          entry["iterations"] = json::array();
          entry["values"] = json::array();
        } else {
          auto t = trace_slice(values, max_points);
          entry["iterations"] = t.iterations;
          entry["values"] = t.values;
        }
        chains.push_back(std::move(entry));
      }
      send(res, json{{"variable", (*snap.flat)[idx].name}, {"phase", to_string(snap.phase)}, {"chains", chains}});
    }));

    s.Get(run + "/plots/histogram", guarded([this](const Request& req, Response& res) {
      auto snap = engine_.snapshot(req.matches[1], phase_param(req));
      auto idx = series_param(req, snap, "variable");
      const int chain = chain_param(req, snap, kAllChains);
      std::vector<double> values;
      for (std::size_t c = 0; c < snap.chains.size(); ++c)
        if (chain == kAllChains || chain == static_cast<int>(c)) {
          auto v = snap.chains[c].series[idx].to_vector();
          values.insert(values.end(), v.begin(), v.end());
        }
      auto body = wire::to_json(histogram(values, count_param(req, "bins", 30)));
      body["variable"] = (*snap.flat)[idx].name;
      send(res, body);
    }));

    s.Get(run + "/plots/rank", guarded([this](const Request& req, Response& res) {
      auto snap = engine_.snapshot(req.matches[1], phase_param(req));
      auto idx = series_param(req, snap, "variable");
      Chains chains;
      for (const auto& c : snap.chains) chains.push_back(c.series[idx].to_vector());
      auto body = wire::to_json(rank_histogram(chains, count_param(req, "bins", 20)));
      body["variable"] = (*snap.flat)[idx].name;
      send(res, body);
    }));

    s.Get(run + "/plots/pair", guarded([this](const Request& req, Response& res) {
      const std::string id = req.matches[1];
      auto snap = engine_.snapshot(id, phase_param(req));
      auto xi = series_param(req, snap, "x");
      auto yi = series_param(req, snap, "y");
      int chain = chain_param(req, snap, 0);
      if (chain == kAllChains) chain = 0;
      const auto& xs = (*snap.flat)[xi];
      const auto& ys = (*snap.flat)[yi];
      std::optional<Support> scale_support;
      for (const auto& c : engine_.candidates(id))
        if (c.child == ys.root && c.scale_source() == xs.root) scale_support = xs.support;
      auto x = snap.chains[static_cast<std::size_t>(chain)].series[xi].to_vector();
      auto y = snap.chains[static_cast<std::size_t>(chain)].series[yi].to_vector();
      auto body = wire::to_json(pair_data(x, y, std::max<std::size_t>(1, count_param(req, "thin", 1)), scale_support));
      body["x_variable"] = xs.name;
      body["y_variable"] = ys.name;
      body["chain"] = chain;
      const auto& hint = body["funnel_hint"];
      body["funnel_suspected"] =
          hint.is_number() && hint.get<double>() >= engine_.config().thresholds.funnel_score_min;
      send(res, body);
    }));

    s.Get(run + "/warnings", guarded([this](const Request& req, Response& res) {
      auto st = engine_.latest(req.matches[1]);
      json body = st ? wire::to_json(st->warnings)
                     : json{{"new", json::array()}, {"persisting", json::array()}, {"resolved", json::array()}};
      body["evaluation"] = st ? st->evaluation : 0;
      body["frontier"] = st ? st->report.frontier : 0;
      send(res, body);
    }));

    s.Get(run + "/events", guarded([this](const Request& req, Response& res) {
      const auto since = count_param(req, "since", 0);
      const auto timeout = std::min<std::size_t>(count_param(req, "timeout_ms", 25000), 60000);
      auto page = engine_.wait_events(req.matches[1], since, std::chrono::milliseconds(timeout));
      json events = json::array();
      for (const auto& e : page.events) events.push_back({{"seq", e.seq}, {"type", e.type}, {"data", e.data}});
      send(res, json{{"events", events}, {"next", page.next}});
    }));

    s.Get(run + "/report", guarded([this](const Request& req, Response& res) {
      auto f = param(req, "format").value_or("text");
      if (f != "text" && f != "json") throw Error(ErrorCode::invalid_argument, "query.format: expected text or json");
      const auto fmt = f == "json" ? ReportFormat::json : ReportFormat::text;
      res.set_content(render_report(engine_, req.matches[1], fmt), fmt == ReportFormat::json ? "application/json" : "text/plain");
    }));
  }

  static std::string now_iso8601() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  Engine& engine_;
  httplib::Server http_;
  std::thread thread_;
  int port_ = -1;
};

/// Sampler sink that talks to a running server over HTTP.
class HttpSink final : public BatchSink {
 public:
  HttpSink(const std::string& host, int port) : client_(host, port) {
    client_.set_keep_alive(true);
    client_.set_tcp_nodelay(true);
    client_.set_read_timeout(30, 0);
  }

  std::string create_run(const ModelDescriptor& d, const RunMetadata& m) override {
    return post("/api/v1/runs", wire::run_create_payload(d, m)).at("run_id").get<std::string>();
  }

  void append(const SampleBatch& b) override {
    auto payload = wire::to_json(b);
    payload.erase("run_id");
    post("/api/v1/runs/" + b.run_id + "/batches", payload);
  }

  bool stop_requested(const std::string& id) override {
    return get("/api/v1/runs/" + id + "/control").at("stop").get<bool>();
  }

  void finish(const std::string& id, RunStatus s) override {
    post("/api/v1/runs/" + id + "/finish", {{"outcome", to_string(s)}});
  }

  wire::json get(const std::string& path) { return check(client_.Get(path), path); }

  wire::json post(const std::string& path, const wire::json& payload) {
    return check(client_.Post(path, wire::envelope(payload).dump(), "application/json"), path);
  }

 private:
  static wire::json check(const httplib::Result& r, const std::string& path) {
    if (!r) throw Error(ErrorCode::invalid_argument, "request " + path + " failed: " + httplib::to_string(r.error()));
    wire::json body = wire::json::parse(r->body, nullptr, false);
    if (r->status >= 300) {
      std::optional<std::uint64_t> expected;
      if (body.is_object() && body.contains("expected")) expected = body["expected"].get<std::uint64_t>();
      auto code = body.is_object() && body.contains("error") ? error_code_from(body["error"].get<std::string>())
                                                             : ErrorCode::invalid_argument;
      auto msg = body.is_object() && body.contains("message") ? body["message"].get<std::string>() : r->body;
      throw Error(code, msg, expected);
    }
    return body;
  }

  httplib::Client client_;
};

}  // namespace infdbg
