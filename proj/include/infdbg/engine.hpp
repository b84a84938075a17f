#pragma once

// The engine ties the chain store to incremental analysis: it schedules
// diagnostics + warning evaluation per run, keeps the warning lifecycle, and
// publishes change notifications for long-polling clients.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "infdbg/analysis.hpp"
#include "infdbg/batch_log.hpp"
#include "infdbg/chain_store.hpp"
#include "infdbg/config.hpp"
#include "infdbg/funnel.hpp"
#include "infdbg/warnings.hpp"
#include "infdbg/wire.hpp"

namespace infdbg {

using Clock = std::chrono::steady_clock;

/// Result of one evaluation, published atomically per run.
struct AnalysisState {
  DiagnosticsReport report;
  WarningDiff warnings;  // cumulative: active (new/persisting) + resolved history
  std::uint64_t evaluation = 0;
  std::vector<ChainProgress> analyzed;  // per-chain store lengths at the cut
  double duration_ms = 0;
  Clock::time_point started;
};

struct Event {
  std::uint64_t seq = 0;
  std::string type;  // progress | stats-updated | warning-diff | status
  wire::json data;
};

struct EventPage {
  std::vector<Event> events;
  std::uint64_t next = 0;  // pass as `since` for the following page
};

class Engine {
 public:
  enum class Mode {
    background,  // analysis on a scheduler thread (count or time trigger)
    inline_cadence,  // analysis inside append_batch on the count trigger only; deterministic
  };

  explicit Engine(EngineConfig config = {}, Mode mode = Mode::background)
      : config_(std::move(config)), mode_(mode) {
    config_.validate();
    if (mode_ == Mode::background) scheduler_ = std::thread([this] { schedule_loop(); });
  }

  ~Engine() {
    {
      std::lock_guard lock(schedule_mutex_);
      shutting_down_ = true;
    }
    schedule_cv_.notify_all();
    events_cv_.notify_all();
    if (scheduler_.joinable()) scheduler_.join();
  }

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  const EngineConfig& config() const { return config_; }
  ChainStore& store() { return store_; }

  std::string create_run(ModelDescriptor descriptor, RunMetadata metadata) {
    auto candidates = [&] {
      validate(descriptor);
      return funnel_static_detect(descriptor);
    }();
    RunRecord record{descriptor, metadata};
    auto id = store_.create_run(std::move(descriptor), std::move(metadata));
    auto a = std::make_shared<RunAnalyzer>();
    a->candidates = std::move(candidates);
    a->last_counts.assign(static_cast<std::size_t>(record.metadata.n_chains), 0);
    a->last_analysis = Clock::now();
    if (!config_.spill_dir.empty()) {
      std::filesystem::create_directories(config_.spill_dir);
      a->log = std::make_unique<BatchLogWriter>(std::filesystem::path(config_.spill_dir) / (id + ".jsonl"));
      record.metadata.run_id = id;
      a->log->write(encode_record(record));
    }
    {
      std::lock_guard lock(analyzers_mutex_);
      analyzers_[id] = a;
    }
    publish(id, "status", {{"status", "running"}});
    return id;
  }

  std::uint64_t append_batch(SampleBatch batch) {
    auto a = analyzer(batch.run_id);
    auto through = store_.append_batch(batch);
    a->ingested.fetch_add(batch.size());
    if (a->log) a->log->write(encode_record(batch));
    publish(batch.run_id, "progress",
            {{"chain", batch.chain}, {"phase", to_string(batch.phase)}, {"through", through}});
    if (mode_ == Mode::inline_cadence) {
      if (count_trigger(batch.run_id, *a)) analyze(batch.run_id, *a);
    } else {
      schedule_cv_.notify_one();
    }
    return through;
  }

  void request_stop(const std::string& run_id) {
    bool was = store_.read_control(run_id);
    store_.request_stop(run_id);
    if (!was) publish(run_id, "status", {{"stop", true}});
  }
  bool read_control(const std::string& run_id) const { return store_.read_control(run_id); }

  /// Marks the run finished or aborted and runs the final evaluation.
  RunStatus finish_run(const std::string& run_id, RunStatus outcome) {
    auto a = analyzer(run_id);
    auto s = store_.finish_run(run_id, outcome);
    if (a->log) a->log->write(encode_record(run_id, FinishRecord{outcome}));
    analyze(run_id, *a);
    publish(run_id, "status", {{"status", to_string(s)}});
    return s;
  }

  RunSummary summary(const std::string& run_id) const { return store_.summary(run_id); }
  std::vector<std::string> run_ids() const { return store_.run_ids(); }
  std::shared_ptr<const ModelDescriptor> descriptor(const std::string& run_id) const {
    return store_.descriptor(run_id);
  }
  RunSnapshot snapshot(const std::string& run_id, PhaseFilter phase) const {
    return store_.snapshot(run_id, phase);
  }
  PhaseFilter default_phase() const { return config_.include_tune ? PhaseFilter::all : PhaseFilter::sample; }

  const std::vector<FunnelCandidate>& candidates(const std::string& run_id) const {
    return analyzer(run_id)->candidates;
  }

  /// Latest published evaluation; null before the first one.
  std::shared_ptr<const AnalysisState> latest(const std::string& run_id) const {
    auto a = analyzer(run_id);
    std::lock_guard lock(a->latest_mutex);
    return a->latest;
  }

  /// Forces an evaluation now (serialized with scheduled ones).
  std::shared_ptr<const AnalysisState> analyze_now(const std::string& run_id) {
    auto a = analyzer(run_id);
    analyze(run_id, *a);
    return latest(run_id);
  }

  /// Events for the run with seq > since; waits up to `timeout` for one.
  EventPage wait_events(const std::string& run_id, std::uint64_t since, std::chrono::milliseconds timeout) {
    analyzer(run_id);  // throws for unknown runs
    std::unique_lock lock(events_mutex_);
    auto collect = [&] {
      EventPage page;
      page.next = since;
      auto it = events_.find(run_id);
      if (it == events_.end()) return page;
      for (const auto& e : it->second)
        if (e.seq > since) {
          page.events.push_back(e);
          page.next = e.seq;
        }
      return page;
    };
    auto page = collect();
    if (page.events.empty() && timeout.count() > 0) {
      events_cv_.wait_for(lock, timeout, [&] {
        if (shutting_down_flag()) return true;
        auto it = events_.find(run_id);
        return it != events_.end() && !it->second.empty() && it->second.back().seq > since;
      });
      page = collect();
    }
    return page;
  }

 private:
  struct RunAnalyzer {
    std::vector<FunnelCandidate> candidates;
    std::mutex analysis_mutex;  // serializes evaluations of this run
    WarningTracker tracker;
    std::vector<std::size_t> last_counts;  // per-chain post-tune lengths at last evaluation
    std::uint64_t evaluations = 0;
    std::atomic<std::uint64_t> ingested{0};
    std::uint64_t analyzed_ingested = 0;
    Clock::time_point last_analysis;
    mutable std::mutex latest_mutex;
    std::shared_ptr<const AnalysisState> latest;
    std::unique_ptr<BatchLogWriter> log;
  };

  std::shared_ptr<RunAnalyzer> analyzer(const std::string& run_id) const {
    std::lock_guard lock(analyzers_mutex_);
    auto it = analyzers_.find(run_id);
    if (it == analyzers_.end()) throw Error(ErrorCode::unknown_run, "unknown run " + run_id);
    return it->second;
  }

  bool count_trigger(const std::string& run_id, RunAnalyzer& a) {
    auto s = store_.summary(run_id);
    std::lock_guard lock(a.analysis_mutex);
    for (std::size_t c = 0; c < s.chains.size(); ++c)
      if (s.chains[c].n_sample >= a.last_counts[c] + config_.schedule.every_n_iterations) return true;
    return false;
  }

  bool time_trigger(RunAnalyzer& a) {
    std::lock_guard lock(a.analysis_mutex);
    return a.ingested.load() > a.analyzed_ingested &&
           Clock::now() - a.last_analysis >= config_.schedule.max_interval;
  }

  void analyze(const std::string& run_id, RunAnalyzer& a) {
    std::lock_guard lock(a.analysis_mutex);
    const auto started = Clock::now();
    const auto ingested = a.ingested.load();
    auto snap = store_.snapshot(run_id, default_phase());
    auto desc = snap.descriptor;
    auto report = infdbg::analyze(snap, a.candidates, config_.analysis);
    auto warnings = evaluate(report, a.candidates, *desc, config_.thresholds, snap.metadata);
    auto step = a.tracker.update(warnings);

    auto state = std::make_shared<AnalysisState>();
    state->report = std::move(report);
    state->warnings = a.tracker.state();
    state->evaluation = ++a.evaluations;
    for (const auto& c : snap.chains) state->analyzed.push_back({c.n_tune, c.n_sample});
    state->started = started;
    state->duration_ms = std::chrono::duration<double, std::milli>(Clock::now() - started).count();

    for (std::size_t c = 0; c < snap.chains.size(); ++c) a.last_counts[c] = snap.chains[c].n_sample;
    a.analyzed_ingested = ingested;
    a.last_analysis = started;
    {
      std::lock_guard l(a.latest_mutex);
      a.latest = state;
    }
    publish(run_id, "stats-updated", {{"evaluation", state->evaluation}, {"frontier", state->report.frontier}});
    if (!step.added.empty() || !step.resolved.empty()) {
      wire::json added = wire::json::array(), resolved = wire::json::array();
      for (const auto& w : step.added) added.push_back({{"id", w.id}, {"kind", to_string(w.kind)}, {"variable", w.root()}});
      for (const auto& w : step.resolved)
        resolved.push_back({{"id", w.id}, {"kind", to_string(w.kind)}, {"variable", w.root()}});
      publish(run_id, "warning-diff",
              {{"evaluation", state->evaluation}, {"frontier", state->report.frontier}, {"new", added},
               {"resolved", resolved}});
    }
  }

  void schedule_loop() {
    std::unique_lock lock(schedule_mutex_);
    while (!shutting_down_) {
      schedule_cv_.wait_for(lock, std::chrono::milliseconds(10));
      if (shutting_down_) break;
      lock.unlock();
      std::vector<std::pair<std::string, std::shared_ptr<RunAnalyzer>>> runs;
      {
        std::lock_guard l(analyzers_mutex_);
        runs.assign(analyzers_.begin(), analyzers_.end());
      }
      for (auto& [id, a] : runs) {
        if (store_.summary(id).status != RunStatus::running) continue;
        if (count_trigger(id, *a) || time_trigger(*a)) analyze(id, *a);
      }
      lock.lock();
    }
  }

  bool shutting_down_flag() const { return shutting_down_.load(); }

  void publish(const std::string& run_id, const char* type, wire::json data) {
    {
      std::lock_guard lock(events_mutex_);
      auto& q = events_[run_id];
      q.push_back({++event_seq_, type, std::move(data)});
      while (q.size() > kMaxEventsPerRun) q.pop_front();
    }
    events_cv_.notify_all();
  }

  static constexpr std::size_t kMaxEventsPerRun = 20000;

  EngineConfig config_;
  Mode mode_;
  ChainStore store_;

  mutable std::mutex analyzers_mutex_;
  std::map<std::string, std::shared_ptr<RunAnalyzer>> analyzers_;

  std::mutex events_mutex_;
  std::condition_variable events_cv_;
  std::map<std::string, std::deque<Event>> events_;
  std::uint64_t event_seq_ = 0;

  std::mutex schedule_mutex_;
  std::condition_variable schedule_cv_;
  std::atomic<bool> shutting_down_{false};
  std::thread scheduler_;
};

}  // namespace infdbg
