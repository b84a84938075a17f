#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "infdbg/error.hpp"
#include "infdbg/model.hpp"

namespace infdbg {

enum class AlgorithmKind { random_walk_mh, hmc, nuts, other };

struct Algorithm {
  AlgorithmKind kind = AlgorithmKind::other;
  std::string label;  // free text for `other`

  static Algorithm parse(std::string_view s) {
    if (s == "random_walk_mh") return {AlgorithmKind::random_walk_mh, ""};
    if (s == "hmc") return {AlgorithmKind::hmc, ""};
    if (s == "nuts") return {AlgorithmKind::nuts, ""};
    return {AlgorithmKind::other, std::string(s)};
  }
  std::string name() const {
    switch (kind) {
      case AlgorithmKind::random_walk_mh: return "random_walk_mh";
      case AlgorithmKind::hmc: return "hmc";
      case AlgorithmKind::nuts: return "nuts";
      case AlgorithmKind::other: break;
    }
    return label.empty() ? "other" : label;
  }
  bool operator==(const Algorithm&) const = default;
};

struct RunMetadata {
  std::string run_id;  // assigned by the store
  Algorithm algorithm;
  int n_chains = 1;
  std::uint64_t n_tune = 0;
  std::uint64_t n_draws_planned = 1;
  std::map<std::string, double> hyperparameters;
  std::string started_at;

  bool operator==(const RunMetadata&) const = default;
};

enum class Phase { tune, sample };
enum class PhaseFilter { tune, sample, all };
enum class RunStatus { running, finished, aborted };

inline const char* to_string(Phase p) { return p == Phase::tune ? "tune" : "sample"; }
inline const char* to_string(PhaseFilter p) {
  switch (p) {
    case PhaseFilter::tune: return "tune";
    case PhaseFilter::sample: return "sample";
    case PhaseFilter::all: return "all";
  }
  return "all";
}
inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::running: return "running";
    case RunStatus::finished: return "finished";
    case RunStatus::aborted: return "aborted";
  }
  return "running";
}

/// Row-major batch_len x flat_size block of draws for one variable.
struct DrawMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  bool operator==(const DrawMatrix&) const = default;
};

struct SampleBatch {
  std::string run_id;
  int chain = 0;
  Phase phase = Phase::sample;
  std::uint64_t first_iteration = 0;
  std::map<std::string, DrawMatrix> draws;
  std::vector<double> accept;  // booleans as 0/1, or probabilities
  bool accept_is_probability = false;

  std::size_t size() const { return accept.size(); }
  bool operator==(const SampleBatch&) const = default;
};

namespace detail {

inline constexpr std::size_t kChunkSize = 4096;

using Chunk = std::shared_ptr<double[]>;

/// Append-only series in fixed-size chunks. Elements never move once written,
/// so a reader holding the chunk pointers and a length is unaffected by later
/// appends. All mutation happens under the owning chain's mutex.
class ChunkedSeries {
 public:
  void push_back(double v) {
    if (size_ % kChunkSize == 0) chunks_.emplace_back(new double[kChunkSize]);
    chunks_.back()[size_ % kChunkSize] = v;
    ++size_;
  }
  std::size_t size() const { return size_; }
  const std::vector<Chunk>& chunks() const { return chunks_; }

 private:
  std::vector<Chunk> chunks_;
  std::size_t size_ = 0;
};

}  // namespace detail

/// Immutable view over a prefix of one or two chunked series (tune then
/// sample when the filter is `all`).
class SeriesView {
 public:
  SeriesView() = default;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& p : parts_) n += p.length;
    return n;
  }
  bool empty() const { return size() == 0; }

  double operator[](std::size_t i) const {
    for (const auto& p : parts_) {
      if (i < p.length) return p.chunks[i / detail::kChunkSize][i % detail::kChunkSize];
      i -= p.length;
    }
    throw std::out_of_range("SeriesView index");
  }

  std::vector<double> to_vector() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& p : parts_)
      for (std::size_t i = 0; i < p.length; ++i)
        out.push_back(p.chunks[i / detail::kChunkSize][i % detail::kChunkSize]);
    return out;
  }

  void append_prefix(const detail::ChunkedSeries& s, std::size_t length) {
    if (length == 0) return;
    std::size_t nchunks = (length + detail::kChunkSize - 1) / detail::kChunkSize;
    Part p;
    p.chunks.assign(s.chunks().begin(), s.chunks().begin() + static_cast<std::ptrdiff_t>(nchunks));
    p.length = length;
    parts_.push_back(std::move(p));
  }

 private:
  struct Part {
    std::vector<detail::Chunk> chunks;
    std::size_t length = 0;
  };
  std::vector<Part> parts_;
};

struct ChainView {
  std::size_t n_tune = 0;    // stored lengths at the cut, regardless of filter
  std::size_t n_sample = 0;
  std::vector<SeriesView> series;  // one per flat series, filtered by phase
  SeriesView accept;
  bool accept_is_probability = false;
};

/// Point-in-time view of a run. Each chain is cut at a single ingest frontier.
struct RunSnapshot {
  RunMetadata metadata;
  std::shared_ptr<const ModelDescriptor> descriptor;
  std::shared_ptr<const std::vector<FlatSeries>> flat;
  RunStatus status = RunStatus::running;
  bool stop_requested = false;
  PhaseFilter phase = PhaseFilter::sample;
  std::vector<ChainView> chains;

  std::optional<std::size_t> series_index(std::string_view flat_name) const {
    for (std::size_t i = 0; i < flat->size(); ++i)
      if ((*flat)[i].name == flat_name) return i;
    return std::nullopt;
  }
};

struct ChainProgress {
  std::size_t n_tune = 0;
  std::size_t n_sample = 0;
};

struct RunSummary {
  RunMetadata metadata;
  RunStatus status = RunStatus::running;
  bool stop_requested = false;
  std::vector<ChainProgress> chains;
};

/// Owns all mutable run state. Thread-safe: one writer per (run, chain),
/// any number of readers.
class ChainStore {
 public:
  std::string create_run(ModelDescriptor descriptor, RunMetadata metadata) {
    validate(descriptor);
    if (metadata.n_chains < 1)
      throw Error(ErrorCode::invalid_argument, "n_chains must be >= 1");
    if (metadata.n_chains > kMaxChains)
      throw Error(ErrorCode::invalid_argument, "n_chains exceeds " + std::to_string(kMaxChains));
    if (metadata.n_draws_planned < 1)
      throw Error(ErrorCode::invalid_argument, "n_draws_planned must be >= 1");

    auto run = std::make_shared<Run>();
    run->flat = std::make_shared<const std::vector<FlatSeries>>(flatten(descriptor));
    run->descriptor = std::make_shared<const ModelDescriptor>(std::move(descriptor));
    for (int c = 0; c < metadata.n_chains; ++c) {
      auto chain = std::make_unique<ChainBuffers>();
      chain->tune.flat.resize(run->flat->size());
      chain->sample.flat.resize(run->flat->size());
      run->chains.push_back(std::move(chain));
    }
    std::unique_lock lock(mutex_);
    metadata.run_id = "run-" + std::to_string(++next_id_);
    run->metadata = metadata;
    runs_.emplace(metadata.run_id, run);
    order_.push_back(metadata.run_id);
    return metadata.run_id;
  }

  /// Returns the last iteration index now stored for (chain, phase).
  std::uint64_t append_batch(const SampleBatch& batch) {
    auto run = get(batch.run_id);
    std::shared_lock status_lock(run->status_mutex);
    if (run->status != RunStatus::running)
      throw Error(ErrorCode::run_finished, "run " + batch.run_id + " is " + to_string(run->status));
    if (batch.chain < 0 || batch.chain >= run->metadata.n_chains)
      throw Error(ErrorCode::invalid_argument, "chain " + std::to_string(batch.chain) + " out of range");
    const std::size_t len = batch.size();
    if (len == 0) throw Error(ErrorCode::invalid_argument, "empty batch");

    // Resolve columns before taking the chain lock.
    std::vector<const DrawMatrix*> columns;
    const auto& desc = *run->descriptor;
    for (const auto& v : desc.variables) {
      if (!v.has_draws()) continue;
      auto it = batch.draws.find(v.name);
      if (it == batch.draws.end())
        throw Error(ErrorCode::invalid_argument, "draws." + v.name + " missing");
      if (it->second.rows != len)
        throw Error(ErrorCode::invalid_argument,
                    "draws." + v.name + ": expected " + std::to_string(len) + " rows");
      if (it->second.cols != v.flat_size() || it->second.values.size() != len * v.flat_size())
        throw Error(ErrorCode::invalid_argument,
                    "draws." + v.name + ": expected " + std::to_string(v.flat_size()) + " columns");
      columns.push_back(&it->second);
    }
    for (const auto& [name, m] : batch.draws) {
      const auto* v = desc.find(name);
      if (!v) throw Error(ErrorCode::invalid_argument, "draws." + name + ": unknown variable");
      if (!v->has_draws())
        throw Error(ErrorCode::invalid_argument, "draws." + name + ": observed variable");
    }
    for (double a : batch.accept) {
      if (batch.accept_is_probability && !(a >= 0.0 && a <= 1.0))
        throw Error(ErrorCode::invalid_argument, "accept: probability out of range");
      if (!batch.accept_is_probability && a != 0.0 && a != 1.0)
        throw Error(ErrorCode::invalid_argument, "accept: expected booleans");
    }

    auto& chain = *run->chains[static_cast<std::size_t>(batch.chain)];
    std::lock_guard lock(chain.mutex);
    auto& buf = batch.phase == Phase::tune ? chain.tune : chain.sample;
    if (batch.first_iteration != buf.length)
      throw Error(ErrorCode::contiguity, "expected " + std::to_string(buf.length), buf.length);

    std::size_t flat = 0;
    for (const auto* m : columns)
      for (std::size_t c = 0; c < m->cols; ++c, ++flat)
        for (std::size_t r = 0; r < len; ++r) buf.flat[flat].push_back(m->at(r, c));
    for (double a : batch.accept) buf.accept.push_back(a);
    if (batch.accept_is_probability) chain.accept_is_probability = true;
    buf.length += len;
    return buf.length - 1;
  }

  RunSnapshot snapshot(const std::string& run_id, PhaseFilter phase = PhaseFilter::sample) const {
    auto run = get(run_id);
    RunSnapshot snap;
    snap.metadata = run->metadata;
    snap.descriptor = run->descriptor;
    snap.flat = run->flat;
    snap.phase = phase;
    {
      std::shared_lock status_lock(run->status_mutex);
      snap.status = run->status;
    }
    snap.stop_requested = run->stop.load();
    snap.chains.reserve(run->chains.size());
    for (const auto& chain : run->chains) {
      ChainView view;
      std::lock_guard lock(chain->mutex);
      view.n_tune = chain->tune.length;
      view.n_sample = chain->sample.length;
      view.accept_is_probability = chain->accept_is_probability;
      view.series.resize(run->flat->size());
      auto add = [&](const PhaseBuffers& b) {
        for (std::size_t i = 0; i < b.flat.size(); ++i) view.series[i].append_prefix(b.flat[i], b.length);
        view.accept.append_prefix(b.accept, b.length);
      };
      if (phase != PhaseFilter::sample) add(chain->tune);
      if (phase != PhaseFilter::tune) add(chain->sample);
      snap.chains.push_back(std::move(view));
    }
    return snap;
  }

  void request_stop(const std::string& run_id) { get(run_id)->stop.store(true); }
  bool read_control(const std::string& run_id) const { return get(run_id)->stop.load(); }

  RunStatus finish_run(const std::string& run_id, RunStatus outcome) {
    if (outcome == RunStatus::running)
      throw Error(ErrorCode::invalid_argument, "outcome must be finished or aborted");
    auto run = get(run_id);
    std::unique_lock status_lock(run->status_mutex);
    if (run->status != RunStatus::running)
      throw Error(ErrorCode::run_finished, "run " + run_id + " already " + to_string(run->status));
    run->status = outcome;
    return outcome;
  }

  RunSummary summary(const std::string& run_id) const {
    auto run = get(run_id);
    RunSummary s;
    s.metadata = run->metadata;
    {
      std::shared_lock status_lock(run->status_mutex);
      s.status = run->status;
    }
    s.stop_requested = run->stop.load();
    for (const auto& chain : run->chains) {
      std::lock_guard lock(chain->mutex);
      s.chains.push_back({chain->tune.length, chain->sample.length});
    }
    return s;
  }

  std::vector<std::string> run_ids() const {
    std::shared_lock lock(mutex_);
    return order_;
  }

  bool contains(const std::string& run_id) const {
    std::shared_lock lock(mutex_);
    return runs_.count(run_id) > 0;
  }

  std::shared_ptr<const ModelDescriptor> descriptor(const std::string& run_id) const {
    return get(run_id)->descriptor;
  }

  static constexpr int kMaxChains = 256;

 private:
  struct PhaseBuffers {
    std::vector<detail::ChunkedSeries> flat;
    detail::ChunkedSeries accept;
    std::size_t length = 0;
  };
  struct ChainBuffers {
    mutable std::mutex mutex;
    PhaseBuffers tune;
    PhaseBuffers sample;
    bool accept_is_probability = false;
  };
  struct Run {
    RunMetadata metadata;
    std::shared_ptr<const ModelDescriptor> descriptor;
    std::shared_ptr<const std::vector<FlatSeries>> flat;
    std::vector<std::unique_ptr<ChainBuffers>> chains;
    mutable std::shared_mutex status_mutex;  // shared by appends, exclusive for finish
    RunStatus status = RunStatus::running;
    std::atomic<bool> stop{false};
  };

  std::shared_ptr<Run> get(const std::string& run_id) const {
    std::shared_lock lock(mutex_);
    auto it = runs_.find(run_id);
    if (it == runs_.end()) throw Error(ErrorCode::unknown_run, "unknown run " + run_id);
    return it->second;
  }

  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Run>> runs_;
  std::vector<std::string> order_;
  std::uint64_t next_id_ = 0;
};

}  // namespace infdbg
