#pragma once

// Self-contained random-walk Metropolis and HMC samplers that stream their
// draws in batches to a sink (the engine in-process, or the HTTP API).

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "infdbg/chain_store.hpp"
#include "infdbg/engine.hpp"
#include "infdbg/models.hpp"

namespace infdbg {

struct SamplerConfig {
  AlgorithmKind algorithm = AlgorithmKind::hmc;  // random_walk_mh or hmc
  double step_size = 0.2;
  int n_leapfrog = 10;
  int chains = 4;
  std::uint64_t tune = 100;
  std::uint64_t draws = 3000;
  std::uint64_t seed = 7;
  std::size_t batch_size = 50;

  void validate() const {
    if (algorithm != AlgorithmKind::hmc && algorithm != AlgorithmKind::random_walk_mh)
      throw Error(ErrorCode::invalid_argument, "sampler supports random_walk_mh and hmc");
    if (!(step_size > 0)) throw Error(ErrorCode::invalid_argument, "step_size must be positive");
    if (n_leapfrog < 1 || chains < 1 || draws < 1 || batch_size < 1)
      throw Error(ErrorCode::invalid_argument, "n_leapfrog, chains, draws and batch_size must be positive");
  }
};

/// Receiver of a sampler's stream.
class BatchSink {
 public:
  virtual ~BatchSink() = default;
  virtual std::string create_run(const ModelDescriptor& d, const RunMetadata& m) = 0;
  virtual void append(const SampleBatch& batch) = 0;
  virtual bool stop_requested(const std::string& run_id) = 0;
  virtual void finish(const std::string& run_id, RunStatus outcome) = 0;
};

class EngineSink final : public BatchSink {
 public:
  explicit EngineSink(Engine& engine) : engine_(engine) {}
  std::string create_run(const ModelDescriptor& d, const RunMetadata& m) override { return engine_.create_run(d, m); }
  void append(const SampleBatch& b) override { engine_.append_batch(b); }
  bool stop_requested(const std::string& id) override { return engine_.read_control(id); }
  void finish(const std::string& id, RunStatus s) override { engine_.finish_run(id, s); }

 private:
  Engine& engine_;
};

struct SamplerOutcome {
  std::string run_id;
  RunStatus status = RunStatus::finished;
  std::vector<double> acceptance;  // per chain, sampling phase
};

namespace detail {

struct ChainState {
  std::mt19937_64 rng;
  std::vector<double> position;
  double log_density = 0;
  std::uint64_t accepted = 0;
  std::uint64_t sampled = 0;
};

inline bool mh_step(const DensityModel& model, const SamplerConfig& cfg, ChainState& s) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  std::vector<double> prop = s.position;
  for (auto& v : prop) v += cfg.step_size * normal(s.rng);
  const double lp = model.log_density(prop);
  const double u = unif(s.rng);
  if (std::isfinite(lp) && std::log(u) < lp - s.log_density) {
    s.position = std::move(prop);
    s.log_density = lp;
    return true;
  }
  return false;
}

/// One leapfrog trajectory with unit mass matrix and a Metropolis correction
/// on the Hamiltonian error.
inline bool hmc_step(const DensityModel& model, const SamplerConfig& cfg, ChainState& s) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;
  const std::size_t n = s.position.size();
  const double eps = cfg.step_size;
  std::vector<double> q = s.position, p(n), g(n);
  for (auto& v : p) v = normal(s.rng);
  double kinetic0 = 0;
  for (double v : p) kinetic0 += v * v / 2;

  model.gradient(q, g);
  for (std::size_t i = 0; i < n; ++i) p[i] += eps * g[i] / 2;
  for (int l = 0; l < cfg.n_leapfrog; ++l) {
    for (std::size_t i = 0; i < n; ++i) q[i] += eps * p[i];
    model.gradient(q, g);
    const double scale = l + 1 == cfg.n_leapfrog ? eps / 2 : eps;
    for (std::size_t i = 0; i < n; ++i) p[i] += scale * g[i];
  }
  double kinetic1 = 0;
  for (double v : p) kinetic1 += v * v / 2;
  const double lp = model.log_density(q);
  const double log_ratio = (lp - kinetic1) - (s.log_density - kinetic0);
  const double u = unif(s.rng);
  if (std::isfinite(lp) && std::isfinite(log_ratio) && std::log(u) < log_ratio) {
    s.position = std::move(q);
    s.log_density = lp;
    return true;
  }
  return false;
}

}  // namespace detail

/// Streams `chains` chains of tune then sample iterations. Chains advance
/// round-robin one batch at a time; the stop flag is checked after every
/// batch. Initial points are drawn uniformly from [-2, 2] per coordinate.
inline SamplerOutcome run_sampler(const BuiltinModel& model, const SamplerConfig& cfg, BatchSink& sink) {
  cfg.validate();
  const auto& density = *model.density;
  std::vector<detail::ChainState> chains(static_cast<std::size_t>(cfg.chains));
  for (std::size_t c = 0; c < chains.size(); ++c) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(c), 0x5eedu};
    chains[c].rng.seed(seq);
    std::uniform_real_distribution<double> init(-2.0, 2.0);
    chains[c].position.resize(density.dimension());
    for (auto& v : chains[c].position) v = init(chains[c].rng);
    chains[c].log_density = density.log_density(chains[c].position);
    if (!std::isfinite(chains[c].log_density))
      throw Error(ErrorCode::invalid_argument,
                  "non-finite log density at the initial point of chain " + std::to_string(c));
  }

  RunMetadata meta;
  meta.algorithm = {cfg.algorithm, ""};
  meta.n_chains = cfg.chains;
  meta.n_tune = cfg.tune;
  meta.n_draws_planned = cfg.draws;
  meta.hyperparameters = {{"step_size", cfg.step_size}, {"seed", static_cast<double>(cfg.seed)}};
  if (cfg.algorithm == AlgorithmKind::hmc) meta.hyperparameters["n_leapfrog"] = cfg.n_leapfrog;

  SamplerOutcome out;
  out.run_id = sink.create_run(model.descriptor, meta);

  std::vector<const VariableDecl*> columns;
  for (const auto& v : model.descriptor.variables)
    if (v.has_draws()) columns.push_back(&v);

  for (Phase phase : {Phase::tune, Phase::sample}) {
    const std::uint64_t total = phase == Phase::tune ? cfg.tune : cfg.draws;
    for (std::uint64_t first = 0; first < total; first += cfg.batch_size) {
      const std::size_t len = static_cast<std::size_t>(std::min<std::uint64_t>(cfg.batch_size, total - first));
      for (std::size_t c = 0; c < chains.size(); ++c) {
        auto& st = chains[c];
        SampleBatch b;
        b.run_id = out.run_id;
        b.chain = static_cast<int>(c);
        b.phase = phase;
        b.first_iteration = first;
        for (const auto* v : columns) b.draws[v->name] = DrawMatrix{len, v->flat_size(), {}};
        for (std::size_t it = 0; it < len; ++it) {
          const bool accepted = cfg.algorithm == AlgorithmKind::hmc ? detail::hmc_step(density, cfg, st)
                                                                     : detail::mh_step(density, cfg, st);
          if (phase == Phase::sample) {
            ++st.sampled;
            st.accepted += accepted;
          }
          b.accept.push_back(accepted ? 1.0 : 0.0);
          for (auto& [name, values] : density.constrain(st.position)) {
            auto& m = b.draws[name];
            m.values.insert(m.values.end(), values.begin(), values.end());
          }
        }
        sink.append(b);
        if (sink.stop_requested(out.run_id)) {
          sink.finish(out.run_id, RunStatus::aborted);
          out.status = RunStatus::aborted;
          for (const auto& s : chains)
            out.acceptance.push_back(s.sampled ? static_cast<double>(s.accepted) / static_cast<double>(s.sampled) : 0.0);
          return out;
        }
      }
    }
  }
  sink.finish(out.run_id, RunStatus::finished);
  for (const auto& s : chains)
    out.acceptance.push_back(s.sampled ? static_cast<double>(s.accepted) / static_cast<double>(s.sampled) : 0.0);
  return out;
}

}  // namespace infdbg
