#pragma once

// JSON encoding of every wire object (protocol version 1). Decoders report
// schema violations as Error(invalid_argument) with the offending field path.

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "infdbg/analysis.hpp"
#include "infdbg/chain_store.hpp"
#include "infdbg/diagnostics.hpp"
#include "infdbg/model.hpp"
#include "infdbg/warnings.hpp"

namespace infdbg::wire {

using json = nlohmann::json;

inline constexpr int kProtocolVersion = 1;

namespace detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::invalid_argument, path + ": " + what);
}

inline const json& field(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) fail(path, "expected object");
  auto it = obj.find(key);
  if (it == obj.end()) fail(path + "." + key, "missing required field");
  return *it;
}

inline const json* optional_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return nullptr;
  return &*it;
}

inline std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected string");
  return j.get<std::string>();
}

inline std::int64_t as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected integer");
  return j.get<std::int64_t>();
}

inline std::uint64_t as_count(const json& j, const std::string& path) {
  auto v = as_int(j, path);
  if (v < 0) fail(path, "expected non-negative integer");
  return static_cast<std::uint64_t>(v);
}

inline double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected number");
  return j.get<double>();
}

inline const json& as_array(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected array");
  return j;
}

template <typename E, std::size_t N>
E parse_enum(const json& j, const std::string& path, const std::pair<const char*, E> (&table)[N]) {
  auto s = as_string(j, path);
  for (const auto& [name, value] : table)
    if (s == name) return value;
  fail(path, "unknown value \"" + s + "\"");
}

inline constexpr std::pair<const char*, VariableKind> kKinds[] = {
    {"latent", VariableKind::latent}, {"observed", VariableKind::observed},
    {"deterministic", VariableKind::deterministic}};
inline constexpr std::pair<const char*, Support> kSupports[] = {
    {"real", Support::real}, {"positive", Support::positive}, {"other", Support::other}};
inline constexpr std::pair<const char*, Slot> kSlots[] = {
    {"location", Slot::location}, {"scale", Slot::scale}, {"shape_param", Slot::shape_param},
    {"other", Slot::other}, {"deterministic_input", Slot::deterministic_input}};
inline constexpr std::pair<const char*, Phase> kPhases[] = {{"tune", Phase::tune}, {"sample", Phase::sample}};

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace detail

// --- envelope -------------------------------------------------------------

inline json envelope(json payload) {
  return json{{"protocol_version", kProtocolVersion}, {"payload", std::move(payload)}};
}

/// Returns the payload; rejects a missing or mismatched protocol version.
inline json open_envelope(const json& body) {
  const auto& v = detail::field(body, "protocol_version", "$");
  if (detail::as_int(v, "$.protocol_version") != kProtocolVersion)
    detail::fail("$.protocol_version", "unsupported protocol version " + v.dump() + " (expected 1)");
  return detail::field(body, "payload", "$");
}

inline json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::invalid_argument, std::string("$: malformed JSON: ") + e.what());
  }
}

// --- model ----------------------------------------------------------------

inline json to_json(const SourceSpan& s) {
  return {{"file", s.file}, {"line_start", s.line_start}, {"line_end", s.line_end}};
}

inline json to_json(const ModelDescriptor& m) {
  json vars = json::array();
  for (const auto& v : m.variables) {
    json j{{"name", v.name},
           {"kind", to_string(v.kind)},
           {"shape", v.shape},
           {"support", to_string(v.support)}};
    j["distribution"] = v.distribution ? json(*v.distribution) : json(nullptr);
    j["source_span"] = v.source_span ? to_json(*v.source_span) : json(nullptr);
    vars.push_back(std::move(j));
  }
  json edges = json::array();
  for (const auto& e : m.edges) edges.push_back({{"parent", e.parent}, {"child", e.child}, {"slot", to_string(e.slot)}});
  return {{"variables", vars}, {"edges", edges}};
}

inline ModelDescriptor descriptor_from_json(const json& j, const std::string& path = "$.descriptor") {
  using namespace detail;
  ModelDescriptor m;
  const auto& vars = as_array(field(j, "variables", path), path + ".variables");
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const auto p = path + ".variables[" + std::to_string(i) + "]";
    const auto& v = vars[i];
    VariableDecl d;
    d.name = as_string(field(v, "name", p), p + ".name");
    d.kind = parse_enum(field(v, "kind", p), p + ".kind", kKinds);
    if (auto* dist = optional_field(v, "distribution")) d.distribution = as_string(*dist, p + ".distribution");
    if (auto* shape = optional_field(v, "shape")) {
      as_array(*shape, p + ".shape");
      for (std::size_t k = 0; k < shape->size(); ++k) {
        auto n = as_int((*shape)[k], p + ".shape[" + std::to_string(k) + "]");
        if (n < 1) fail(p + ".shape[" + std::to_string(k) + "]", "shape entries must be >= 1");
        d.shape.push_back(static_cast<std::size_t>(n));
      }
    }
    if (auto* sup = optional_field(v, "support")) d.support = parse_enum(*sup, p + ".support", kSupports);
    if (auto* span = optional_field(v, "source_span")) {
      SourceSpan s;
      s.file = as_string(field(*span, "file", p + ".source_span"), p + ".source_span.file");
      s.line_start = static_cast<int>(as_int(field(*span, "line_start", p + ".source_span"), p + ".source_span.line_start"));
      s.line_end = static_cast<int>(as_int(field(*span, "line_end", p + ".source_span"), p + ".source_span.line_end"));
      d.source_span = s;
    }
    m.variables.push_back(std::move(d));
  }
  if (auto* edges = optional_field(j, "edges")) {
    as_array(*edges, path + ".edges");
    for (std::size_t i = 0; i < edges->size(); ++i) {
      const auto p = path + ".edges[" + std::to_string(i) + "]";
      const auto& e = (*edges)[i];
      m.edges.push_back({as_string(field(e, "parent", p), p + ".parent"),
                         as_string(field(e, "child", p), p + ".child"),
                         parse_enum(field(e, "slot", p), p + ".slot", kSlots)});
    }
  }
  return m;
}

// --- run metadata -------------------------------------------------------------

inline json to_json(const RunMetadata& m) {
  return {{"run_id", m.run_id},
          {"algorithm", m.algorithm.name()},
          {"n_chains", m.n_chains},
          {"n_tune", m.n_tune},
          {"n_draws_planned", m.n_draws_planned},
          {"hyperparameters", m.hyperparameters},
          {"started_at", m.started_at}};
}

inline RunMetadata metadata_from_json(const json& j, const std::string& path = "$.metadata") {
  using namespace detail;
  RunMetadata m;
  m.algorithm = Algorithm::parse(as_string(field(j, "algorithm", path), path + ".algorithm"));
  auto chains = as_int(field(j, "n_chains", path), path + ".n_chains");
  if (chains < 1 || chains > ChainStore::kMaxChains) fail(path + ".n_chains", "must be in [1, 256]");
  m.n_chains = static_cast<int>(chains);
  m.n_tune = as_count(field(j, "n_tune", path), path + ".n_tune");
  m.n_draws_planned = as_count(field(j, "n_draws_planned", path), path + ".n_draws_planned");
  if (m.n_draws_planned < 1) fail(path + ".n_draws_planned", "must be >= 1");
  if (auto* h = optional_field(j, "hyperparameters")) {
    if (!h->is_object()) fail(path + ".hyperparameters", "expected object");
    for (const auto& [k, v] : h->items()) m.hyperparameters[k] = as_number(v, path + ".hyperparameters." + k);
  }
  if (auto* s = optional_field(j, "started_at")) m.started_at = as_string(*s, path + ".started_at");
  return m;
}

inline json run_create_payload(const ModelDescriptor& d, const RunMetadata& m) {
  auto meta = to_json(m);
  meta.erase("run_id");
  return {{"descriptor", to_json(d)}, {"metadata", meta}};
}

// --- batches --------------------------------------------------------------

inline json to_json(const SampleBatch& b) {
  json draws = json::object();
  for (const auto& [name, m] : b.draws) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows; ++r) {
      if (m.cols == 1) {
        rows.push_back(m.at(r, 0));
      } else {
        json row = json::array();
        for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
        rows.push_back(std::move(row));
      }
    }
    draws[name] = std::move(rows);
  }
  json accept = json::array();
  for (double a : b.accept) {
    if (b.accept_is_probability)
      accept.push_back(a);
    else
      accept.push_back(a != 0.0);
  }
  json j{{"chain", b.chain},
         {"phase", to_string(b.phase)},
         {"first_iteration", b.first_iteration},
         {"draws", std::move(draws)},
         {"accept", std::move(accept)}};
  if (!b.run_id.empty()) j["run_id"] = b.run_id;
  return j;
}

inline SampleBatch batch_from_json(const json& j, const std::string& path = "$.payload") {
  using namespace detail;
  SampleBatch b;
  if (auto* id = optional_field(j, "run_id")) b.run_id = as_string(*id, path + ".run_id");
  b.chain = static_cast<int>(as_int(field(j, "chain", path), path + ".chain"));
  b.phase = parse_enum(field(j, "phase", path), path + ".phase", kPhases);
  b.first_iteration = as_count(field(j, "first_iteration", path), path + ".first_iteration");
  const auto& accept = as_array(field(j, "accept", path), path + ".accept");
  bool saw_bool = false, saw_number = false;
  for (std::size_t i = 0; i < accept.size(); ++i) {
    const auto& a = accept[i];
    if (a.is_boolean()) {
      saw_bool = true;
      b.accept.push_back(a.get<bool>() ? 1.0 : 0.0);
    } else if (a.is_number()) {
      saw_number = true;
      double p = a.get<double>();
      if (!(p >= 0.0 && p <= 1.0)) fail(path + ".accept[" + std::to_string(i) + "]", "probability out of range");
      b.accept.push_back(p);
    } else {
      fail(path + ".accept[" + std::to_string(i) + "]", "expected boolean or probability");
    }
  }
  if (saw_bool && saw_number) fail(path + ".accept", "mixes booleans and probabilities");
  b.accept_is_probability = saw_number;

  const auto& draws = field(j, "draws", path);
  if (!draws.is_object()) fail(path + ".draws", "expected object");
  for (const auto& [name, rows] : draws.items()) {
    const auto p = path + ".draws." + name;
    as_array(rows, p);
    DrawMatrix m;
    m.rows = rows.size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto rp = p + "[" + std::to_string(r) + "]";
      const auto& row = rows[r];
      if (row.is_number()) {
        if (r == 0) m.cols = 1;
        if (m.cols != 1) fail(rp, "row width differs from the first row");
        m.values.push_back(row.get<double>());
      } else if (row.is_array()) {
        if (r == 0) m.cols = row.size();
        if (row.size() != m.cols) fail(rp, "row width differs from the first row");
        for (std::size_t c = 0; c < row.size(); ++c) m.values.push_back(as_number(row[c], rp + "[" + std::to_string(c) + "]"));
      } else {
        fail(rp, "expected number or array of numbers");
      }
    }
    if (m.values.size() != m.rows * m.cols) fail(p, "ragged rows");
    b.draws.emplace(name, std::move(m));
  }
  return b;
}

// --- diagnostics ------------------------------------------------------------

inline json to_json(const VariableChainStats& s) {
  return {{"variable", s.variable},
          {"chain", s.chain == kAllChains ? json("ALL") : json(s.chain)},
          {"n", s.n},
          {"mean", s.mean},
          {"sd", s.sd},
          {"rhat", detail::optional_number(s.rhat)},
          {"ess_bulk", detail::optional_number(s.ess_bulk)},
          {"acceptance_rate", detail::optional_number(s.acceptance_rate)},
          {"degenerate", s.degenerate}};
}

inline json to_json(const HistogramData& h) { return {{"bin_edges", h.bin_edges}, {"counts", h.counts}}; }

inline json to_json(const TraceSlice& t) { return {{"iterations", t.iterations}, {"values", t.values}}; }

inline json to_json(const PairData& p) {
  return {{"iterations", p.iterations}, {"x", p.x}, {"y", p.y}, {"funnel_hint", detail::optional_number(p.funnel_hint)}};
}

inline json to_json(const RankHistogramData& r) { return {{"bin_edges", r.bin_edges}, {"counts", r.counts}}; }

inline json to_json(const FunnelCandidate& c) {
  json path = json::array();
  for (const auto& e : c.path) path.push_back({{"parent", e.parent}, {"child", e.child}, {"slot", to_string(e.slot)}});
  return {{"parent", c.parent}, {"child", c.child}, {"path", path}};
}

inline json to_json(const DiagnosticsReport& r) {
  json stats = json::array();
  for (const auto& s : r.stats) stats.push_back(to_json(s));
  json chains = json::array();
  for (const auto& c : r.chains)
    chains.push_back({{"chain", c.chain},
                      {"n_draws", c.n_draws},
                      {"n_sample", c.n_sample},
                      {"acceptance_rate", detail::optional_number(c.acceptance_rate)},
                      {"stuck_run_length", c.stuck_run_length}});
  json funnels = json::array();
  for (const auto& f : r.funnels) {
    auto j = to_json(f.candidate);
    j["score"] = detail::optional_number(f.score);
    funnels.push_back(std::move(j));
  }
  return {{"run_id", r.run_id},
          {"algorithm", r.algorithm.name()},
          {"n_chains", r.n_chains},
          {"phase", to_string(r.phase)},
          {"frontier", r.frontier},
          {"stats", stats},
          {"chains", chains},
          {"funnels", funnels}};
}

// --- warnings ---------------------------------------------------------------

inline json to_json(const Warning& w) {
  json vars = json::array();
  for (const auto& v : w.variables) vars.push_back({{"name", v.name}, {"indices", v.indices}});
  return {{"id", w.id},
          {"kind", to_string(w.kind)},
          {"severity", to_string(w.severity)},
          {"variables", vars},
          {"chains", w.chains},
          {"evidence", w.evidence},
          {"notes", w.notes},
          {"message", w.message},
          {"suggestion", w.suggestion},
          {"suggested_code", w.suggested_code ? json(*w.suggested_code) : json(nullptr)},
          {"source_span", w.source_span ? to_json(*w.source_span) : json(nullptr)},
          {"first_seen", w.first_seen},
          {"last_seen", w.last_seen}};
}

inline json to_json(const WarningDiff& d) {
  auto list = [](const std::vector<Warning>& ws, const char* status) {
    json a = json::array();
    for (const auto& w : ws) {
      auto j = to_json(w);
      j["status"] = status;
      a.push_back(std::move(j));
    }
    return a;
  };
  return {{"new", list(d.added, "active")},
          {"persisting", list(d.persisting, "active")},
          {"resolved", list(d.resolved, "resolved")}};
}

}  // namespace infdbg::wire
