#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "infdbg/error.hpp"

namespace infdbg {

enum class VariableKind { latent, observed, deterministic };
enum class Support { real, positive, other };
enum class Slot { location, scale, shape_param, other, deterministic_input };

struct SourceSpan {
  std::string file;
  int line_start = 1;
  int line_end = 1;

  bool operator==(const SourceSpan&) const = default;
};

struct VariableDecl {
  std::string name;
  VariableKind kind = VariableKind::latent;
  std::optional<std::string> distribution;
  std::vector<std::size_t> shape;  // empty = scalar
  Support support = Support::real;
  std::optional<SourceSpan> source_span;

  std::size_t flat_size() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  bool has_draws() const { return kind != VariableKind::observed; }

  bool operator==(const VariableDecl&) const = default;
};

struct DependencyEdge {
  std::string parent;
  std::string child;
  Slot slot = Slot::other;

  bool operator==(const DependencyEdge&) const = default;
};

/// The probabilistic model as a typed dependency graph.
struct ModelDescriptor {
  std::vector<VariableDecl> variables;
  std::vector<DependencyEdge> edges;

  const VariableDecl* find(std::string_view name) const {
    auto it = std::find_if(variables.begin(), variables.end(),
                           [&](const VariableDecl& v) { return v.name == name; });
    return it == variables.end() ? nullptr : &*it;
  }

  bool operator==(const ModelDescriptor&) const = default;
};

inline const char* to_string(VariableKind k) {
  switch (k) {
    case VariableKind::latent: return "latent";
    case VariableKind::observed: return "observed";
    case VariableKind::deterministic: return "deterministic";
  }
  return "latent";
}

inline const char* to_string(Support s) {
  switch (s) {
    case Support::real: return "real";
    case Support::positive: return "positive";
    case Support::other: return "other";
  }
  return "other";
}

inline const char* to_string(Slot s) {
  switch (s) {
    case Slot::location: return "location";
    case Slot::scale: return "scale";
    case Slot::shape_param: return "shape_param";
    case Slot::other: return "other";
    case Slot::deterministic_input: return "deterministic_input";
  }
  return "other";
}

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  auto alpha = [](char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; };
  if (!alpha(s.front())) return false;
  return std::all_of(s.begin(), s.end(),
                     [&](char c) { return alpha(c) || (c >= '0' && c <= '9'); });
}

/// Bracketed row-major name of one scalar element: "mu", "theta[3]", "w[1,2]".
inline std::string flat_name(const VariableDecl& v, std::size_t flat_index) {
  if (v.shape.empty()) return v.name;
  std::vector<std::size_t> idx(v.shape.size());
  for (std::size_t d = v.shape.size(); d-- > 0;) {
    idx[d] = flat_index % v.shape[d];
    flat_index /= v.shape[d];
  }
  std::string out = v.name + "[";
  for (std::size_t d = 0; d < idx.size(); ++d) {
    if (d) out += ",";
    out += std::to_string(idx[d]);
  }
  return out + "]";
}

/// Throws Error(invalid_descriptor) naming the first offending element.
inline void validate(const ModelDescriptor& m) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::invalid_descriptor, msg); };
  std::set<std::string> names;
  for (const auto& v : m.variables) {
    if (!is_identifier(v.name)) fail("invalid variable name \"" + v.name + "\"");
    if (!names.insert(v.name).second) fail("duplicate variable \"" + v.name + "\"");
    for (auto d : v.shape)
      if (d < 1) fail("bad shape for variable \"" + v.name + "\": entries must be >= 1");
    if (v.source_span && v.source_span->line_start > v.source_span->line_end)
      fail("bad source_span for variable \"" + v.name + "\": line_start > line_end");
  }
  std::map<std::string, std::vector<std::string>> children;
  for (const auto& e : m.edges) {
    const auto* parent = m.find(e.parent);
    const auto* child = m.find(e.child);
    if (!parent) fail("unknown variable \"" + e.parent + "\" in edge " + e.parent + "->" + e.child);
    if (!child) fail("unknown variable \"" + e.child + "\" in edge " + e.parent + "->" + e.child);
    bool det_child = child->kind == VariableKind::deterministic;
    if ((e.slot == Slot::deterministic_input) != det_child)
      fail("edge " + e.parent + "->" + e.child +
           ": slot deterministic_input is required exactly when the child is deterministic");
    children[e.parent].push_back(e.child);
  }
  // Kahn's algorithm; leftovers sit on a cycle.
  std::map<std::string, int> indegree;
  for (const auto& v : m.variables) indegree[v.name] = 0;
  for (const auto& e : m.edges) ++indegree[e.child];
  std::vector<std::string> ready;
  for (const auto& [n, d] : indegree)
    if (d == 0) ready.push_back(n);
  std::size_t visited = 0;
  while (!ready.empty()) {
    auto n = ready.back();
    ready.pop_back();
    ++visited;
    for (const auto& c : children[n])
      if (--indegree[c] == 0) ready.push_back(c);
  }
  if (visited != m.variables.size()) {
    for (const auto& [n, d] : indegree)
      if (d > 0) fail("dependency cycle through variable \"" + n + "\"");
  }
}

/// One scalar series produced by flattening a latent or deterministic variable.
struct FlatSeries {
  std::string name;  // e.g. "theta[3]"
  std::string root;  // e.g. "theta"
  std::size_t index = 0;
  VariableKind kind = VariableKind::latent;
  Support support = Support::real;
};

/// Flat series of every variable that carries draws, in declaration order.
inline std::vector<FlatSeries> flatten(const ModelDescriptor& m) {
  std::vector<FlatSeries> out;
  for (const auto& v : m.variables) {
    if (!v.has_draws()) continue;
    for (std::size_t i = 0; i < v.flat_size(); ++i)
      out.push_back({flat_name(v, i), v.name, i, v.kind, v.support});
  }
  return out;
}

}  // namespace infdbg
