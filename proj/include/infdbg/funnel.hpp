#pragma once

#include <deque>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "infdbg/model.hpp"

namespace infdbg {

/// A latent parent that sets the scale of a latent child, directly or through
/// a chain of deterministic nodes. `path` runs parent -> ... -> child and its
/// final edge has slot `scale`.
struct FunnelCandidate {
  std::string parent;
  std::string child;
  std::vector<DependencyEdge> path;

  /// Node feeding the child's scale slot (the parent itself when direct).
  const std::string& scale_source() const { return path.back().parent; }

  std::string path_text() const {
    std::string s = path.front().parent;
    for (const auto& e : path) s += " -> " + e.child;
    return s;
  }

  bool operator==(const FunnelCandidate&) const = default;
};

/// Each (latent parent, latent child) pair is reported once, with its
/// shortest path. Ordered by child, then parent, in declaration order.
inline std::vector<FunnelCandidate> funnel_static_detect(const ModelDescriptor& m) {
  std::vector<FunnelCandidate> out;
  for (const auto& child : m.variables) {
    if (child.kind != VariableKind::latent) continue;
    std::vector<std::pair<std::string, std::vector<DependencyEdge>>> found;
    std::set<std::string> seen_parent;
    // BFS backwards from the scale slot; only deterministic nodes are crossed.
    std::deque<std::vector<DependencyEdge>> frontier;
    for (const auto& e : m.edges)
      if (e.child == child.name && e.slot == Slot::scale) frontier.push_back({e});
    std::set<std::string> expanded;
    while (!frontier.empty()) {
      auto path = std::move(frontier.front());
      frontier.pop_front();
      const auto* node = m.find(path.front().parent);
      if (!node) continue;
      if (node->kind == VariableKind::latent) {
        if (seen_parent.insert(node->name).second) found.emplace_back(node->name, path);
      } else if (node->kind == VariableKind::deterministic && expanded.insert(node->name).second) {
        for (const auto& e : m.edges) {
          if (e.child != node->name) continue;
          auto longer = path;
          longer.insert(longer.begin(), e);
          frontier.push_back(std::move(longer));
        }
      }
    }
    for (const auto& v : m.variables)
      for (auto& [name, path] : found)
        if (name == v.name) out.push_back({name, child.name, path});
  }
  return out;
}

struct Reparameterization {
  std::string code;
  std::optional<SourceSpan> source_span;  // of the child declaration
  bool templated = false;                 // false: generic advice only
};

inline constexpr const char* kReparameterizeAdvice = "Reparameterize the model.";

/// Non-centered rewrite of the candidate's child: an auxiliary standard normal
/// with the child's shape, and the child redefined as location + scale * aux.
inline Reparameterization render_reparameterization(const FunnelCandidate& c, const ModelDescriptor& m) {
  Reparameterization r;
  const auto* child = m.find(c.child);
  if (child) r.source_span = child->source_span;
  const DependencyEdge* location = nullptr;
  for (const auto& e : m.edges)
    if (e.child == c.child && e.slot == Slot::location) {
      location = &e;
      break;
    }
  if (!child || !location) {
    r.code = kReparameterizeAdvice;
    return r;
  }
  std::string aux = "Z";
  if (m.find(aux)) aux = "Z_" + c.child;

  std::ostringstream os;
  os << "# non-centered form of " << c.child;
  if (child->source_span)
    os << " (replaces " << child->source_span->file << ":" << child->source_span->line_start
       << (child->source_span->line_end != child->source_span->line_start
               ? "-" + std::to_string(child->source_span->line_end)
               : std::string())
       << ")";
  os << "\n" << aux << " ~ Normal(0, 1)";
  if (!child->shape.empty()) {
    os << ", shape=(";
    for (std::size_t i = 0; i < child->shape.size(); ++i) os << (i ? ", " : "") << child->shape[i];
    os << (child->shape.size() == 1 ? ",)" : ")");
  }
  os << "\n"
     << c.child << " = " << location->parent << " + " << c.scale_source() << " * " << aux
     << "  # deterministic\n";
  r.code = os.str();
  r.templated = true;
  return r;
}

}  // namespace infdbg
