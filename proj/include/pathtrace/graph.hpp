#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "codes.hpp"
#include "error.hpp"

namespace pathtrace {

// Declaration order is the serialization and sort order (E, F, R, L).
enum class NodeKind : std::uint8_t { Embedding = 0, Feature = 1, Error = 2, Logit = 3 };

inline char kind_letter(NodeKind kind) {
  switch (kind) {
    case NodeKind::Embedding: return 'E';
    case NodeKind::Feature: return 'F';
    case NodeKind::Error: return 'R';
    case NodeKind::Logit: return 'L';
  }
  return '?';
}

inline std::optional<NodeKind> kind_from_letter(char c) {
  switch (c) {
    case 'E': return NodeKind::Embedding;
    case 'F': return NodeKind::Feature;
    case 'R': return NodeKind::Error;
    case 'L': return NodeKind::Logit;
    default: return std::nullopt;
  }
}

// Identity of a graph node. For Embedding and Logit nodes feature_index holds
// the token id. Layer numbering: embeddings are layer 0, the features and
// error term of transcoder j sit on layer j + 1, logits on the last layer.
struct FeatureNode {
  std::uint32_t layer = 0;
  NodeKind kind = NodeKind::Feature;
  std::uint32_t feature_index = 0;
  std::optional<std::uint32_t> position;

  FeatureNode without_position() const { return {layer, kind, feature_index, std::nullopt}; }

  friend bool operator==(const FeatureNode&, const FeatureNode&) = default;
  friend auto operator<=>(const FeatureNode&, const FeatureNode&) = default;
};

inline std::string describe(const FeatureNode& n) {
  std::string s = std::string(1, kind_letter(n.kind)) + "(layer=" + std::to_string(n.layer) +
                  ", index=" + std::to_string(n.feature_index);
  if (n.position) s += ", pos=" + std::to_string(*n.position);
  return s + ")";
}

using EdgeKey = std::pair<FeatureNode, FeatureNode>;

struct AttributionEdge {
  FeatureNode src;
  FeatureNode dst;
  double weight = 0.0;

  EdgeKey key() const { return {src, dst}; }
};

struct GraphMeta {
  LanguageCode language;
  CountryCode country;
  std::string id;  // prompt id for per-prompt graphs, set id for set-level graphs
  bool collapsed = false;
  bool normalized = false;

  friend bool operator==(const GraphMeta&, const GraphMeta&) = default;
};

// Tolerance on sum(|w|) = 1 for graphs flagged normalized.
inline constexpr double kNormalizationTolerance = 1e-12;
// Looser tolerance accepted from externally produced graph files.
inline constexpr double kExternalNormalizationTolerance = 1e-9;

// True when an edge from `src` to `dst` points forward in computation order.
inline bool is_forward_edge(const FeatureNode& src, const FeatureNode& dst) {
  if (src.kind == NodeKind::Logit || dst.kind == NodeKind::Embedding) return false;
  if (src.position && dst.position && *src.position > *dst.position) return false;
  if (src.layer < dst.layer) return true;
  return src.layer == dst.layer &&
         (src.kind == NodeKind::Feature || src.kind == NodeKind::Error) &&
         dst.kind == NodeKind::Logit;
}

// Immutable weighted attribution graph. Nodes are kept sorted and unique,
// edges sorted by (src, dst) with no parallel edges. Construct through
// GraphBuilder or AttributionGraph::from_parts, both of which enforce the
// structural invariants.
class AttributionGraph {
 public:
  AttributionGraph() = default;

  // Sorts and validates; throws Error(code) describing the first violation.
  static AttributionGraph from_parts(std::vector<FeatureNode> nodes,
                                     std::vector<AttributionEdge> edges, GraphMeta meta,
                                     ErrorCode code = ErrorCode::InvalidGraph,
                                     double tolerance = kNormalizationTolerance) {
    std::sort(nodes.begin(), nodes.end());
    std::sort(edges.begin(), edges.end(),
              [](const AttributionEdge& a, const AttributionEdge& b) { return a.key() < b.key(); });
    AttributionGraph g;
    g.nodes_ = std::move(nodes);
    g.edges_ = std::move(edges);
    g.meta_ = std::move(meta);
    if (auto problem = g.find_violation(tolerance)) throw Error(code, *problem);
    return g;
  }

  const std::vector<FeatureNode>& nodes() const noexcept { return nodes_; }
  const std::vector<AttributionEdge>& edges() const noexcept { return edges_; }
  const GraphMeta& meta() const noexcept { return meta_; }

  bool contains(const FeatureNode& n) const {
    return std::binary_search(nodes_.begin(), nodes_.end(), n);
  }

  std::optional<double> weight(const FeatureNode& src, const FeatureNode& dst) const {
    EdgeKey key{src, dst};
    auto it = std::lower_bound(
        edges_.begin(), edges_.end(), key,
        [](const AttributionEdge& e, const EdgeKey& k) { return e.key() < k; });
    if (it == edges_.end() || it->key() != key) return std::nullopt;
    return it->weight;
  }

  // Sum of |w| accumulated in (src, dst) order.
  double abs_weight_sum() const {
    double total = 0.0;
    for (const auto& e : edges_) total += std::fabs(e.weight);
    return total;
  }

  AttributionGraph with_meta(GraphMeta meta) const {
    return from_parts(nodes_, edges_, std::move(meta));
  }

  // Returns a description of the first invariant violation, if any.
  std::optional<std::string> find_violation(double tolerance = kNormalizationTolerance) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& n = nodes_[i];
      if (i > 0 && nodes_[i - 1] == n) return "duplicate node " + describe(n);
      if (n.kind == NodeKind::Embedding && n.layer != 0)
        return "embedding node not on layer 0: " + describe(n);
      if (meta_.collapsed && n.position)
        return "collapsed graph has positioned node " + describe(n);
    }
    for (std::size_t i = 0; i < edges_.size(); ++i) {
      const auto& e = edges_[i];
      if (i > 0 && edges_[i - 1].key() == e.key())
        return "parallel edge " + describe(e.src) + " -> " + describe(e.dst);
      if (!std::isfinite(e.weight))
        return "non-finite weight on edge " + describe(e.src) + " -> " + describe(e.dst);
      if (!contains(e.src)) return "edge source not in node set: " + describe(e.src);
      if (!contains(e.dst)) return "edge target not in node set: " + describe(e.dst);
      if (!is_forward_edge(e.src, e.dst))
        return "edge does not point forward: " + describe(e.src) + " -> " + describe(e.dst);
    }
    if (meta_.normalized && !(std::fabs(abs_weight_sum() - 1.0) <= tolerance))
      return "graph flagged normalized but sum(|w|) = " + std::to_string(abs_weight_sum());
    return std::nullopt;
  }

  // Structural equality with bit-identical weights.
  friend bool operator==(const AttributionGraph& a, const AttributionGraph& b) {
    if (a.meta_ != b.meta_ || a.nodes_ != b.nodes_ || a.edges_.size() != b.edges_.size())
      return false;
    for (std::size_t i = 0; i < a.edges_.size(); ++i) {
      const auto& x = a.edges_[i];
      const auto& y = b.edges_[i];
      if (x.key() != y.key() ||
          std::bit_cast<std::uint64_t>(x.weight) != std::bit_cast<std::uint64_t>(y.weight))
        return false;
    }
    return true;
  }

 private:
  std::vector<FeatureNode> nodes_;
  std::vector<AttributionEdge> edges_;
  GraphMeta meta_;
};

// Accumulates nodes and edges; parallel edges are summed on insertion.
class GraphBuilder {
 public:
  void add_node(const FeatureNode& n) { nodes_.insert(n); }

  void add_edge(const FeatureNode& src, const FeatureNode& dst, double weight) {
    add_node(src);
    add_node(dst);
    auto [it, inserted] = edges_.try_emplace(EdgeKey{src, dst}, weight);
    if (!inserted) it->second += weight;
  }

  std::size_t edge_count() const noexcept { return edges_.size(); }

  AttributionGraph build(GraphMeta meta) const {
    std::vector<FeatureNode> nodes(nodes_.begin(), nodes_.end());
    std::vector<AttributionEdge> edges;
    edges.reserve(edges_.size());
    for (const auto& [k, w] : edges_) edges.push_back({k.first, k.second, w});
    return AttributionGraph::from_parts(std::move(nodes), std::move(edges), std::move(meta));
  }

 private:
  std::set<FeatureNode> nodes_;
  std::map<EdgeKey, double> edges_;
};

}  // namespace pathtrace
