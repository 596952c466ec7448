#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "graph.hpp"

namespace pathtrace {

// Divides every weight by sum(|w|) so that the absolute weights sum to one.
// Signs and the node set are preserved. A graph already flagged normalized
// is returned unchanged, which keeps the operation idempotent bit-for-bit.
inline AttributionGraph normalize(const AttributionGraph& g) {
  const double total = g.abs_weight_sum();
  if (!(total > 0.0)) {
    throw Error(ErrorCode::AllZeroWeights,
                "graph '" + g.meta().id + "' has no nonzero edge weight to normalize");
  }
  GraphMeta meta = g.meta();
  if (meta.normalized && std::fabs(total - 1.0) <= kNormalizationTolerance) return g;
  meta.normalized = true;
  std::vector<AttributionEdge> edges = g.edges();
  if (total != 1.0) {
    for (auto& e : edges) e.weight /= total;
  }
  return AttributionGraph::from_parts(g.nodes(), std::move(edges), std::move(meta));
}

// Drops token positions from node identity. Edges whose endpoints coincide
// after collapse are merged by signed summation, visiting input edges in
// (src, dst) order. The result is collapsed but not normalized.
inline AttributionGraph collapse_positions(const AttributionGraph& g) {
  GraphBuilder builder;
  for (const auto& n : g.nodes()) builder.add_node(n.without_position());
  for (const auto& e : g.edges())
    builder.add_edge(e.src.without_position(), e.dst.without_position(), e.weight);
  GraphMeta meta = g.meta();
  meta.collapsed = true;
  meta.normalized = false;
  return builder.build(std::move(meta));
}

// Combines per-prompt graphs of one question set into a set-level graph:
// each edge's weight is the mean of its weight across inputs (0 where
// absent), then the result is renormalized.
inline AttributionGraph aggregate(std::span<const AttributionGraph> graphs,
                                  const std::string& set_id) {
  if (graphs.empty())
    throw Error(ErrorCode::EmptyInput, "cannot aggregate an empty list (set '" + set_id + "')");
  const auto& first = graphs.front().meta();
  for (const auto& g : graphs) {
    const auto& m = g.meta();
    if (m.language != first.language || m.country != first.country) {
      throw Error(ErrorCode::MixedMeta, "set '" + set_id + "' mixes (" + first.language.str() +
                                            ", " + first.country.str() + ") with (" +
                                            m.language.str() + ", " + m.country.str() + ")");
    }
    if (!m.collapsed || !m.normalized) {
      throw Error(ErrorCode::NotComparable,
                  "graph '" + m.id + "' must be collapsed and normalized before aggregation");
    }
  }

  std::set<FeatureNode> nodes;
  std::map<EdgeKey, double> sums;
  for (const auto& g : graphs) {
    nodes.insert(g.nodes().begin(), g.nodes().end());
    for (const auto& e : g.edges()) sums[e.key()] += e.weight;
  }
  const double n = static_cast<double>(graphs.size());
  std::vector<AttributionEdge> edges;
  edges.reserve(sums.size());
  for (const auto& [key, sum] : sums) edges.push_back({key.first, key.second, sum / n});

  GraphMeta meta{first.language, first.country, set_id, true, false};
  auto mean = AttributionGraph::from_parts({nodes.begin(), nodes.end()}, std::move(edges),
                                           std::move(meta));
  return normalize(mean);
}

struct ThresholdPolicy {
  double threshold = 0.0;  // drop edges with |w| < threshold
};

struct TopKPolicy {
  std::size_t k = 1;  // keep the k largest |w|
};

using PrunePolicy = std::variant<ThresholdPolicy, TopKPolicy>;

// Removes low-magnitude edges, drops nodes left without any edge by the
// removal, and renormalizes. Top-k ties are broken by (src, dst) order.
inline AttributionGraph prune(const AttributionGraph& g, const PrunePolicy& policy) {
  if (!g.meta().normalized)
    throw Error(ErrorCode::NotComparable, "prune requires a normalized graph ('" + g.meta().id + "')");

  const auto& in = g.edges();
  std::vector<bool> keep(in.size(), false);
  if (const auto* t = std::get_if<ThresholdPolicy>(&policy)) {
    if (!(t->threshold >= 0.0)) throw Error(ErrorCode::ConfigError, "prune threshold must be >= 0");
    for (std::size_t i = 0; i < in.size(); ++i) keep[i] = !(std::fabs(in[i].weight) < t->threshold);
  } else {
    const auto k = std::get<TopKPolicy>(policy).k;
    if (k < 1) throw Error(ErrorCode::ConfigError, "prune top_k must be >= 1");
    std::vector<std::size_t> order(in.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    // Edges are already in (src, dst) order, so a stable sort on |w| breaks
    // ties lexicographically.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::fabs(in[a].weight) > std::fabs(in[b].weight);
    });
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) keep[order[i]] = true;
  }

  std::vector<AttributionEdge> kept;
  std::set<FeatureNode> touched_by_drop;
  std::set<FeatureNode> still_connected;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (keep[i]) {
      kept.push_back(in[i]);
      still_connected.insert(in[i].src);
      still_connected.insert(in[i].dst);
    } else {
      touched_by_drop.insert(in[i].src);
      touched_by_drop.insert(in[i].dst);
    }
  }
  if (kept.empty())
    throw Error(ErrorCode::EmptyAfterPrune, "no edges of '" + g.meta().id + "' survive pruning");
  if (kept.size() == in.size()) return normalize(g);

  std::vector<FeatureNode> nodes;
  for (const auto& n : g.nodes()) {
    if (touched_by_drop.contains(n) && !still_connected.contains(n)) continue;
    nodes.push_back(n);
  }
  GraphMeta meta = g.meta();
  meta.normalized = false;
  return normalize(AttributionGraph::from_parts(std::move(nodes), std::move(kept), std::move(meta)));
}

}  // namespace pathtrace
