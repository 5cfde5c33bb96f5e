#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "odin/common.hpp"
#include "odin/graph_store.hpp"

namespace odin {

/// Nested frontier chain B_A ⊆ B_{A-1} ⊆ ... ⊆ B_0 produced by minibatch
/// neighbor sampling, plus the neighbor lists chosen during expansion.
struct SampledSubgraph {
  /// frontiers[i] is B_{A-i}; each frontier is sorted and unique.
  std::vector<std::vector<NodeId>> frontiers;
  /// Sampled neighbor lists (sorted). Nodes that were never expanded are absent.
  std::map<NodeId, std::vector<NodeId>> sampled_adj;
  int hop_count = 0;

  /// B_a for a in [0, hop_count].
  const std::vector<NodeId>& frontier(int a) const;
  const std::vector<NodeId>& batch() const { return frontiers.front(); }
  const std::vector<NodeId>& all_nodes() const { return frontiers.back(); }
  std::span<const NodeId> sampled_neighbors(NodeId v) const;
};

/// GraphSAGE-style expansion: for a = A..1, B_{a-1} = sample(B_a) ∪ B_a.
///
/// Each node is expanded once, the first time it appears in a frontier being
/// expanded; its neighbor draw uses a sub-seed of (seed, node, hop) and is
/// uniform without replacement (all neighbors when degree <= fanout).
SampledSubgraph sample_frontiers(const TextGraph& graph, std::span<const NodeId> batch, int hops,
                                 int fanout, std::uint64_t seed);

/// Same, with an explicit fanout per expansion; fanouts[i] applies to the
/// expansion of B_{A-i}.
SampledSubgraph sample_frontiers(const TextGraph& graph, std::span<const NodeId> batch, int hops,
                                 std::span<const int> fanouts, std::uint64_t seed);

/// Copy of `sub` with the given undirected edges removed from every sampled
/// neighbor list. Frontiers are unchanged.
SampledSubgraph hide_edges(SampledSubgraph sub, std::span<const TextGraph::Edge> edges);

/// Per-hop fanouts for `hops` expansions: empty means 5 everywhere and a
/// single value is broadcast; any other length must equal `hops`.
std::vector<int> resolve_fanouts(std::vector<int> fanouts, int hops);

/// Subgraph holding only `nodes` with no neighbors; every frontier equals
/// the node set, so it can feed a schedule with any hop count.
SampledSubgraph isolated_subgraph(std::span<const NodeId> nodes, int hops = 0);

}  // namespace odin
