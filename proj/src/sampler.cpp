#include "odin/sampler.hpp"

#include <algorithm>
#include <set>
#include <string>

namespace odin {

const std::vector<NodeId>& SampledSubgraph::frontier(int a) const {
  if (a < 0 || a > hop_count) throw Error("frontier index " + std::to_string(a) + " out of range");
  return frontiers[static_cast<std::size_t>(hop_count - a)];
}

std::span<const NodeId> SampledSubgraph::sampled_neighbors(NodeId v) const {
  auto it = sampled_adj.find(v);
  if (it == sampled_adj.end()) return {};
  return it->second;
}

namespace {

std::vector<NodeId> draw_neighbors(std::span<const NodeId> adj, int fanout, std::uint64_t seed) {
  std::vector<NodeId> pool(adj.begin(), adj.end());
  if (static_cast<int>(pool.size()) > fanout) {
    // Partial Fisher-Yates: first `fanout` slots become the sample.
    Rng rng(seed);
    for (int i = 0; i < fanout; ++i) {
      auto j = i + rng.uniform(pool.size() - static_cast<std::size_t>(i));
      std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    pool.resize(static_cast<std::size_t>(fanout));
    std::sort(pool.begin(), pool.end());
  }
  return pool;
}

}  // namespace

SampledSubgraph sample_frontiers(const TextGraph& graph, std::span<const NodeId> batch, int hops,
                                 std::span<const int> fanouts, std::uint64_t seed) {
  if (hops < 0) throw ConfigError("hop count must be >= 0");
  if (batch.empty()) throw ConfigError("batch must be non-empty");
  if (static_cast<int>(fanouts.size()) != hops)
    throw ConfigError("expected " + std::to_string(hops) + " fanouts, got " +
                      std::to_string(fanouts.size()));
  for (int f : fanouts) {
    if (f < 1) throw ConfigError("fanout must be >= 1");
  }
  for (NodeId v : batch) {
    if (!graph.valid(v)) throw DataError("batch references invalid node " + std::to_string(v));
  }

  SampledSubgraph sub;
  sub.hop_count = hops;
  std::set<NodeId> current(batch.begin(), batch.end());
  sub.frontiers.emplace_back(current.begin(), current.end());
  for (int a = hops; a >= 1; --a) {
    const int fanout = fanouts[static_cast<std::size_t>(hops - a)];
    std::set<NodeId> next = current;
    for (NodeId v : current) {
      auto it = sub.sampled_adj.find(v);
      if (it == sub.sampled_adj.end()) {
        auto drawn = draw_neighbors(graph.neighbors(v), fanout,
                                    mix_seed({seed, static_cast<std::uint64_t>(v),
                                              static_cast<std::uint64_t>(a)}));
        it = sub.sampled_adj.emplace(v, std::move(drawn)).first;
      }
      next.insert(it->second.begin(), it->second.end());
    }
    current = std::move(next);
    sub.frontiers.emplace_back(current.begin(), current.end());
  }
  return sub;
}

SampledSubgraph sample_frontiers(const TextGraph& graph, std::span<const NodeId> batch, int hops,
                                 int fanout, std::uint64_t seed) {
  std::vector<int> fanouts(static_cast<std::size_t>(std::max(hops, 0)), fanout);
  return sample_frontiers(graph, batch, hops, fanouts, seed);
}

SampledSubgraph hide_edges(SampledSubgraph sub, std::span<const TextGraph::Edge> edges) {
  auto drop = [&](NodeId u, NodeId v) {
    auto it = sub.sampled_adj.find(u);
    if (it == sub.sampled_adj.end()) return;
    auto& list = it->second;
    list.erase(std::remove(list.begin(), list.end(), v), list.end());
  };
  for (const auto& [u, v] : edges) {
    drop(u, v);
    drop(v, u);
  }
  return sub;
}

std::vector<int> resolve_fanouts(std::vector<int> fanouts, int hops) {
  if (hops < 0) throw ConfigError("hop count must be >= 0");
  const auto n = static_cast<std::size_t>(hops);
  if (fanouts.empty()) return std::vector<int>(n, 5);
  if (fanouts.size() == 1) return std::vector<int>(n, fanouts[0]);
  if (fanouts.size() != n)
    throw ConfigError("fanout list has " + std::to_string(fanouts.size()) + " entries; schedule has " +
                      std::to_string(hops) + " hops");
  return fanouts;
}

SampledSubgraph isolated_subgraph(std::span<const NodeId> nodes, int hops) {
  if (hops < 0) throw ConfigError("hop count must be >= 0");
  SampledSubgraph sub;
  std::set<NodeId> unique(nodes.begin(), nodes.end());
  sub.frontiers.assign(static_cast<std::size_t>(hops) + 1, std::vector<NodeId>(unique.begin(), unique.end()));
  sub.hop_count = hops;
  return sub;
}

}  // namespace odin
