#include "odin/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <span>

namespace odin {

namespace {

std::string word(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "w%04d", index);
  return buf;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n_nodes < 2) throw ConfigError("synthetic graph needs at least 2 nodes");
  if (n_classes < 1 || n_classes > n_nodes) throw ConfigError("n_classes must lie in [1, n_nodes]");
  if (n_coarse < 1 || n_coarse > n_classes) throw ConfigError("n_coarse must lie in [1, n_classes]");
  if (homophily < 0.0 || homophily > 1.0) throw ConfigError("homophily must lie in [0, 1]");
  if (signal < 0.0 || signal > 1.0) throw ConfigError("signal must lie in [0, 1]");
  if (class_vocab_fraction <= 0.0 || class_vocab_fraction >= 1.0)
    throw ConfigError("class_vocab_fraction must lie in (0, 1)");
  if (vocab_size < 2 * n_classes) throw ConfigError("vocab_size too small for the class count");
  if (words_per_node < 1) throw ConfigError("words_per_node must be >= 1");
  if (avg_degree < 0.0 || avg_degree > n_nodes - 1) throw ConfigError("avg_degree out of range");
  if (label_name_words < 1) throw ConfigError("label_name_words must be >= 1");
}

TextGraph generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const int n = spec.n_nodes;
  const int per_class = std::max(
      1, static_cast<int>(spec.vocab_size * spec.class_vocab_fraction) / spec.n_classes);
  const int noise_start = per_class * spec.n_classes;
  const int noise_words = spec.vocab_size - noise_start;
  if (noise_words < 1) throw ConfigError("vocabulary leaves no shared noise words");
  if (spec.label_name_words > per_class) throw ConfigError("label_name_words exceeds class block size");

  // Balanced class assignment in seeded order.
  std::vector<int> fine(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) fine[static_cast<std::size_t>(i)] = i % spec.n_classes;
  Rng label_rng(mix_seed({spec.seed, 0x1ABEULL}));
  for (std::size_t i = fine.size(); i > 1; --i) std::swap(fine[i - 1], fine[label_rng.uniform(i)]);
  const int group = (spec.n_classes + spec.n_coarse - 1) / spec.n_coarse;
  std::vector<int> coarse(fine.size());
  for (std::size_t i = 0; i < fine.size(); ++i) coarse[i] = fine[i] / group;

  std::vector<std::string> texts;
  texts.reserve(static_cast<std::size_t>(n));
  Rng text_rng(mix_seed({spec.seed, 0x7E47ULL}));
  for (int i = 0; i < n; ++i) {
    std::string t;
    for (int w = 0; w < spec.words_per_node; ++w) {
      int idx;
      if (text_rng.uniform01() < spec.signal) {
        idx = fine[static_cast<std::size_t>(i)] * per_class +
              static_cast<int>(text_rng.uniform(static_cast<std::uint64_t>(per_class)));
      } else {
        idx = noise_start + static_cast<int>(text_rng.uniform(static_cast<std::uint64_t>(noise_words)));
      }
      if (w) t.push_back(' ');
      t += word(idx);
    }
    texts.push_back(std::move(t));
  }

  std::vector<std::vector<NodeId>> members(static_cast<std::size_t>(spec.n_classes));
  for (int i = 0; i < n; ++i) members[static_cast<std::size_t>(fine[static_cast<std::size_t>(i)])].push_back(i);

  Rng edge_rng(mix_seed({spec.seed, 0xED6E5ULL}));
  std::set<TextGraph::Edge> edges;
  auto pick_partner = [&](std::span<const NodeId> same_class) -> NodeId {
    if (edge_rng.uniform01() < spec.homophily) return same_class[edge_rng.uniform(same_class.size())];
    return static_cast<NodeId>(edge_rng.uniform(static_cast<std::uint64_t>(n)));
  };

  if (spec.ensure_connected) {
    // Node order permuted so the tree is not a function of id order.
    std::vector<NodeId> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[edge_rng.uniform(i)]);
    std::vector<std::vector<NodeId>> placed(static_cast<std::size_t>(spec.n_classes));
    placed[static_cast<std::size_t>(fine[static_cast<std::size_t>(order[0])])].push_back(order[0]);
    for (std::size_t k = 1; k < order.size(); ++k) {
      const NodeId u = order[k];
      const auto cls = static_cast<std::size_t>(fine[static_cast<std::size_t>(u)]);
      NodeId v;
      if (edge_rng.uniform01() < spec.homophily && !placed[cls].empty()) {
        v = placed[cls][edge_rng.uniform(placed[cls].size())];
      } else {
        v = order[edge_rng.uniform(k)];
      }
      edges.insert(std::minmax(u, v));
      placed[cls].push_back(u);
    }
  }

  const auto target = static_cast<std::size_t>(std::llround(spec.avg_degree * n / 2.0));
  const std::size_t max_edges = static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2;
  std::size_t attempts = 0;
  while (edges.size() < std::min(target, max_edges) && attempts < 100 * target + 1000) {
    ++attempts;
    const auto u = static_cast<NodeId>(edge_rng.uniform(static_cast<std::uint64_t>(n)));
    const auto& same = members[static_cast<std::size_t>(fine[static_cast<std::size_t>(u)])];
    const NodeId v = pick_partner(same);
    if (u == v) continue;
    edges.insert(std::minmax(u, v));
  }

  std::map<int, std::string> names;
  for (int c = 0; c < spec.n_classes; ++c) {
    std::string name = "topic";
    for (int w = 0; w < spec.label_name_words; ++w) name += " " + word(c * per_class + w);
    names[c] = std::move(name);
  }
  return TextGraph::build(std::move(texts), {edges.begin(), edges.end()}, std::move(fine),
                          std::move(coarse), std::move(names));
}

}  // namespace odin
