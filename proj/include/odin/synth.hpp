#pragma once

#include <cstdint>

#include "odin/graph_store.hpp"

namespace odin {

/// Generator for text-attributed graphs whose text and structure are both
/// class-correlated.
///
/// Each node draws `words_per_node` words; each word comes from the node's
/// class block with probability `signal`, else from the shared noise block.
/// For each edge, the second endpoint is a same-class node with probability
/// `homophily` and a uniformly random node otherwise, so homophily 0 leaves
/// a 1/n_classes chance of an intra-class edge.
struct SyntheticSpec {
  int n_nodes = 2000;
  int n_classes = 10;
  /// Consecutive fine classes are grouped into this many coarse classes.
  int n_coarse = 5;
  double homophily = 0.8;
  int vocab_size = 400;
  /// Share of the vocabulary split into per-class blocks.
  double class_vocab_fraction = 0.1;
  int words_per_node = 12;
  double signal = 0.18;
  double avg_degree = 6.0;
  /// Start from a random spanning tree so the graph is connected.
  bool ensure_connected = false;
  int label_name_words = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

TextGraph generate_synthetic(const SyntheticSpec& spec);

}  // namespace odin
