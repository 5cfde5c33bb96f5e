#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "odin/common.hpp"

namespace odin {

enum class LabelKind { Fine, Coarse };

/// Undirected text-attributed graph. Immutable once built; ids are 0..n-1.
///
/// Labels are stored per node with -1 for "unlabeled"; an empty label
/// vector means the graph carries no labels of that kind at all.
class TextGraph {
 public:
  using Edge = std::pair<NodeId, NodeId>;

  struct BuildReport {
    std::size_t dropped_self_loops = 0;
    std::size_t dropped_duplicates = 0;
  };

  TextGraph() = default;

  /// Validates and builds. Self-loops and duplicate edges (in either
  /// orientation) are dropped and counted in `report`.
  static TextGraph build(std::vector<std::string> texts, const std::vector<Edge>& edges,
                         std::vector<int> fine_labels = {}, std::vector<int> coarse_labels = {},
                         std::map<int, std::string> label_names = {},
                         BuildReport* report = nullptr);

  std::size_t num_nodes() const { return texts_.size(); }
  std::size_t num_edges() const { return num_edges_; }

  const std::string& text(NodeId v) const;
  const std::vector<std::string>& texts() const { return texts_; }

  /// Sorted adjacency of v. Throws DataError for invalid ids.
  std::span<const NodeId> neighbors(NodeId v) const;
  std::size_t degree(NodeId v) const { return neighbors(v).size(); }
  std::size_t max_degree() const;
  bool has_edge(NodeId u, NodeId v) const;
  bool valid(NodeId v) const { return v >= 0 && static_cast<std::size_t>(v) < texts_.size(); }

  /// All edges with u < v, lexicographically sorted.
  std::vector<Edge> edges() const;

  bool has_labels(LabelKind kind) const;
  const std::vector<int>& labels(LabelKind kind) const;
  const std::vector<int>& fine_labels() const { return fine_labels_; }
  const std::vector<int>& coarse_labels() const { return coarse_labels_; }
  /// Fine-label id -> human readable name (used by retrieval and reranking).
  const std::map<int, std::string>& label_names() const { return label_names_; }

  bool is_connected() const;

  friend bool operator==(const TextGraph&, const TextGraph&) = default;

 private:
  std::vector<std::string> texts_;
  std::vector<std::vector<NodeId>> adjacency_;
  std::size_t num_edges_ = 0;
  std::vector<int> fine_labels_;
  std::vector<int> coarse_labels_;
  std::map<int, std::string> label_names_;
};

struct LoadedGraph {
  TextGraph graph;
  TextGraph::BuildReport report;
};

/// Reads nodes.jsonl ({id, text, fine_label?, coarse_label?} per line),
/// edges.txt ("u v" per line, '#' comments) and an optional labels.jsonl
/// ({label, name} per line) holding fine-label names.
LoadedGraph load_graph(const std::filesystem::path& node_file,
                       const std::filesystem::path& edge_file,
                       const std::filesystem::path& label_file = {});

void save_graph(const TextGraph& graph, const std::filesystem::path& node_file,
                const std::filesystem::path& edge_file,
                const std::filesystem::path& label_file = {});

/// Sorted neighbor list of v.
std::vector<NodeId> neighbors(const TextGraph& graph, NodeId v);

struct TaskSplit {
  std::vector<NodeId> train_ids;
  std::vector<NodeId> valid_ids;
  std::vector<NodeId> test_ids;
  int shot_count = 0;
  std::vector<std::string> warnings;
};

/// k examples per class go to train (all members when a class is smaller
/// than k, with a warning); the rest is split 50/50 into valid/test.
/// Unlabeled nodes are skipped.
TaskSplit make_few_shot_split(const TextGraph& graph, int k, LabelKind kind, std::uint64_t seed);

/// 80/10/10 node split used for pretraining.
TaskSplit make_pretrain_split(const TextGraph& graph, std::uint64_t seed);

struct EdgeSplit {
  std::vector<TextGraph::Edge> train;
  std::vector<TextGraph::Edge> test;
};

/// k training edges plus up to `test_count` disjoint test edges.
EdgeSplit make_edge_split(const TextGraph& graph, int k, int test_count, std::uint64_t seed);

std::string_view to_string(LabelKind kind);
LabelKind label_kind_from_string(std::string_view name);

}  // namespace odin
