#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "odin/graph_store.hpp"

namespace testutil {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("odin_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Erdős–Rényi style graph from std::mt19937, independent of the library RNG.
inline odin::TextGraph random_graph(int n, double p, unsigned seed, int words = 4, int vocab = 30) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> w(0, vocab - 1);
  std::vector<std::string> texts;
  for (int i = 0; i < n; ++i) {
    std::string t;
    for (int k = 0; k < words; ++k) t += (k ? " w" : "w") + std::to_string(w(gen));
    texts.push_back(t);
  }
  std::vector<odin::TextGraph::Edge> edges;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (u(gen) < p) edges.emplace_back(a, b);
  return odin::TextGraph::build(texts, edges);
}

/// Nodes within `depth` hops of the batch, by plain breadth-first search over
/// an adjacency set built from the edge list.
inline std::set<odin::NodeId> bfs_closure(const odin::TextGraph& g, const std::vector<odin::NodeId>& batch,
                                          int depth) {
  std::vector<std::set<odin::NodeId>> adj(g.num_nodes());
  for (auto [a, b] : g.edges()) {
    adj[static_cast<std::size_t>(a)].insert(b);
    adj[static_cast<std::size_t>(b)].insert(a);
  }
  std::set<odin::NodeId> seen(batch.begin(), batch.end());
  std::vector<odin::NodeId> layer(batch.begin(), batch.end());
  for (int d = 0; d < depth; ++d) {
    std::vector<odin::NodeId> next;
    for (auto v : layer)
      for (auto x : adj[static_cast<std::size_t>(v)])
        if (seen.insert(x).second) next.push_back(x);
    layer = next;
  }
  return seen;
}

}  // namespace testutil
