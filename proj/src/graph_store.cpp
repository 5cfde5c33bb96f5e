#include "odin/graph_store.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

#include "json.hpp"

namespace odin {

namespace {

using json = nlohmann::json;

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

void check_labels(const std::vector<int>& labels, std::size_t n, const char* what) {
  if (!labels.empty() && labels.size() != n) {
    throw DataError(std::string(what) + " has " + std::to_string(labels.size()) +
                    " entries for " + std::to_string(n) + " nodes");
  }
}

}  // namespace

TextGraph TextGraph::build(std::vector<std::string> texts, const std::vector<Edge>& edges,
                           std::vector<int> fine_labels, std::vector<int> coarse_labels,
                           std::map<int, std::string> label_names, BuildReport* report) {
  TextGraph g;
  const auto n = texts.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (blank(texts[i])) throw DataError("node " + std::to_string(i) + " has empty text");
  }
  check_labels(fine_labels, n, "fine_labels");
  check_labels(coarse_labels, n, "coarse_labels");

  BuildReport local;
  std::set<Edge> unique;
  for (auto [u, v] : edges) {
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
      throw DataError("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                      ") references a missing node");
    }
    if (u == v) {
      ++local.dropped_self_loops;
      continue;
    }
    if (!unique.insert(std::minmax(u, v)).second) ++local.dropped_duplicates;
  }

  g.texts_ = std::move(texts);
  g.adjacency_.assign(n, {});
  for (auto [u, v] : unique) {
    g.adjacency_[u].push_back(v);
    g.adjacency_[v].push_back(u);
  }
  for (auto& adj : g.adjacency_) std::sort(adj.begin(), adj.end());
  g.num_edges_ = unique.size();
  g.fine_labels_ = std::move(fine_labels);
  g.coarse_labels_ = std::move(coarse_labels);
  g.label_names_ = std::move(label_names);
  if (report) *report = local;
  return g;
}

const std::string& TextGraph::text(NodeId v) const {
  if (!valid(v)) throw DataError("invalid node id " + std::to_string(v));
  return texts_[v];
}

std::span<const NodeId> TextGraph::neighbors(NodeId v) const {
  if (!valid(v)) throw DataError("invalid node id " + std::to_string(v));
  return adjacency_[v];
}

std::size_t TextGraph::max_degree() const {
  std::size_t best = 0;
  for (const auto& adj : adjacency_) best = std::max(best, adj.size());
  return best;
}

bool TextGraph::has_edge(NodeId u, NodeId v) const {
  auto adj = neighbors(u);
  return std::binary_search(adj.begin(), adj.end(), v);
}

std::vector<TextGraph::Edge> TextGraph::edges() const {
  std::vector<Edge> out;
  out.reserve(num_edges_);
  for (std::size_t u = 0; u < adjacency_.size(); ++u) {
    for (NodeId v : adjacency_[u]) {
      if (static_cast<NodeId>(u) < v) out.emplace_back(static_cast<NodeId>(u), v);
    }
  }
  return out;
}

bool TextGraph::has_labels(LabelKind kind) const { return !labels(kind).empty(); }

const std::vector<int>& TextGraph::labels(LabelKind kind) const {
  return kind == LabelKind::Fine ? fine_labels_ : coarse_labels_;
}

bool TextGraph::is_connected() const {
  if (texts_.empty()) return true;
  std::vector<char> seen(texts_.size(), 0);
  std::queue<NodeId> q;
  q.push(0);
  seen[0] = 1;
  std::size_t count = 1;
  while (!q.empty()) {
    NodeId u = q.front();
    q.pop();
    for (NodeId v : adjacency_[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++count;
        q.push(v);
      }
    }
  }
  return count == texts_.size();
}

LoadedGraph load_graph(const std::filesystem::path& node_file,
                       const std::filesystem::path& edge_file,
                       const std::filesystem::path& label_file) {
  std::ifstream nodes_in(node_file);
  if (!nodes_in) throw DataError("cannot open node file " + node_file.string());

  struct Record {
    std::string text;
    int fine = -1;
    int coarse = -1;
  };
  std::map<NodeId, Record> records;
  bool any_fine = false;
  bool any_coarse = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(nodes_in, line)) {
    ++line_no;
    if (blank(line)) continue;
    const std::string where = node_file.string() + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": invalid JSON record: " + e.what());
    }
    if (!rec.contains("id") || !rec["id"].is_number_integer())
      throw DataError(where + ": missing integer field 'id'");
    if (!rec.contains("text") || !rec["text"].is_string())
      throw DataError(where + ": missing string field 'text'");
    const auto id = rec["id"].get<NodeId>();
    Record r;
    r.text = rec["text"].get<std::string>();
    if (blank(r.text)) throw DataError(where + ": node " + std::to_string(id) + " has empty text");
    if (rec.contains("fine_label") && !rec["fine_label"].is_null()) {
      r.fine = rec["fine_label"].get<int>();
      any_fine = true;
    }
    if (rec.contains("coarse_label") && !rec["coarse_label"].is_null()) {
      r.coarse = rec["coarse_label"].get<int>();
      any_coarse = true;
    }
    if (!records.emplace(id, std::move(r)).second)
      throw DataError(where + ": duplicate node id " + std::to_string(id));
  }

  const auto n = records.size();
  std::vector<std::string> texts;
  std::vector<int> fine, coarse;
  texts.reserve(n);
  NodeId expected = 0;
  for (auto& [id, r] : records) {
    if (id != expected)
      throw DataError(node_file.string() + ": node ids must be contiguous from 0; missing id " +
                      std::to_string(expected));
    ++expected;
    texts.push_back(std::move(r.text));
    fine.push_back(r.fine);
    coarse.push_back(r.coarse);
  }
  if (!any_fine) fine.clear();
  if (!any_coarse) coarse.clear();

  std::ifstream edges_in(edge_file);
  if (!edges_in) throw DataError("cannot open edge file " + edge_file.string());
  std::vector<TextGraph::Edge> edges;
  line_no = 0;
  while (std::getline(edges_in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (blank(line)) continue;
    std::istringstream ss(line);
    long long u = 0, v = 0;
    std::string extra;
    if (!(ss >> u >> v) || (ss >> extra)) {
      throw DataError(edge_file.string() + ":" + std::to_string(line_no) +
                      ": expected two node ids, got '" + line + "'");
    }
    if (u < 0 || v < 0 || static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
      throw DataError(edge_file.string() + ":" + std::to_string(line_no) +
                      ": edge references missing node (" + std::to_string(u) + ", " +
                      std::to_string(v) + ")");
    }
    edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
  }

  std::map<int, std::string> names;
  if (!label_file.empty()) {
    std::ifstream labels_in(label_file);
    if (!labels_in) throw DataError("cannot open label file " + label_file.string());
    line_no = 0;
    while (std::getline(labels_in, line)) {
      ++line_no;
      if (blank(line)) continue;
      const std::string where = label_file.string() + ":" + std::to_string(line_no);
      try {
        auto rec = json::parse(line);
        names[rec.at("label").get<int>()] = rec.at("name").get<std::string>();
      } catch (const json::exception& e) {
        throw DataError(where + ": invalid label record: " + e.what());
      }
    }
  }

  LoadedGraph out;
  out.graph = TextGraph::build(std::move(texts), edges, std::move(fine), std::move(coarse),
                               std::move(names), &out.report);
  return out;
}

void save_graph(const TextGraph& graph, const std::filesystem::path& node_file,
                const std::filesystem::path& edge_file,
                const std::filesystem::path& label_file) {
  std::ofstream nodes_out(node_file, std::ios::binary);
  if (!nodes_out) throw DataError("cannot write " + node_file.string());
  for (std::size_t i = 0; i < graph.num_nodes(); ++i) {
    json rec;
    rec["id"] = i;
    rec["text"] = graph.texts()[i];
    if (!graph.fine_labels().empty() && graph.fine_labels()[i] >= 0)
      rec["fine_label"] = graph.fine_labels()[i];
    if (!graph.coarse_labels().empty() && graph.coarse_labels()[i] >= 0)
      rec["coarse_label"] = graph.coarse_labels()[i];
    nodes_out << rec.dump() << '\n';
  }
  std::ofstream edges_out(edge_file, std::ios::binary);
  if (!edges_out) throw DataError("cannot write " + edge_file.string());
  for (auto [u, v] : graph.edges()) edges_out << u << ' ' << v << '\n';
  if (!label_file.empty()) {
    std::ofstream labels_out(label_file, std::ios::binary);
    if (!labels_out) throw DataError("cannot write " + label_file.string());
    for (const auto& [label, name] : graph.label_names()) {
      labels_out << json{{"label", label}, {"name", name}}.dump() << '\n';
    }
  }
}

std::vector<NodeId> neighbors(const TextGraph& graph, NodeId v) {
  auto adj = graph.neighbors(v);
  return {adj.begin(), adj.end()};
}

namespace {

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[rng.uniform(i)]);
  }
}

}  // namespace

TaskSplit make_few_shot_split(const TextGraph& graph, int k, LabelKind kind, std::uint64_t seed) {
  if (!graph.has_labels(kind))
    throw DataError("graph has no " + std::string(to_string(kind)) + " labels");
  if (k < 1) throw ConfigError("shot count must be >= 1");
  const auto& labels = graph.labels(kind);
  std::map<int, std::vector<NodeId>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) by_class[labels[i]].push_back(static_cast<NodeId>(i));
  }

  TaskSplit split;
  split.shot_count = k;
  std::vector<NodeId> rest;
  for (auto& [label, members] : by_class) {
    Rng rng(mix_seed({seed, 0x5107ULL, static_cast<std::uint64_t>(label)}));
    shuffle(members, rng);
    if (static_cast<int>(members.size()) < k) {
      split.warnings.push_back("class " + std::to_string(label) + " has only " +
                               std::to_string(members.size()) + " members (< " +
                               std::to_string(k) + " shots); all placed in train");
    }
    const auto take = std::min<std::size_t>(members.size(), static_cast<std::size_t>(k));
    split.train_ids.insert(split.train_ids.end(), members.begin(), members.begin() + take);
    rest.insert(rest.end(), members.begin() + take, members.end());
  }
  std::sort(rest.begin(), rest.end());
  Rng rng(mix_seed({seed, 0x7E57ULL}));
  shuffle(rest, rng);
  const auto half = rest.size() / 2;
  split.valid_ids.assign(rest.begin(), rest.begin() + half);
  split.test_ids.assign(rest.begin() + half, rest.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.valid_ids.begin(), split.valid_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  return split;
}

TaskSplit make_pretrain_split(const TextGraph& graph, std::uint64_t seed) {
  std::vector<NodeId> ids(graph.num_nodes());
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(mix_seed({seed, 0x9E7ULL}));
  shuffle(ids, rng);
  const auto n_train = ids.size() * 8 / 10;
  const auto n_valid = ids.size() / 10;
  TaskSplit split;
  split.train_ids.assign(ids.begin(), ids.begin() + n_train);
  split.valid_ids.assign(ids.begin() + n_train, ids.begin() + n_train + n_valid);
  split.test_ids.assign(ids.begin() + n_train + n_valid, ids.end());
  std::sort(split.train_ids.begin(), split.train_ids.end());
  std::sort(split.valid_ids.begin(), split.valid_ids.end());
  std::sort(split.test_ids.begin(), split.test_ids.end());
  return split;
}

EdgeSplit make_edge_split(const TextGraph& graph, int k, int test_count, std::uint64_t seed) {
  auto edges = graph.edges();
  if (static_cast<int>(edges.size()) < k + 2)
    throw DataError("graph has too few edges for a " + std::to_string(k) + "-shot edge split");
  Rng rng(mix_seed({seed, 0xED6EULL}));
  shuffle(edges, rng);
  EdgeSplit split;
  split.train.assign(edges.begin(), edges.begin() + k);
  const auto available = edges.size() - static_cast<std::size_t>(k);
  const auto n_test = std::min<std::size_t>(available, static_cast<std::size_t>(test_count));
  split.test.assign(edges.begin() + k, edges.begin() + k + n_test);
  return split;
}

std::string_view to_string(LabelKind kind) { return kind == LabelKind::Fine ? "fine" : "coarse"; }

LabelKind label_kind_from_string(std::string_view name) {
  if (name == "fine") return LabelKind::Fine;
  if (name == "coarse") return LabelKind::Coarse;
  throw ConfigError("unknown label kind '" + std::string(name) + "'");
}

}  // namespace odin
