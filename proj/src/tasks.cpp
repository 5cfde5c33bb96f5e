#include "odin/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

#include "json.hpp"
#include "odin/sampler.hpp"

namespace odin {

std::string EvalReport::to_json_line() const {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["metric"] = metric;
  j["value"] = value;
  j["seed"] = seed;
  j["config_digest"] = config_digest;
  j["count"] = count;
  j["gold_absent"] = gold_absent;
  j["warnings"] = warnings;
  return j.dump();
}

EvalReport EvalReport::from_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report line: ") + e.what());
  }
  EvalReport r;
  try {
    r.task = j.at("task").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.value = j.at("value").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_digest = j.value("config_digest", "");
    r.count = j.value("count", std::size_t{0});
    r.gold_absent = j.value("gold_absent", std::size_t{0});
    r.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report line missing fields: ") + e.what());
  }
  return r;
}

namespace {

struct TapedBatch {
  std::map<NodeId, std::vector<int>> tokens;
  ForwardResult fwd;
};

TapedBatch forward_nodes(const TextGraph& graph, const TokenTable& tokens, const ParamSet& params,
                         const LayerSchedule& schedule, std::span<const NodeId> batch,
                         const std::vector<int>& fanouts, std::uint64_t seed, bool keep_tape) {
  const auto sub = sample_frontiers(graph, batch, schedule.hop_count(),
                                    resolve_fanouts(fanouts, schedule.hop_count()), seed);
  TapedBatch out;
  for (NodeId v : sub.all_nodes()) out.tokens.emplace(v, tokens.at(static_cast<std::size_t>(v)));
  ForwardOptions opts;
  opts.keep_tape = keep_tape;
  out.fwd = odin_forward(sub, embed_nodes(out.tokens, params), params, schedule, opts);
  return out;
}

TapedBatch forward_texts(const std::map<NodeId, std::vector<int>>& sequences, const ParamSet& params,
                         const LayerSchedule& schedule, bool keep_tape) {
  std::vector<NodeId> ids;
  for (const auto& [id, seq] : sequences) ids.push_back(id);
  TapedBatch out;
  out.tokens = sequences;
  ForwardOptions opts;
  opts.keep_tape = keep_tape;
  out.fwd = odin_forward(isolated_subgraph(ids, schedule.hop_count()), embed_nodes(out.tokens, params),
                         params, schedule, opts);
  return out;
}

void backward_cls(const TapedBatch& batch, const std::map<NodeId, Vector>& d_cls, const ParamSet& params,
                  ParamSet& grads) {
  std::map<NodeId, Matrix> d_states;
  for (const auto& [v, g] : d_cls) {
    Matrix d = Matrix::Zero(batch.fwd.final_states.at(v).rows(), params.dims.d);
    d.row(0) = g.transpose();
    d_states.emplace(v, std::move(d));
  }
  std::map<NodeId, Matrix> d_init;
  odin_backward(batch.fwd, d_states, params, grads, &d_init);
  embed_nodes_backward(batch.tokens, d_init, grads);
}

const Vector& embedding_of(const std::map<NodeId, Vector>& embs, NodeId v) {
  auto it = embs.find(v);
  if (it == embs.end()) throw DataError("no embedding for node " + std::to_string(v));
  return it->second;
}

void shuffle(std::vector<NodeId>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform(i)]);
}

Vector softmax(const Vector& z) {
  Vector p = (z.array() - z.maxCoeff()).exp();
  return p / p.sum();
}

}  // namespace

std::map<NodeId, Vector> encode_nodes(const TextGraph& graph, const TokenTable& tokens,
                                      const ParamSet& params, const LayerSchedule& schedule,
                                      std::span<const NodeId> nodes, const EncodeSettings& settings) {
  if (settings.chunk < 1) throw ConfigError("encode chunk must be >= 1");
  std::set<NodeId> unique(nodes.begin(), nodes.end());
  std::vector<NodeId> order(unique.begin(), unique.end());
  std::map<NodeId, Vector> out;
  const auto chunk = static_cast<std::size_t>(settings.chunk);
  for (std::size_t start = 0; start < order.size(); start += chunk) {
    std::span<const NodeId> part(order.data() + start, std::min(chunk, order.size() - start));
    auto batch = forward_nodes(graph, tokens, params, schedule, part, settings.fanouts, settings.seed, false);
    for (auto& [v, cls] : batch.fwd.cls) out.emplace(v, std::move(cls));
  }
  return out;
}

std::vector<Vector> encode_texts(const std::vector<std::vector<int>>& sequences,
                                 const ParamSet& params, const LayerSchedule& schedule) {
  std::map<NodeId, std::vector<int>> seqs;
  for (std::size_t i = 0; i < sequences.size(); ++i) seqs.emplace(static_cast<NodeId>(i), sequences[i]);
  std::vector<Vector> out;
  if (seqs.empty()) return out;
  const auto batch = forward_texts(seqs, params, schedule, false);
  for (std::size_t i = 0; i < sequences.size(); ++i) out.push_back(batch.fwd.cls.at(static_cast<NodeId>(i)));
  return out;
}

EvalReport linkpred_eval(const std::map<NodeId, Vector>& embeddings,
                         std::span<const TextGraph::Edge> positive_pairs) {
  if (positive_pairs.size() < 2)
    throw DataError("link prediction needs at least 2 pairs per batch; got " +
                    std::to_string(positive_pairs.size()));
  std::set<NodeId> tail_set;
  for (const auto& [u, v] : positive_pairs) tail_set.insert(v);
  std::size_t hits = 0;
  for (const auto& [u, v] : positive_pairs) {
    const Vector& q = embedding_of(embeddings, u);
    NodeId best = -1;
    double best_score = 0.0;
    // Tails are visited in ascending id order, so a strict comparison keeps
    // the smaller id on ties. The query never competes against itself.
    for (NodeId t : tail_set) {
      if (t == u) continue;
      const double s = q.dot(embedding_of(embeddings, t));
      if (best < 0 || s > best_score) {
        best = t;
        best_score = s;
      }
    }
    if (best == v) ++hits;
  }
  EvalReport r;
  r.task = "linkpred";
  r.metric = "PREC";
  r.count = positive_pairs.size();
  r.value = static_cast<double>(hits) / static_cast<double>(r.count);
  return r;
}

EvalReport linkpred_eval_batched(const std::map<NodeId, Vector>& embeddings,
                                 std::span<const TextGraph::Edge> pairs, int batch_pairs) {
  if (batch_pairs < 2) throw ConfigError("link prediction batch must hold at least 2 pairs");
  if (pairs.size() < 2) throw DataError("link prediction needs at least 2 test pairs");
  const auto step = static_cast<std::size_t>(batch_pairs);
  double hits = 0.0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < pairs.size();) {
    std::size_t stop = std::min(pairs.size(), start + step);
    if (pairs.size() - stop == 1) stop = pairs.size();
    const auto r = linkpred_eval(embeddings, pairs.subspan(start, stop - start));
    hits += r.value * static_cast<double>(r.count);
    count += r.count;
    start = stop;
  }
  EvalReport r;
  r.task = "linkpred";
  r.metric = "PREC";
  r.count = count;
  r.value = std::round(hits) / static_cast<double>(count);
  return r;
}

Vector LinearHead::standardize(const Vector& x) const {
  if (center.size() == 0) return x;
  return (x - center).cwiseProduct(inv_scale);
}

int LinearHead::predict(const Vector& x) const {
  const Vector z = logits(x);
  int best = 0;
  for (int c = 1; c < z.size(); ++c)
    if (z[c] > z[best]) best = c;
  return best;
}

LinearHead train_linear_head(const std::vector<Vector>& features, const std::vector<int>& labels,
                             int num_classes, const HeadSettings& settings) {
  if (features.empty()) throw DataError("no training examples for the linear head");
  if (features.size() != labels.size()) throw DataError("feature and label counts differ");
  if (num_classes < 2) throw DataError("classification needs at least 2 classes");
  const auto d = features.front().size();
  LinearHead head;
  head.weight = Matrix::Zero(num_classes, d);
  head.bias = Vector::Zero(num_classes);
  const double inv_n = 1.0 / static_cast<double>(features.size());
  head.center = Vector::Zero(d);
  for (const auto& x : features) head.center += inv_n * x;
  Vector var = Vector::Zero(d);
  for (const auto& x : features) var += inv_n * (x - head.center).cwiseAbs2();
  head.inv_scale = (var.array() + 1e-12).rsqrt().matrix();
  std::vector<Vector> z;
  z.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw DataError("label out of range");
    z.push_back(head.standardize(features[i]));
  }
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    Matrix gw = settings.weight_decay * head.weight;
    Vector gb = Vector::Zero(num_classes);
    for (std::size_t i = 0; i < z.size(); ++i) {
      Vector p = softmax(head.weight * z[i] + head.bias);
      p[labels[i]] -= 1.0;
      gw.noalias() += inv_n * p * z[i].transpose();
      gb += inv_n * p;
    }
    head.weight -= settings.lr * gw;
    head.bias -= settings.lr * gb;
  }
  return head;
}

EvalReport classify_train_eval(const std::map<NodeId, Vector>& embeddings, const TaskSplit& split,
                               const std::vector<int>& labels, const HeadSettings& settings,
                               std::uint64_t seed) {
  if (split.train_ids.empty() || split.test_ids.empty())
    throw DataError("classification split needs train and test nodes");
  auto label_of = [&](NodeId v) {
    if (v < 0 || static_cast<std::size_t>(v) >= labels.size() || labels[static_cast<std::size_t>(v)] < 0)
      throw DataError("node " + std::to_string(v) + " has no label");
    return labels[static_cast<std::size_t>(v)];
  };
  std::vector<Vector> x;
  std::vector<int> y;
  std::set<int> train_classes;
  int num_classes = 0;
  for (NodeId v : split.train_ids) {
    x.push_back(embedding_of(embeddings, v));
    y.push_back(label_of(v));
    train_classes.insert(y.back());
    num_classes = std::max(num_classes, y.back() + 1);
  }
  if (train_classes.size() < 2)
    throw DataError("degenerate split: training labels cover a single class");
  for (NodeId v : split.test_ids) num_classes = std::max(num_classes, label_of(v) + 1);
  const auto head = train_linear_head(x, y, num_classes, settings);
  std::size_t correct = 0;
  for (NodeId v : split.test_ids)
    if (head.predict(embedding_of(embeddings, v)) == label_of(v)) ++correct;
  EvalReport r;
  r.task = "classify";
  r.metric = "ACC";
  r.seed = seed;
  r.count = split.test_ids.size();
  r.value = static_cast<double>(correct) / static_cast<double>(r.count);
  r.warnings = split.warnings;
  return r;
}

std::vector<double> bm25_scores(const std::vector<std::string>& query,
                                const std::vector<std::vector<std::string>>& docs,
                                const Bm25Params& params) {
  if (docs.empty()) throw DataError("BM25 needs a non-empty document collection");
  if (params.k1 < 0.0 || params.b < 0.0 || params.b > 1.0)
    throw ConfigError("BM25 expects k1 >= 0 and b in [0, 1]");
  const double n_docs = static_cast<double>(docs.size());
  double avg_len = 0.0;
  std::vector<std::unordered_map<std::string, int>> tf(docs.size());
  std::unordered_map<std::string, int> df;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    avg_len += static_cast<double>(docs[i].size());
    for (const auto& t : docs[i]) ++tf[i][t];
    for (const auto& [t, c] : tf[i]) ++df[t];
  }
  avg_len /= n_docs;
  std::vector<double> scores(docs.size(), 0.0);
  for (const auto& term : query) {
    auto it = df.find(term);
    if (it == df.end()) continue;
    const double n_t = it->second;
    const double idf = std::log(1.0 + (n_docs - n_t + 0.5) / (n_t + 0.5));
    for (std::size_t i = 0; i < docs.size(); ++i) {
      auto f_it = tf[i].find(term);
      if (f_it == tf[i].end()) continue;
      const double f = f_it->second;
      const double len_norm = avg_len > 0.0 ? static_cast<double>(docs[i].size()) / avg_len : 0.0;
      scores[i] += idf * f * (params.k1 + 1.0) / (f + params.k1 * (1.0 - params.b + params.b * len_norm));
    }
  }
  return scores;
}

EvalReport retrieval_eval(const std::map<NodeId, Vector>& node_embs,
                          const std::map<int, Vector>& label_embs, const std::map<NodeId, int>& gold,
                          int k) {
  if (k < 1) throw ConfigError("retrieval k must be >= 1");
  if (label_embs.empty()) throw DataError("retrieval needs at least one label");
  if (gold.empty()) throw DataError("retrieval needs at least one query node");
  EvalReport r;
  r.task = "retrieve";
  r.metric = "Recall@" + std::to_string(k);
  if (static_cast<std::size_t>(k) > label_embs.size()) {
    r.warnings.push_back("k=" + std::to_string(k) + " exceeds the " + std::to_string(label_embs.size()) +
                         " labels; clipped");
    k = static_cast<int>(label_embs.size());
  }
  std::size_t hits = 0;
  for (const auto& [v, g] : gold) {
    auto git = label_embs.find(g);
    if (git == label_embs.end()) throw DataError("gold label " + std::to_string(g) + " has no embedding");
    const Vector& q = embedding_of(node_embs, v);
    const double gold_score = q.dot(git->second);
    // Rank of gold = labels strictly ahead of it (higher score, or equal
    // score with a smaller id).
    int ahead = 0;
    for (const auto& [c, e] : label_embs) {
      if (c == g) continue;
      const double s = q.dot(e);
      if (s > gold_score || (s == gold_score && c < g)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  r.count = gold.size();
  r.value = static_cast<double>(hits) / static_cast<double>(r.count);
  return r;
}

EvalReport rerank_eval(const std::map<NodeId, std::vector<int>>& candidates,
                       const std::map<NodeId, Vector>& node_embs,
                       const std::map<int, Vector>& label_embs, const std::map<NodeId, int>& gold) {
  if (gold.empty()) throw DataError("reranking needs at least one query node");
  EvalReport r;
  r.task = "rerank";
  r.metric = "PRC";
  std::size_t hits = 0;
  for (const auto& [v, g] : gold) {
    auto cit = candidates.find(v);
    if (cit == candidates.end() || cit->second.empty())
      throw DataError("node " + std::to_string(v) + " has no candidate labels");
    const auto& cands = cit->second;
    if (std::find(cands.begin(), cands.end(), g) == cands.end()) {
      ++r.gold_absent;
      continue;
    }
    const Vector& q = embedding_of(node_embs, v);
    int best = -1;
    double best_score = 0.0;
    for (int c : cands) {
      auto eit = label_embs.find(c);
      if (eit == label_embs.end()) throw DataError("candidate label " + std::to_string(c) + " has no embedding");
      const double s = q.dot(eit->second);
      if (best < 0 || s > best_score) {
        best = c;
        best_score = s;
      }
    }
    if (best == g) ++hits;
  }
  r.count = gold.size();
  r.value = static_cast<double>(hits) / static_cast<double>(r.count);
  return r;
}

std::vector<int> retrieve_candidates(const std::vector<std::string>& text_words,
                                     const std::map<int, std::vector<std::string>>& label_words,
                                     int limit) {
  if (limit < 1) throw ConfigError("candidate limit must be >= 1");
  if (label_words.empty()) throw DataError("no labels to retrieve from");
  const std::set<std::string> present(text_words.begin(), text_words.end());
  std::vector<int> ids;
  std::vector<std::vector<std::string>> docs;
  for (const auto& [id, words] : label_words) {
    ids.push_back(id);
    docs.push_back(words);
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const bool exact = !docs[i].empty() && std::all_of(docs[i].begin(), docs[i].end(),
                                                       [&](const std::string& w) { return present.count(w) > 0; });
    if (exact) out.push_back(ids[i]);
  }
  const auto scores = bm25_scores(text_words, docs);
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t i : order) {
    if (static_cast<int>(out.size()) >= limit) break;
    if (std::find(out.begin(), out.end(), ids[i]) == out.end()) out.push_back(ids[i]);
  }
  if (static_cast<int>(out.size()) > limit) out.resize(static_cast<std::size_t>(limit));
  return out;
}

void finetune_linkpred(const TextGraph& graph, const TokenTable& tokens, ParamSet& params,
                       const LayerSchedule& schedule, std::span<const TextGraph::Edge> train_edges,
                       const FinetuneSettings& settings) {
  if (train_edges.empty()) throw DataError("link prediction fine-tuning needs training edges");
  if (settings.batch_size < 2) throw ConfigError("fine-tuning batch size must be >= 2");
  PretrainHyper hyper;
  hyper.fanouts = settings.fanouts;
  hyper.use_nmlm = false;
  Optimizer opt(params, settings.optimizer);
  std::vector<std::size_t> order(train_edges.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto pairs_per_batch = static_cast<std::size_t>(std::max(1, settings.batch_size / 2));
  long step = 0;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    Rng rng(mix_seed({settings.seed, 0x11AEULL, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform(i)]);
    for (std::size_t start = 0; start < order.size(); start += pairs_per_batch) {
      std::set<NodeId> members;
      for (std::size_t i = start; i < std::min(order.size(), start + pairs_per_batch); ++i) {
        members.insert(train_edges[order[i]].first);
        members.insert(train_edges[order[i]].second);
      }
      const std::vector<NodeId> batch(members.begin(), members.end());
      pretrain_step(graph, tokens, batch, params, schedule, opt, hyper,
                    mix_seed({settings.seed, 0x11AEULL, static_cast<std::uint64_t>(step)}), step);
      ++step;
    }
  }
}

LinearHead finetune_classifier(const TextGraph& graph, const TokenTable& tokens, ParamSet& params,
                               const LayerSchedule& schedule, const TaskSplit& split,
                               const std::vector<int>& labels, int num_classes,
                               const FinetuneSettings& settings, const HeadSettings& head_settings) {
  if (split.train_ids.empty()) throw DataError("classification fine-tuning needs training nodes");
  if (settings.batch_size < 1) throw ConfigError("fine-tuning batch size must be >= 1");
  if (num_classes < 2) throw DataError("classification needs at least 2 classes");
  LinearHead head;
  head.weight = Matrix::Zero(num_classes, params.dims.d);
  head.bias = Vector::Zero(num_classes);
  Optimizer opt(params, settings.optimizer);
  std::vector<NodeId> order = split.train_ids;
  const auto bs = static_cast<std::size_t>(settings.batch_size);
  long step = 0;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    Rng rng(mix_seed({settings.seed, 0xC1A55ULL, static_cast<std::uint64_t>(epoch)}));
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<NodeId> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      std::sort(batch.begin(), batch.end());
      const auto taped = forward_nodes(graph, tokens, params, schedule, batch, settings.fanouts,
                                       mix_seed({settings.seed, 0xC1A55ULL, 1000003ULL + static_cast<std::uint64_t>(step)}),
                                       true);
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      Matrix gw = head_settings.weight_decay * head.weight;
      Vector gb = Vector::Zero(num_classes);
      std::map<NodeId, Vector> d_cls;
      for (NodeId v : batch) {
        const int y = labels.at(static_cast<std::size_t>(v));
        if (y < 0 || y >= num_classes) throw DataError("node " + std::to_string(v) + " has no usable label");
        const Vector& x = taped.fwd.cls.at(v);
        Vector p = softmax(head.logits(x));
        p[y] -= 1.0;
        p *= inv_b;
        gw.noalias() += p * x.transpose();
        gb += p;
        d_cls.emplace(v, head.weight.transpose() * p);
      }
      ParamSet grads = params.zeros_like();
      backward_cls(taped, d_cls, params, grads);
      opt.step(params, grads);
      head.weight -= head_settings.lr * gw;
      head.bias -= head_settings.lr * gb;
      ++step;
    }
  }
  return head;
}

void finetune_retrieval(const TextGraph& graph, const TokenTable& tokens, ParamSet& params,
                        const LayerSchedule& schedule, const std::map<int, std::vector<int>>& label_tokens,
                        const std::map<NodeId, int>& gold,
                        const std::map<NodeId, std::vector<int>>& hard_negatives,
                        const FinetuneSettings& settings) {
  if (gold.empty()) throw DataError("retrieval fine-tuning needs labelled nodes");
  if (settings.batch_size < 1) throw ConfigError("fine-tuning batch size must be >= 1");
  Optimizer opt(params, settings.optimizer);
  std::vector<NodeId> order;
  for (const auto& [v, g] : gold) {
    if (!label_tokens.count(g)) throw DataError("gold label " + std::to_string(g) + " has no text");
    order.push_back(v);
  }
  const auto bs = static_cast<std::size_t>(settings.batch_size);
  long step = 0;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    Rng rng(mix_seed({settings.seed, 0xD9EULL, static_cast<std::uint64_t>(epoch)}));
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<NodeId> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      std::sort(batch.begin(), batch.end());
      std::set<int> pool;
      for (NodeId v : batch) {
        pool.insert(gold.at(v));
        auto it = hard_negatives.find(v);
        if (it == hard_negatives.end()) continue;
        for (int c : it->second)
          if (label_tokens.count(c)) pool.insert(c);
      }
      if (pool.size() < 2) continue;
      std::map<NodeId, std::vector<int>> label_seqs;
      for (int c : pool) label_seqs.emplace(c, label_tokens.at(c));
      const auto nodes = forward_nodes(graph, tokens, params, schedule, batch, settings.fanouts,
                                       mix_seed({settings.seed, 0xD9EULL, 1000003ULL + static_cast<std::uint64_t>(step)}),
                                       true);
      const auto labels = forward_texts(label_seqs, params, schedule, true);
      const std::vector<int> pool_ids(pool.begin(), pool.end());
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      std::map<NodeId, Vector> d_node, d_label;
      for (int c : pool_ids) d_label.emplace(c, Vector::Zero(params.dims.d));
      for (NodeId v : batch) {
        const Vector& q = nodes.fwd.cls.at(v);
        Vector z(static_cast<Eigen::Index>(pool_ids.size()));
        for (std::size_t i = 0; i < pool_ids.size(); ++i) z[static_cast<Eigen::Index>(i)] = q.dot(labels.fwd.cls.at(pool_ids[i]));
        Vector p = softmax(z);
        const auto gi = std::lower_bound(pool_ids.begin(), pool_ids.end(), gold.at(v)) - pool_ids.begin();
        p[gi] -= 1.0;
        p *= inv_b;
        Vector dq = Vector::Zero(params.dims.d);
        for (std::size_t i = 0; i < pool_ids.size(); ++i) {
          const double w = p[static_cast<Eigen::Index>(i)];
          dq += w * labels.fwd.cls.at(pool_ids[i]);
          d_label.at(pool_ids[i]) += w * q;
        }
        d_node.emplace(v, std::move(dq));
      }
      ParamSet grads = params.zeros_like();
      backward_cls(nodes, d_node, params, grads);
      backward_cls(labels, d_label, params, grads);
      opt.step(params, grads);
      ++step;
    }
  }
}

}  // namespace odin
