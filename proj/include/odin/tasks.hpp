#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "odin/common.hpp"
#include "odin/fusion.hpp"
#include "odin/graph_store.hpp"
#include "odin/objectives.hpp"
#include "odin/params.hpp"

namespace odin {

/// One metric value. PREC and PRC are both precision@1 over the task's
/// candidate pool (in-batch tails for link prediction, retrieved labels for
/// reranking).
struct EvalReport {
  std::string task;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;
  /// Number of scored queries.
  std::size_t count = 0;
  /// Reranking: nodes whose gold label was missing from the candidates.
  std::size_t gold_absent = 0;
  std::vector<std::string> warnings;

  /// Single-line JSON record with a fixed key order.
  std::string to_json_line() const;
  static EvalReport from_json_line(const std::string& line);
};

struct EncodeSettings {
  /// One fanout per hop; a single value is broadcast; empty means 5.
  std::vector<int> fanouts;
  std::uint64_t seed = 0;
  /// Nodes encoded per sampled subgraph.
  int chunk = 32;
};

/// Final [CLS] vector of each node, computed over sampled neighborhoods.
std::map<NodeId, Vector> encode_nodes(const TextGraph& graph, const TokenTable& tokens,
                                      const ParamSet& params, const LayerSchedule& schedule,
                                      std::span<const NodeId> nodes, const EncodeSettings& settings);

/// Encodes free-standing texts (label names) with an empty neighborhood.
std::vector<Vector> encode_texts(const std::vector<std::vector<int>>& sequences,
                                 const ParamSet& params, const LayerSchedule& schedule);

/// Precision@1 of each pair's true tail against every distinct tail in the
/// batch, scored by dot product. Equal scores go to the smaller node id.
EvalReport linkpred_eval(const std::map<NodeId, Vector>& embeddings,
                         std::span<const TextGraph::Edge> positive_pairs);

/// linkpred_eval over consecutive batches of `batch_pairs` pairs, averaged
/// over all queries. A trailing batch of one pair joins the previous batch.
EvalReport linkpred_eval_batched(const std::map<NodeId, Vector>& embeddings,
                                 std::span<const TextGraph::Edge> pairs, int batch_pairs);

/// Softmax regression head over standardized features.
struct LinearHead {
  Matrix weight;  // classes x d
  Vector bias;
  /// Per-dimension shift and scale fitted on the training features; empty
  /// means raw features.
  Vector center;
  Vector inv_scale;

  Vector standardize(const Vector& x) const;
  Vector logits(const Vector& x) const { return weight * standardize(x) + bias; }
  /// Argmax with ties to the smaller class id.
  int predict(const Vector& x) const;
};

struct HeadSettings {
  int epochs = 200;
  double lr = 0.5;
  double weight_decay = 1e-4;
};

/// Standardizes features with the training mean and deviation, then runs
/// full-batch gradient descent on mean cross-entropy from a zero start.
LinearHead train_linear_head(const std::vector<Vector>& features, const std::vector<int>& labels,
                             int num_classes, const HeadSettings& settings);

/// Trains a linear head on the train split's embeddings and reports test
/// accuracy. Throws when the train split holds fewer than two classes.
EvalReport classify_train_eval(const std::map<NodeId, Vector>& embeddings, const TaskSplit& split,
                               const std::vector<int>& labels, const HeadSettings& settings,
                               std::uint64_t seed);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Okapi BM25 with idf = ln(1 + (N - n + 0.5) / (n + 0.5)), which keeps
/// every score non-negative. Each query token contributes once per
/// occurrence.
std::vector<double> bm25_scores(const std::vector<std::string>& query,
                                const std::vector<std::vector<std::string>>& docs,
                                const Bm25Params& params = {});

/// Recall@k of the gold label when all labels are ranked by dot product
/// (ties to the smaller label id). k is clipped to the label count with a
/// warning.
EvalReport retrieval_eval(const std::map<NodeId, Vector>& node_embs,
                          const std::map<int, Vector>& label_embs, const std::map<NodeId, int>& gold,
                          int k = 10);

/// Precision@1 after re-scoring each node's candidates by dot product (ties
/// keep retriever order). A gold label outside the list counts as a miss and
/// is tallied in gold_absent.
EvalReport rerank_eval(const std::map<NodeId, std::vector<int>>& candidates,
                       const std::map<NodeId, Vector>& node_embs,
                       const std::map<int, Vector>& label_embs, const std::map<NodeId, int>& gold);

/// Label candidates for one text: labels whose name tokens all occur in the
/// text (exact match) first, then the BM25 ranking, up to `limit` entries.
std::vector<int> retrieve_candidates(const std::vector<std::string>& text_words,
                                     const std::map<int, std::vector<std::string>>& label_words,
                                     int limit);

struct FinetuneSettings {
  int epochs = 5;
  int batch_size = 16;
  OptimizerConfig optimizer;
  std::vector<int> fanouts;
  std::uint64_t seed = 0;
};

/// Link-prediction fine-tuning: masked node prediction only, on batches made
/// of training-edge endpoints.
void finetune_linkpred(const TextGraph& graph, const TokenTable& tokens, ParamSet& params,
                       const LayerSchedule& schedule, std::span<const TextGraph::Edge> train_edges,
                       const FinetuneSettings& settings);

/// Joint training of a linear head and the encoder with cross-entropy on
/// the train split. Returns the trained head.
LinearHead finetune_classifier(const TextGraph& graph, const TokenTable& tokens, ParamSet& params,
                               const LayerSchedule& schedule, const TaskSplit& split,
                               const std::vector<int>& labels, int num_classes,
                               const FinetuneSettings& settings, const HeadSettings& head);

/// In-batch contrastive fine-tuning of node and label encodings: each node is
/// scored against the gold labels of its batch plus its own hard negatives.
void finetune_retrieval(const TextGraph& graph, const TokenTable& tokens, ParamSet& params,
                        const LayerSchedule& schedule, const std::map<int, std::vector<int>>& label_tokens,
                        const std::map<NodeId, int>& gold,
                        const std::map<NodeId, std::vector<int>>& hard_negatives,
                        const FinetuneSettings& settings);

}  // namespace odin
