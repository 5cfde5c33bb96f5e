#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "odin/common.hpp"
#include "odin/fusion.hpp"
#include "odin/graph_store.hpp"
#include "odin/params.hpp"
#include "odin/vocab.hpp"

namespace odin {

/// Pre-tokenized node texts, indexed by node id.
using TokenTable = std::vector<std::vector<int>>;

TokenTable tokenize_graph(const TextGraph& graph, const Vocab& vocab, int max_len);

struct MaskedToken {
  int position = 0;
  int original = 0;
  friend bool operator==(const MaskedToken&, const MaskedToken&) = default;
};

/// Masked node v_j contrasted against one neighbor v_k and one non-neighbor.
struct MnpTriple {
  NodeId anchor = 0;
  NodeId positive = 0;
  NodeId negative = 0;
  friend bool operator==(const MnpTriple&, const MnpTriple&) = default;
};

struct MaskPlan {
  std::map<NodeId, std::vector<MaskedToken>> token_masks;
  std::vector<MnpTriple> node_pairs;
  std::size_t excluded_no_negative = 0;
  std::size_t excluded_no_positive = 0;

  std::set<NodeId> masked_nodes() const;
  std::size_t masked_token_count() const;
  friend bool operator==(const MaskPlan&, const MaskPlan&) = default;
};

/// Token masks: round(ratio * non-[CLS] tokens), at least one, per batch
/// node. Node masks: every batch node with an in-batch neighbor and an
/// in-batch non-neighbor, with one seeded positive and negative (or one
/// triple per in-batch neighbor when all_positives is set).
MaskPlan plan_masks(const std::map<NodeId, std::vector<int>>& batch_tokens, const TextGraph& graph,
                    double mask_ratio, std::uint64_t seed, bool all_positives = false);

/// Copy of the token sequences with the planned positions set to [MASK].
std::map<NodeId, std::vector<int>> apply_masks(const std::map<NodeId, std::vector<int>>& tokens,
                                               const MaskPlan& plan);

struct LossValue {
  double value = 0.0;
  std::size_t terms = 0;
  /// No masked nodes / tokens to score.
  bool empty = false;
};

/// Sum over triples of -log(e^{s+} / (e^{s+} + e^{s-})) with dot-product scores.
LossValue mnp_loss(const std::map<NodeId, Vector>& cls, const MaskPlan& plan,
                   std::map<NodeId, Vector>* d_cls = nullptr);

/// Sum over masked tokens of the cross-entropy of softmax(q . h) at the original id.
LossValue nmlm_loss(const std::map<NodeId, Matrix>& final_states, const MaskPlan& plan,
                    const ParamSet& params, std::map<NodeId, Matrix>* d_states = nullptr,
                    ParamSet* grads = nullptr);

double total_loss(double l1, double l2);

enum class OptimizerKind { Sgd, Adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double lr_encoder = 1e-5;
  double lr_gnn = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Gradient descent with one learning rate for the encoder tensors and one
/// for the graph-aggregation (W1, W2) tensors.
class Optimizer {
 public:
  Optimizer(const ParamSet& shape, OptimizerConfig config);

  void step(ParamSet& params, ParamSet& grads);
  const OptimizerConfig& config() const { return config_; }
  long steps() const { return steps_; }

  /// Serializable state: a 1x1 step counter followed by Adam moments.
  std::vector<Matrix> state() const;
  void restore(const std::vector<Matrix>& state);

 private:
  OptimizerConfig config_;
  long steps_ = 0;
  std::vector<Vector> m_, v_;
};

struct PretrainHyper {
  std::vector<int> fanouts;  // one per hop
  double mask_ratio = 0.15;
  bool all_positives = false;
  /// Remove each anchor-positive edge from the sampled neighborhoods so a
  /// masked node cannot be read off its own aggregation.
  bool hide_positive_edges = true;
  bool use_mnp = true;
  bool use_nmlm = true;
};

struct BatchLoss {
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  std::size_t mnp_terms = 0;
  std::size_t mlm_terms = 0;
  std::size_t encoded_nodes = 0;
};

/// Samples, masks, runs the forward pass and the joint loss for one batch;
/// accumulates gradients into `grads` when given.
BatchLoss batch_loss(const TextGraph& graph, const TokenTable& tokens, std::span<const NodeId> batch,
                     const ParamSet& params, const LayerSchedule& schedule,
                     const PretrainHyper& hyper, std::uint64_t seed, ParamSet* grads = nullptr);

struct StepRecord {
  long step = 0;
  BatchLoss loss;
  double wall_ms = 0.0;
};

/// One gradient step of L1 + L2. Throws NumericError on a non-finite loss.
StepRecord pretrain_step(const TextGraph& graph, const TokenTable& tokens,
                         std::span<const NodeId> batch, ParamSet& params,
                         const LayerSchedule& schedule, Optimizer& optimizer,
                         const PretrainHyper& hyper, std::uint64_t seed, long step);

/// Batches of one epoch: batch_size/2 anchors taken in seeded order from
/// `ids`, each joined by one random graph neighbor so that masked node
/// prediction has in-batch positives.
std::vector<std::vector<NodeId>> make_pretrain_batches(const TextGraph& graph,
                                                       std::span<const NodeId> ids,
                                                       int batch_size, std::uint64_t seed,
                                                       int epoch);

}  // namespace odin
