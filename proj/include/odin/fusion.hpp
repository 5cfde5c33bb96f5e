#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odin/common.hpp"
#include "odin/params.hpp"
#include "odin/sampler.hpp"

namespace odin {

/// Simple-aggregation strategy used by TS layers.
enum class Strategy {
  VA,  // no graph token
  ME,  // parameter-free mean over self and neighbors
  PE,  // reuse the graph token of the most recent TG layer
  PG,  // reuse the aggregation weights of the most recent TG layer
};

std::string_view to_string(Strategy s);
Strategy strategy_from_string(std::string_view name);

/// Which of the L layers are TG layers, and what TS layers do.
struct LayerSchedule {
  int depth = 1;
  std::vector<int> tg_positions;
  Strategy strategy = Strategy::VA;
  /// Sampled hops A. Equal to |S| unless explicitly overridden (TG-ALL
  /// "k-jump" variants), in which case the frontier counter saturates at A.
  int hops = 0;

  bool is_tg(int layer) const;
  /// Index of `layer` in the TG list, or -1.
  int stage_of(int layer) const;
  int hop_count() const { return hops; }
  std::string describe() const;

  friend bool operator==(const LayerSchedule&, const LayerSchedule&) = default;
};

/// Validates positions (strictly inside 1..depth-1, no duplicates) and sorts them.
LayerSchedule make_schedule(int depth, std::vector<int> positions, Strategy strategy,
                            std::optional<int> hops = std::nullopt);

/// "light-2,4" -> L=6, S=[2,4], PG; "light-2" -> L=6, S=[2], PG.
LayerSchedule light_preset(std::string_view name);

/// Light presets plus "odin" (L=12, S=[1,6,11], PG) and "text-only" (L=6, S=[], VA).
LayerSchedule schedule_preset(std::string_view name);

/// W1 * mean(neighbors) + W2 * self; the mean of an empty list is zero.
Vector tg_aggregate(const Vector& cls_self, std::span<const Vector> cls_neighbors, const Matrix& w1,
                    const Matrix& w2);

/// Graph tokens of the latest TG stage, per node.
class AggCache {
 public:
  struct Entry {
    Vector agg;
    int stage = -1;
  };

  void store(NodeId node, Vector agg, int stage);
  const Entry* find(NodeId node) const;
  /// Most recent TG stage that has run, -1 before the first one.
  int last_stage() const { return last_stage_; }
  void set_last_stage(int stage) { last_stage_ = stage; }

 private:
  std::map<NodeId, Entry> entries_;
  int last_stage_ = -1;
};

/// TS-layer aggregation. Returns nullopt for VA, and also for PE/PG when no
/// TG layer has run yet (then `fell_back` is set).
std::optional<Vector> simple_aggregate(Strategy strategy, const Vector& cls_self,
                                       std::span<const Vector> cls_neighbors, const AggCache& cache,
                                       NodeId node, std::span<const GraphStageParams> stages,
                                       bool* fell_back = nullptr);

enum class EncoderMode {
  Transformer,
  /// Test hook: every text encoder is the identity; when a graph token is
  /// present the [CLS] row becomes relu(agg).
  Identity,
};

struct ForwardOptions {
  EncoderMode mode = EncoderMode::Transformer;
  /// Keep per-layer caches so odin_backward can run.
  bool keep_tape = false;
  /// Record the [CLS] vector of every node after every layer.
  bool trace_cls = false;
};

struct ForwardTape;

struct ForwardResult {
  std::vector<NodeId> batch;
  /// Final [CLS] of each batch node.
  std::map<NodeId, Vector> cls;
  /// Final token states of each batch node.
  std::map<NodeId, Matrix> final_states;
  /// Value of the frontier counter m after the last layer.
  int m_final = 0;
  /// Number of nodes pushed through each layer.
  std::vector<std::size_t> active_per_layer;
  /// cls_trace[l][v]: [CLS] of v after layer l (current state for frozen nodes).
  std::vector<std::map<NodeId, Vector>> cls_trace;
  std::vector<std::string> warnings;
  std::shared_ptr<const ForwardTape> tape;

  std::size_t encoded_nodes() const { return active_per_layer.empty() ? 0 : active_per_layer[0]; }
  std::size_t node_layer_updates() const;
};

/// Token + position embeddings for each node's token sequence.
std::map<NodeId, Matrix> embed_nodes(const std::map<NodeId, std::vector<int>>& tokens,
                                     const ParamSet& params);
void embed_nodes_backward(const std::map<NodeId, std::vector<int>>& tokens,
                          const std::map<NodeId, Matrix>& d_states, ParamSet& grads);

/// Layer-scheduled forward pass over a sampled subgraph.
///
/// Layer 0 is a plain block over B_0. For l = 1..L-1 the nodes of B_m get a
/// graph token (TG: stage weights; TS: schedule strategy) built from the
/// current [CLS] of themselves and their sampled neighbors, then run block l;
/// m advances after every TG layer (saturating at A). Nodes outside B_m keep
/// their last state. Returns the final [CLS] of the batch B_A.
ForwardResult odin_forward(const SampledSubgraph& sub, const std::map<NodeId, Matrix>& init_states,
                           const ParamSet& params, const LayerSchedule& schedule,
                           const ForwardOptions& options = {});

/// Backpropagates gradients of the final batch states (missing nodes count
/// as zero) into `grads` and, optionally, into the initial states.
void odin_backward(const ForwardResult& forward, const std::map<NodeId, Matrix>& d_final_states,
                   const ParamSet& params, ParamSet& grads,
                   std::map<NodeId, Matrix>* d_init_states = nullptr);

/// L plain blocks applied to one sequence, no graph context.
Matrix transformer_stack(const Matrix& states, const ParamSet& params);

}  // namespace odin
