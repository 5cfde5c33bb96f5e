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

/// Mean pairwise cosine similarity. A pair with a zero vector counts as 1
/// when both are zero and 0 otherwise. Needs at least two vectors.
double mean_pairwise_cosine(std::span<const Vector> vectors);

struct SmoothingProfile {
  /// "odin" or "deep-gnn-baseline".
  std::string model;
  /// Mean pairwise [CLS] cosine over the probe set after each layer.
  std::vector<double> cosine;
  std::vector<std::string> warnings;
};

/// Parameter-free averaging h_v <- mean of h over {v} and N(v) on the full
/// graph, repeated `depth` times.
SmoothingProfile baseline_profile(const TextGraph& graph, const std::map<NodeId, Vector>& init_features,
                                  std::span<const NodeId> probe, int depth);

/// Odin forward pass with the probe set as batch; records the probe nodes'
/// [CLS] after every layer.
SmoothingProfile odin_profile(const TextGraph& graph, const TokenTable& tokens, const ParamSet& params,
                              const LayerSchedule& schedule, std::span<const NodeId> probe, int fanout,
                              std::uint64_t seed);

/// Mean of the non-[CLS] token embeddings of each node (the [CLS] embedding
/// when the text is empty).
std::map<NodeId, Vector> text_features(const TokenTable& tokens, const ParamSet& params,
                                       std::span<const NodeId> nodes);

struct ReductionResult {
  double max_deviation = 0.0;
  /// Deviation after each layer (GNN reduction only).
  std::vector<double> per_layer;
};

/// Odin with S = {} and VA (or `schedule` when given, for fault injection)
/// against the plain Transformer stack applied to each node alone. The
/// deviation is the largest absolute difference over all final token states.
ReductionResult transformer_reduction_check(const TextGraph& graph, const TokenTable& tokens,
                                            const ParamSet& params, std::span<const NodeId> nodes,
                                            const LayerSchedule* schedule = nullptr, int fanout = 5,
                                            std::uint64_t seed = 0);

/// Identity-encoder Odin with every layer after the first a TG layer,
/// compared per layer with a mean-aggregator GNN
/// h <- relu(W1 * mean(neighbors) + W2 * h) on the full neighborhoods.
ReductionResult gnn_reduction_check(std::span<const Matrix> w1s, std::span<const Matrix> w2s,
                                    const TextGraph& graph, const std::map<NodeId, Vector>& init_features);

struct SeparationResult {
  /// ||CLS(u) - CLS(v)|| under full Odin.
  double odin = 0.0;
  /// Same under the reduced model: the plain Transformer for structural
  /// checks, the identity-encoder GNN for textual checks.
  double reduced = 0.0;
};

/// A small graph and its token table with a designated node pair.
struct SeparationInstance {
  TextGraph graph;
  TokenTable tokens;
  NodeId u = 0;
  NodeId v = 1;
};

/// u and v share one text; each has two neighbors of its own with
/// independent random texts.
SeparationInstance make_structural_instance(int vocab_size, int text_len, std::uint64_t seed);

/// Star with `leaves` leaves; u and v are two leaves. Their texts differ
/// unless `same_text` is set.
SeparationInstance make_textual_instance(int vocab_size, int text_len, int leaves, bool same_text,
                                         std::uint64_t seed);

/// Odin vs the Transformer reduction on an instance whose pair shares text.
SeparationResult structural_separation_check(const ParamSet& params, const LayerSchedule& schedule,
                                             const SeparationInstance& instance);

/// Odin vs the identity-encoder GNN fed constant features, on an instance
/// whose pair is swapped by a graph automorphism.
SeparationResult textual_separation_check(const ParamSet& params, const LayerSchedule& schedule,
                                          const SeparationInstance& instance);

/// One row of the theory pass/fail table.
struct TheoryCheck {
  std::string name;
  double value = 0.0;
  std::string comparison;  // "<" or ">"
  double threshold = 0.0;
  bool passed = false;
  std::string detail;
};

struct TheorySuiteOptions {
  int seeds = 3;
  int separation_seeds = 20;
  int separation_required = 19;
  int oversmoothing_nodes = 50;
  double oversmoothing_degree = 8.0;
  int baseline_depth = 16;
  double baseline_threshold = 0.99;
  double odin_threshold = 0.9;
  double reduction_tol = 1e-6;
  double separation_min = 1e-3;
  double symmetry_tol = 1e-6;
  std::uint64_t seed = 0;
};

struct TheorySuiteResult {
  std::vector<TheoryCheck> checks;
  /// Profiles of the first seed, for plotting.
  std::vector<SmoothingProfile> profiles;
};

/// Check groups of the suite. run_theory_suite runs all four in this order.
std::vector<TheoryCheck> transformer_reduction_checks(const TheorySuiteOptions& options);
std::vector<TheoryCheck> gnn_reduction_checks(const TheorySuiteOptions& options);
std::vector<TheoryCheck> separation_checks(const TheorySuiteOptions& options);
/// Appends the first seed's baseline and Odin profiles when `profiles` is set.
std::vector<TheoryCheck> oversmoothing_checks(const TheorySuiteOptions& options,
                                              std::vector<SmoothingProfile>* profiles = nullptr);

TheorySuiteResult run_theory_suite(const TheorySuiteOptions& options);

/// Long-format CSV: model,layer,cosine.
std::string profiles_to_csv(const std::vector<SmoothingProfile>& profiles);

}  // namespace odin
