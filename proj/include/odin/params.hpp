#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "odin/common.hpp"

namespace odin {

struct ModelDims {
  int vocab_size = 0;
  int d = 32;
  int heads = 4;
  int ffn = 64;
  int max_len = 32;
  /// Number of Transformer blocks L.
  int depth = 6;
  /// Number of (W1, W2) graph-aggregation stages, one per TG layer.
  int graph_stages = 0;
  /// MLM head shares the token embedding table.
  bool tie_mlm = false;

  void validate() const;
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct LayerParams {
  Matrix wq, wk, wv, wo;  // d x d, applied as X * W
  Vector bq, bk, bv, bo;
  Matrix w_ff1;  // d x ffn
  Vector b_ff1;
  Matrix w_ff2;  // ffn x d
  Vector b_ff2;
  Vector ln1_gain, ln1_bias;
  Vector ln2_gain, ln2_bias;
};

/// Graph aggregation weights of one TG stage: agg = W1 * mean(nbr) + W2 * self.
struct GraphStageParams {
  Matrix w1, w2;
};

enum class ParamGroup { Encoder, Graph };

/// Flat view of one parameter tensor (Eigen storage is contiguous).
struct TensorView {
  std::string name;
  std::span<double> data;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  ParamGroup group = ParamGroup::Encoder;
};

struct ParamSet {
  ModelDims dims;
  Matrix token_emb;  // |V| x d
  Matrix pos_emb;    // max_len x d
  std::vector<LayerParams> layers;
  std::vector<GraphStageParams> stages;
  Matrix mlm_head;  // |V| x d; empty when tied

  /// Symmetric uniform init with standard deviation 1/sqrt(fan_in); LN
  /// gains 1, biases 0.
  static ParamSet init(const ModelDims& dims, std::uint64_t seed);
  /// Same shapes, all zeros (gradient buffers).
  ParamSet zeros_like() const;

  const Matrix& mlm_weights() const { return dims.tie_mlm ? token_emb : mlm_head; }

  /// Every tensor in a fixed order. Views alias this object's storage.
  std::vector<TensorView> tensors();
  std::size_t count() const;
  void set_zero();
  bool all_finite() const;
};

/// Binary checkpoint: magic, version, JSON manifest (dims, tensor shapes,
/// caller metadata), then little-endian doubles in tensor order, then any
/// extra tensors (optimizer state).
struct Checkpoint {
  ParamSet params;
  std::string metadata_json = "{}";
  std::vector<Matrix> extra;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace odin
