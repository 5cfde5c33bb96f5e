#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "odin/fusion.hpp"
#include "odin/objectives.hpp"
#include "odin/params.hpp"
#include "odin/synth.hpp"
#include "odin/tasks.hpp"

namespace odin {

struct DataConfig {
  /// Empty node path means "generate from the synth section".
  std::string nodes;
  std::string edges;
  std::string labels;
  int min_freq = 1;
};

struct ModelConfig {
  /// Schedule preset name; when set it overrides depth/positions/strategy.
  std::string preset;
  int depth = 6;
  std::vector<int> tg_positions{2};
  std::string strategy = "PG";
  std::optional<int> hops;
  int d = 32;
  int heads = 4;
  int ffn = 64;
  int max_len = 32;
  bool tie_mlm = false;
};

struct PretrainConfig {
  int batch_size = 32;
  int epochs = 10;
  double mask_ratio = 0.15;
  OptimizerConfig optimizer;
  bool all_positives = false;
  bool hide_positive_edges = true;
  bool use_mnp = true;
  bool use_nmlm = true;
  /// Extra checkpoint every this many steps (0: end of each epoch only).
  long checkpoint_every = 0;
  /// Stop after this many steps in total (0: no limit).
  long max_steps = 0;
};

struct TaskConfig {
  std::string name = "classify";
  /// 0 selects the task's default shot count.
  int shots = 0;
  /// Classification label granularity.
  std::string label_kind = "coarse";
  /// Update the encoder during fine-tuning (otherwise only heads train).
  bool fine_tune = false;
  int epochs = 5;
  int batch_size = 16;
  double lr_encoder = 1e-5;
  double lr_gnn = 1e-3;
  std::string optimizer = "sgd";
  HeadSettings head;
  int linkpred_batch = 32;
  int test_edges = 256;
  int retrieve_k = 10;
  int candidates = 5;
  int hard_negatives = 1;
};

struct RunConfig {
  DataConfig data;
  SyntheticSpec synth;
  ModelConfig model;
  /// One fanout per hop, or a single value for every hop.
  std::vector<int> fanouts{5};
  PretrainConfig pretrain;
  TaskConfig task;
  std::string output_dir = "runs/default";
  std::uint64_t seed = 0;

  LayerSchedule schedule() const;
  ModelDims dims(int vocab_size) const;
  /// Checks value ranges, the schedule and that referenced files exist.
  void validate() const;

  /// Canonical JSON text (sorted keys, fixed formatting).
  std::string to_json() const;
  static RunConfig from_json(std::string_view text);
  /// FNV-1a of the canonical JSON with seed and output directory removed.
  std::string digest() const;
};

/// Defaults overlaid with the file's values; unknown keys are errors.
RunConfig load_config(const std::filesystem::path& path);

/// Applies "section.key=value"; the value is parsed as JSON when possible
/// and taken as a string otherwise.
void apply_override(RunConfig& config, std::string_view assignment);

/// Published shot counts: linkpred 32, classify 8, retrieve 16, rerank 32.
int default_shots(std::string_view task);

}  // namespace odin
