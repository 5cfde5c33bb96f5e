#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "odin/config.hpp"
#include "odin/graph_store.hpp"
#include "odin/objectives.hpp"
#include "odin/tasks.hpp"
#include "odin/theory.hpp"
#include "odin/vocab.hpp"

namespace odin {

/// Graph, vocabulary and token table for one run. Built from the data files
/// when configured, otherwise generated from the synth section.
struct Workspace {
  TextGraph graph;
  Vocab vocab;
  TokenTable tokens;
  std::vector<std::string> warnings;
};

Workspace load_workspace(const RunConfig& config);

/// Files inside a run's output directory.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.json"; }
  std::filesystem::path vocab() const { return dir / "vocab.txt"; }
  std::filesystem::path stats() const { return dir / "stats.json"; }
  std::filesystem::path checkpoint() const { return dir / "checkpoint.bin"; }
  std::filesystem::path finetuned() const { return dir / "finetuned.bin"; }
  std::filesystem::path pretrain_log() const { return dir / "pretrain_log.jsonl"; }
  std::filesystem::path report() const { return dir / "report.jsonl"; }
};

/// Writes nodes.jsonl, edges.txt and labels.jsonl under `out_dir`.
void cmd_synth(const SyntheticSpec& spec, const std::filesystem::path& out_dir);

/// Builds the vocabulary, writes vocab.txt and stats.json, returns the
/// stats JSON.
std::string cmd_ingest(const RunConfig& config);

struct PretrainOutcome {
  long steps_run = 0;
  long total_steps = 0;
  bool resumed = false;
  bool finished = false;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

/// Runs (or resumes) pretraining into the output directory. The checkpoint
/// stores parameters, optimizer state and the position reached; a
/// checkpoint with a different config digest or seed is refused.
PretrainOutcome cmd_pretrain(const RunConfig& config, std::ostream* progress = nullptr);

/// Loads the pretrained checkpoint, builds the task split with the task's
/// shot count, fine-tunes when `task.fine_tune` is set and evaluates.
/// Writes report.jsonl and returns the report.
EvalReport cmd_eval(const RunConfig& config);

/// cmd_eval with encoder fine-tuning forced on; also saves finetuned.bin.
EvalReport cmd_finetune(const RunConfig& config);

struct SweepRow {
  std::string schedule;
  std::string strategy;
  /// Per task: metric values over seeds.
  std::vector<std::vector<double>> values;
};

struct SweepTable {
  std::vector<std::string> tasks;
  std::vector<std::string> metrics;
  std::vector<SweepRow> rows;

  /// Fixed-width text table with mean ± std per cell.
  std::string render() const;
};

struct SweepGrid {
  std::vector<std::vector<int>> positions;
  std::vector<std::string> strategies;
  std::vector<std::string> tasks{"linkpred", "classify"};
  int seeds = 3;
};

/// Pretrains once per (positions, strategy, seed) under output_dir/sweep and
/// evaluates every task on that checkpoint.
SweepTable cmd_sweep(const RunConfig& config, const SweepGrid& grid, std::ostream* progress = nullptr);

struct TimingRow {
  std::string model;
  int depth = 0;
  int hops = 0;
  /// Nodes encoded for the first pretraining batch.
  std::size_t encoded_nodes = 0;
  /// Sum over layers of nodes pushed through that layer.
  std::size_t node_layer_updates = 0;
  long steps = 0;
  double wall_seconds = 0.0;
  /// Parameters, gradients, optimizer state and activations, in bytes.
  std::size_t memory_bytes = 0;

  std::string to_json_line() const;
  static TimingRow from_json_line(const std::string& line);
};

struct TimingReport {
  std::vector<TimingRow> rows;
  /// Encoded-node counts strictly increase down the row list.
  bool ordering_holds = false;
};

/// Times `steps` pretraining steps for each preset on the same data and
/// batches.
TimingReport cmd_timing(const RunConfig& config, const std::vector<std::string>& presets, long steps);

/// Runs the theory suite; writes the profile CSV when a path is given.
TheorySuiteResult cmd_theory(const TheorySuiteOptions& options, const std::filesystem::path& csv_path);

/// Pass/fail table of a theory suite run.
std::string render_theory_table(const TheorySuiteResult& result);

}  // namespace odin
