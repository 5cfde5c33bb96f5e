#include "odin/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "odin/sampler.hpp"
#include "odin/synth.hpp"

namespace odin {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string fixed(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

/// Digest of everything that shapes the pretrained weights.
std::string pretrain_digest(const RunConfig& config) {
  json j = json::parse(config.to_json());
  j.erase("task");
  j.erase("output_dir");
  // Stopping and saving points do not change the weights of a given step.
  j["pretrain"].erase("max_steps");
  j["pretrain"].erase("checkpoint_every");
  j.erase("seed");
  return hex64(fnv1a(j.dump()));
}

PretrainHyper hyper_of(const RunConfig& config) {
  PretrainHyper h;
  h.fanouts = config.fanouts;
  h.mask_ratio = config.pretrain.mask_ratio;
  h.all_positives = config.pretrain.all_positives;
  h.hide_positive_edges = config.pretrain.hide_positive_edges;
  h.use_mnp = config.pretrain.use_mnp;
  h.use_nmlm = config.pretrain.use_nmlm;
  return h;
}

std::uint64_t init_seed(const RunConfig& config) { return mix_seed({config.seed, 0x1417ULL}); }

struct ResumeState {
  long step = 0;
  int epoch = 0;
  std::size_t batch = 0;
  bool finished = false;
};

ordered_json checkpoint_metadata(const RunConfig& config, const ResumeState& at) {
  ordered_json m;
  m["format"] = "odin-pretrain";
  m["digest"] = pretrain_digest(config);
  m["seed"] = config.seed;
  m["step"] = at.step;
  m["epoch"] = at.epoch;
  m["batch"] = at.batch;
  m["finished"] = at.finished;
  return m;
}

void save_state(const RunPaths& paths, const RunConfig& config, const ParamSet& params,
                const Optimizer& optimizer, const ResumeState& at) {
  Checkpoint ckpt{params, checkpoint_metadata(config, at).dump(), optimizer.state()};
  const fs::path tmp = paths.checkpoint().string() + ".tmp";
  save_checkpoint(tmp, ckpt);
  fs::rename(tmp, paths.checkpoint());
}

/// Keeps the log lines of steps before `step` (a resumed run rewrites the
/// rest).
void truncate_log(const fs::path& log, long step) {
  std::ifstream in(log);
  std::string kept, line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (json::parse(line).at("step").get<long>() >= step) break;
    kept += line + "\n";
  }
  in.close();
  write_text(log, kept);
}

struct LoadedModel {
  ParamSet params;
  LayerSchedule schedule;
};

LoadedModel load_pretrained(const RunConfig& config, const Workspace& ws) {
  const RunPaths paths{config.output_dir};
  if (!fs::exists(paths.checkpoint()))
    throw DataError("no checkpoint in " + paths.dir.string() + "; run pretrain first");
  Checkpoint ckpt = load_checkpoint(paths.checkpoint());
  const json meta = json::parse(ckpt.metadata_json);
  if (meta.value("digest", std::string{}) != pretrain_digest(config))
    throw ConfigError("checkpoint was trained under a different data/model/pretrain config");
  if (!(ckpt.params.dims == config.dims(ws.vocab.size())))
    throw DataError("checkpoint shapes do not match the configured model");
  return {std::move(ckpt.params), config.schedule()};
}

FinetuneSettings finetune_settings(const RunConfig& config) {
  FinetuneSettings s;
  s.epochs = config.task.epochs;
  s.batch_size = config.task.batch_size;
  s.optimizer.kind = optimizer_from_string(config.task.optimizer);
  s.optimizer.lr_encoder = config.task.lr_encoder;
  s.optimizer.lr_gnn = config.task.lr_gnn;
  s.fanouts = config.fanouts;
  s.seed = mix_seed({config.seed, 0xF17EULL});
  return s;
}

EncodeSettings encode_settings(const RunConfig& config) {
  EncodeSettings s;
  s.fanouts = config.fanouts;
  s.seed = mix_seed({config.seed, 0xE7C0DEULL});
  return s;
}

int num_classes(const std::vector<int>& labels) {
  int top = -1;
  for (int y : labels) top = std::max(top, y);
  return top + 1;
}

/// Up to `count` labels ranked by BM25 against the text, gold excluded,
/// ties to the smaller label id.
std::vector<int> bm25_negatives(const std::vector<std::string>& words,
                                const std::map<int, std::vector<std::string>>& label_words, int gold,
                                int count) {
  std::vector<int> ids;
  std::vector<std::vector<std::string>> docs;
  for (const auto& [label, toks] : label_words) {
    ids.push_back(label);
    docs.push_back(toks);
  }
  const auto scores = bm25_scores(words, docs);
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<int> out;
  for (std::size_t i : order) {
    if (static_cast<int>(out.size()) >= count) break;
    if (ids[i] != gold) out.push_back(ids[i]);
  }
  return out;
}

EvalReport evaluate(const RunConfig& config, const Workspace& ws, LoadedModel& model, bool fine_tune) {
  const auto& task = config.task;
  const auto& graph = ws.graph;
  const int shots = task.shots > 0 ? task.shots : default_shots(task.name);
  const FinetuneSettings ft = finetune_settings(config);
  const EncodeSettings enc = encode_settings(config);
  EvalReport report;
  std::vector<std::string> warnings = ws.warnings;

  if (task.name == "classify") {
    const LabelKind kind = label_kind_from_string(task.label_kind);
    if (!graph.has_labels(kind)) throw DataError("graph has no " + task.label_kind + " labels");
    const auto& labels = graph.labels(kind);
    const TaskSplit split = make_few_shot_split(graph, shots, kind, config.seed);
    warnings.insert(warnings.end(), split.warnings.begin(), split.warnings.end());
    if (fine_tune) {
      const LinearHead head = finetune_classifier(graph, ws.tokens, model.params, model.schedule, split, labels,
                                                  num_classes(labels), ft, task.head);
      const auto embs = encode_nodes(graph, ws.tokens, model.params, model.schedule, split.test_ids, enc);
      if (split.test_ids.empty()) throw DataError("classification split has no test nodes");
      std::size_t hits = 0;
      for (NodeId v : split.test_ids) hits += head.predict(embs.at(v)) == labels[static_cast<std::size_t>(v)];
      report.task = "classify";
      report.metric = "ACC";
      report.count = split.test_ids.size();
      report.value = static_cast<double>(hits) / static_cast<double>(report.count);
    } else {
      std::vector<NodeId> nodes = split.train_ids;
      nodes.insert(nodes.end(), split.test_ids.begin(), split.test_ids.end());
      const auto embs = encode_nodes(graph, ws.tokens, model.params, model.schedule, nodes, enc);
      report = classify_train_eval(embs, split, labels, task.head, config.seed);
    }
  } else if (task.name == "linkpred") {
    const EdgeSplit split = make_edge_split(graph, shots, task.test_edges, config.seed);
    if (fine_tune) finetune_linkpred(graph, ws.tokens, model.params, model.schedule, split.train, ft);
    std::vector<NodeId> nodes;
    for (const auto& e : split.test) {
      nodes.push_back(e.first);
      nodes.push_back(e.second);
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    const auto embs = encode_nodes(graph, ws.tokens, model.params, model.schedule, nodes, enc);
    report = linkpred_eval_batched(embs, split.test, task.linkpred_batch);
  } else if (task.name == "retrieve" || task.name == "rerank") {
    if (!graph.has_labels(LabelKind::Fine) || graph.label_names().empty())
      throw DataError(task.name + " needs fine labels with label names");
    const auto& fine = graph.fine_labels();
    std::map<int, std::vector<int>> label_tokens;
    std::map<int, std::vector<std::string>> label_words;
    for (const auto& [label, name] : graph.label_names()) {
      label_tokens[label] = tokenize(name, ws.vocab, config.model.max_len);
      label_words[label] = split_words(name);
    }
    const TaskSplit split = make_few_shot_split(graph, shots, LabelKind::Fine, config.seed);
    warnings.insert(warnings.end(), split.warnings.begin(), split.warnings.end());
    if (fine_tune) {
      std::map<NodeId, int> gold_train;
      std::map<NodeId, std::vector<int>> hard;
      for (NodeId v : split.train_ids) {
        const int y = fine[static_cast<std::size_t>(v)];
        if (!label_tokens.contains(y)) continue;
        gold_train[v] = y;
        hard[v] = bm25_negatives(split_words(graph.text(v)), label_words, y, task.hard_negatives);
      }
      finetune_retrieval(graph, ws.tokens, model.params, model.schedule, label_tokens, gold_train, hard, ft);
    }
    std::vector<std::vector<int>> sequences;
    std::vector<int> label_ids;
    for (const auto& [label, toks] : label_tokens) {
      label_ids.push_back(label);
      sequences.push_back(toks);
    }
    const auto encoded = encode_texts(sequences, model.params, model.schedule);
    std::map<int, Vector> label_embs;
    for (std::size_t i = 0; i < label_ids.size(); ++i) label_embs[label_ids[i]] = encoded[i];
    const auto node_embs = encode_nodes(graph, ws.tokens, model.params, model.schedule, split.test_ids, enc);
    std::map<NodeId, int> gold;
    for (NodeId v : split.test_ids) gold[v] = fine[static_cast<std::size_t>(v)];
    if (task.name == "retrieve") {
      report = retrieval_eval(node_embs, label_embs, gold, task.retrieve_k);
    } else {
      std::map<NodeId, std::vector<int>> candidates;
      for (NodeId v : split.test_ids)
        candidates[v] = retrieve_candidates(split_words(graph.text(v)), label_words, task.candidates);
      report = rerank_eval(candidates, node_embs, label_embs, gold);
    }
  } else {
    throw ConfigError("unknown task '" + task.name + "' (linkpred, classify, retrieve, rerank)");
  }
  report.seed = config.seed;
  report.config_digest = config.digest();
  warnings.insert(warnings.end(), report.warnings.begin(), report.warnings.end());
  report.warnings = warnings;
  return report;
}

RunConfig sweep_config(const RunConfig& base, const std::vector<int>& positions, const std::string& strategy,
                       int seed_index) {
  RunConfig c = base;
  c.model.preset.clear();
  c.model.tg_positions = positions;
  c.model.strategy = positions.empty() ? "VA" : strategy;
  c.model.hops.reset();
  const int hops = static_cast<int>(positions.size());
  if (c.fanouts.size() > 1 && static_cast<int>(c.fanouts.size()) != hops) c.fanouts = {c.fanouts.front()};
  c.seed = base.seed + static_cast<std::uint64_t>(seed_index);
  std::string tag = "S";
  for (std::size_t i = 0; i < positions.size(); ++i) tag += (i ? "-" : "") + std::to_string(positions[i]);
  if (positions.empty()) tag += "none";
  tag += "_" + c.model.strategy;
  c.output_dir = (fs::path(base.output_dir) / "sweep" / tag / ("seed" + std::to_string(seed_index))).string();
  return c;
}

std::string positions_text(const std::vector<int>& positions) {
  std::string s = "[";
  for (std::size_t i = 0; i < positions.size(); ++i) s += (i ? "," : "") + std::to_string(positions[i]);
  return s + "]";
}

}  // namespace

Workspace load_workspace(const RunConfig& config) {
  Workspace ws;
  if (config.data.nodes.empty()) {
    ws.graph = generate_synthetic(config.synth);
  } else {
    auto loaded = load_graph(config.data.nodes, config.data.edges, config.data.labels);
    ws.graph = std::move(loaded.graph);
    if (loaded.report.dropped_self_loops > 0)
      ws.warnings.push_back("dropped " + std::to_string(loaded.report.dropped_self_loops) + " self-loops");
    if (loaded.report.dropped_duplicates > 0)
      ws.warnings.push_back("dropped " + std::to_string(loaded.report.dropped_duplicates) + " duplicate edges");
  }
  ws.vocab = build_vocab(ws.graph.texts(), config.data.min_freq);
  ws.tokens = tokenize_graph(ws.graph, ws.vocab, config.model.max_len);
  return ws;
}

void cmd_synth(const SyntheticSpec& spec, const fs::path& out_dir) {
  const TextGraph graph = generate_synthetic(spec);
  fs::create_directories(out_dir);
  save_graph(graph, out_dir / "nodes.jsonl", out_dir / "edges.txt", out_dir / "labels.jsonl");
}

std::string cmd_ingest(const RunConfig& config) {
  config.validate();
  const Workspace ws = load_workspace(config);
  const RunPaths paths{config.output_dir};
  fs::create_directories(paths.dir);
  ws.vocab.save(paths.vocab());
  std::size_t truncated = 0, tokens = 0;
  for (std::size_t v = 0; v < ws.graph.num_nodes(); ++v) {
    tokens += ws.tokens[v].size() - 1;
    truncated += split_words(ws.graph.text(static_cast<NodeId>(v))).size() + 1 >
                 static_cast<std::size_t>(config.model.max_len);
  }
  ordered_json s;
  s["nodes"] = ws.graph.num_nodes();
  s["edges"] = ws.graph.num_edges();
  s["max_degree"] = ws.graph.max_degree();
  s["connected"] = ws.graph.is_connected();
  s["vocab_size"] = ws.vocab.size();
  s["tokens"] = tokens;
  s["truncated_texts"] = truncated;
  s["fine_labels"] = ws.graph.has_labels(LabelKind::Fine);
  s["coarse_labels"] = ws.graph.has_labels(LabelKind::Coarse);
  s["label_names"] = ws.graph.label_names().size();
  s["warnings"] = ws.warnings;
  const std::string text = s.dump(2) + "\n";
  write_text(paths.stats(), text);
  return text;
}

PretrainOutcome cmd_pretrain(const RunConfig& config, std::ostream* progress) {
  config.validate();
  const Workspace ws = load_workspace(config);
  const RunPaths paths{config.output_dir};
  fs::create_directories(paths.dir);
  write_text(paths.config(), config.to_json());
  ws.vocab.save(paths.vocab());

  const LayerSchedule schedule = config.schedule();
  const ModelDims dims = config.dims(ws.vocab.size());
  const PretrainHyper hyper = hyper_of(config);
  ParamSet params = ParamSet::init(dims, init_seed(config));
  Optimizer optimizer(params, config.pretrain.optimizer);
  ResumeState at;
  PretrainOutcome outcome;

  if (fs::exists(paths.checkpoint())) {
    Checkpoint ckpt = load_checkpoint(paths.checkpoint());
    const json meta = json::parse(ckpt.metadata_json);
    if (meta.value("digest", std::string{}) != pretrain_digest(config) ||
        meta.value("seed", std::uint64_t{0}) != config.seed)
      throw ConfigError("checkpoint in " + paths.dir.string() +
                        " belongs to a different config or seed; use a fresh output_dir");
    if (!(ckpt.params.dims == dims)) throw DataError("checkpoint shapes do not match the configured model");
    params = std::move(ckpt.params);
    optimizer.restore(ckpt.extra);
    at.step = meta.at("step").get<long>();
    at.epoch = meta.at("epoch").get<int>();
    at.batch = meta.at("batch").get<std::size_t>();
    at.finished = meta.at("finished").get<bool>();
    outcome.resumed = true;
    truncate_log(paths.pretrain_log(), at.step);
  } else {
    write_text(paths.pretrain_log(), "");
  }

  const TaskSplit split = make_pretrain_split(ws.graph, config.seed);
  std::ofstream log(paths.pretrain_log(), std::ios::app);
  bool any = false;
  bool stopped = false;
  while (!at.finished && !stopped) {
    if (at.epoch >= config.pretrain.epochs) {
      at.finished = true;
      break;
    }
    const auto batches = make_pretrain_batches(ws.graph, split.train_ids, config.pretrain.batch_size,
                                               config.seed, at.epoch);
    for (; at.batch < batches.size(); ++at.batch) {
      if (config.pretrain.max_steps > 0 && at.step >= config.pretrain.max_steps) {
        stopped = true;
        break;
      }
      const StepRecord rec = pretrain_step(ws.graph, ws.tokens, batches[at.batch], params, schedule, optimizer,
                                           hyper, mix_seed({config.seed, static_cast<std::uint64_t>(at.step)}),
                                           at.step);
      ordered_json line;
      line["step"] = rec.step;
      line["epoch"] = at.epoch;
      line["l1"] = rec.loss.l1;
      line["l2"] = rec.loss.l2;
      line["total"] = rec.loss.total;
      line["wall_ms"] = std::round(rec.wall_ms * 1000.0) / 1000.0;
      log << line.dump() << "\n";
      if (!any) outcome.first_loss = rec.loss.total;
      any = true;
      outcome.last_loss = rec.loss.total;
      ++outcome.steps_run;
      ++at.step;
      if (config.pretrain.checkpoint_every > 0 && at.step % config.pretrain.checkpoint_every == 0) {
        ResumeState next = at;
        ++next.batch;
        log.flush();
        save_state(paths, config, params, optimizer, next);
      }
    }
    if (stopped) break;
    if (progress)
      *progress << "epoch " << at.epoch + 1 << "/" << config.pretrain.epochs << " steps " << at.step
                << " loss " << fixed(outcome.last_loss) << "\n";
    ++at.epoch;
    at.batch = 0;
    if (at.epoch >= config.pretrain.epochs) at.finished = true;
    log.flush();
    save_state(paths, config, params, optimizer, at);
  }
  log.flush();
  save_state(paths, config, params, optimizer, at);
  outcome.total_steps = at.step;
  outcome.finished = at.finished;
  return outcome;
}

EvalReport cmd_eval(const RunConfig& config) {
  config.validate();
  const Workspace ws = load_workspace(config);
  LoadedModel model = load_pretrained(config, ws);
  const EvalReport report = evaluate(config, ws, model, config.task.fine_tune);
  write_text(RunPaths{config.output_dir}.report(), report.to_json_line() + "\n");
  return report;
}

EvalReport cmd_finetune(const RunConfig& config) {
  config.validate();
  const Workspace ws = load_workspace(config);
  LoadedModel model = load_pretrained(config, ws);
  const EvalReport report = evaluate(config, ws, model, true);
  const RunPaths paths{config.output_dir};
  ordered_json meta;
  meta["format"] = "odin-finetuned";
  meta["digest"] = config.digest();
  meta["seed"] = config.seed;
  meta["task"] = config.task.name;
  save_checkpoint(paths.finetuned(), Checkpoint{model.params, meta.dump(), {}});
  write_text(paths.report(), report.to_json_line() + "\n");
  return report;
}

std::string SweepTable::render() const {
  std::vector<std::string> header{"schedule", "strategy"};
  for (std::size_t t = 0; t < tasks.size(); ++t) header.push_back(tasks[t] + " " + metrics[t]);
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& row : rows) {
    std::vector<std::string> line{row.schedule, row.strategy};
    for (const auto& vals : row.values) {
      double mean = 0.0, var = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      for (double v : vals) var += (v - mean) * (v - mean);
      const double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
      line.push_back(fixed(mean) + " ± " + fixed(sd));
    }
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  // "±" is two bytes but one column.
  auto columns = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
  };
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], columns(line[i]));
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      out += cells[r][i];
      if (i + 1 < cells[r].size()) out += std::string(width[i] - columns(cells[r][i]) + 2, ' ');
    }
    out += "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out += std::string(total - 2, '-') + "\n";
    }
  }
  return out;
}

SweepTable cmd_sweep(const RunConfig& config, const SweepGrid& grid, std::ostream* progress) {
  if (grid.positions.empty() || grid.strategies.empty() || grid.tasks.empty() || grid.seeds < 1)
    throw ConfigError("sweep grid needs schedules, strategies, tasks and at least one seed");
  for (const auto& t : grid.tasks) default_shots(t);
  SweepTable table;
  table.tasks = grid.tasks;
  table.metrics.assign(grid.tasks.size(), "");
  std::string records;
  for (const auto& positions : grid.positions) {
    for (const auto& strategy : grid.strategies) {
      // Without TG layers the strategy is moot; one VA row covers it.
      if (positions.empty() && &strategy != &grid.strategies.front()) continue;
      SweepRow row;
      row.schedule = positions_text(positions);
      row.strategy = positions.empty() ? "VA" : strategy;
      row.values.assign(grid.tasks.size(), {});
      for (int s = 0; s < grid.seeds; ++s) {
        RunConfig run = sweep_config(config, positions, strategy, s);
        run.validate();
        if (progress) *progress << "pretrain " << row.schedule << " " << row.strategy << " seed " << s << "\n";
        cmd_pretrain(run);
        const Workspace ws = load_workspace(run);
        for (std::size_t t = 0; t < grid.tasks.size(); ++t) {
          RunConfig task_run = run;
          task_run.task.name = grid.tasks[t];
          LoadedModel model = load_pretrained(task_run, ws);
          const EvalReport r = evaluate(task_run, ws, model, task_run.task.fine_tune);
          table.metrics[t] = r.metric;
          row.values[t].push_back(r.value);
          records += r.to_json_line() + "\n";
        }
      }
      table.rows.push_back(std::move(row));
    }
  }
  const fs::path dir = config.output_dir;
  write_text(dir / "sweep.jsonl", records);
  write_text(dir / "sweep_table.txt", table.render());
  return table;
}

std::string TimingRow::to_json_line() const {
  ordered_json j;
  j["model"] = model;
  j["depth"] = depth;
  j["hops"] = hops;
  j["encoded_nodes"] = encoded_nodes;
  j["node_layer_updates"] = node_layer_updates;
  j["steps"] = steps;
  j["wall_seconds"] = wall_seconds;
  j["memory_bytes"] = memory_bytes;
  return j.dump();
}

TimingRow TimingRow::from_json_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    TimingRow r;
    r.model = j.at("model").get<std::string>();
    r.depth = j.at("depth").get<int>();
    r.hops = j.at("hops").get<int>();
    r.encoded_nodes = j.at("encoded_nodes").get<std::size_t>();
    r.node_layer_updates = j.at("node_layer_updates").get<std::size_t>();
    r.steps = j.at("steps").get<long>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.memory_bytes = j.at("memory_bytes").get<std::size_t>();
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("bad timing record: ") + e.what());
  }
}

TimingReport cmd_timing(const RunConfig& config, const std::vector<std::string>& presets, long steps) {
  if (presets.empty()) throw ConfigError("timing needs at least one model preset");
  if (steps < 0) throw ConfigError("timing steps must be >= 0");
  const Workspace ws = load_workspace(config);
  const TaskSplit split = make_pretrain_split(ws.graph, config.seed);
  const auto batches = make_pretrain_batches(ws.graph, split.train_ids, config.pretrain.batch_size, config.seed, 0);
  TimingReport report;
  std::string lines;
  for (const auto& preset : presets) {
    RunConfig run = config;
    run.model.preset = preset;
    if (run.fanouts.size() > 1 && static_cast<int>(run.fanouts.size()) != run.schedule().hop_count())
      run.fanouts = {run.fanouts.front()};
    const LayerSchedule schedule = run.schedule();
    const ModelDims dims = run.dims(ws.vocab.size());
    ParamSet params = ParamSet::init(dims, init_seed(run));

    TimingRow row;
    row.model = preset;
    row.depth = schedule.depth;
    row.hops = schedule.hop_count();
    const auto fanouts = resolve_fanouts(run.fanouts, schedule.hop_count());
    const auto sub = sample_frontiers(ws.graph, batches.front(), schedule.hop_count(), fanouts,
                                      mix_seed({run.seed, 0ULL}));
    std::map<NodeId, std::vector<int>> toks;
    for (NodeId v : sub.all_nodes()) toks[v] = ws.tokens[static_cast<std::size_t>(v)];
    const ForwardResult fwd = odin_forward(sub, embed_nodes(toks, params), params, schedule);
    row.encoded_nodes = fwd.encoded_nodes();
    row.node_layer_updates = fwd.node_layer_updates();

    const std::size_t copies = run.pretrain.optimizer.kind == OptimizerKind::Adam ? 4 : 2;
    const std::size_t per_token =
        static_cast<std::size_t>(10 * dims.d + 2 * dims.ffn + dims.heads * dims.max_len);
    row.memory_bytes = sizeof(double) * (copies * params.count() + row.node_layer_updates *
                                                                       static_cast<std::size_t>(dims.max_len) *
                                                                       per_token);

    Optimizer optimizer(params, run.pretrain.optimizer);
    const PretrainHyper hyper = hyper_of(run);
    const auto start = std::chrono::steady_clock::now();
    for (long s = 0; s < steps; ++s) {
      const auto& batch = batches[static_cast<std::size_t>(s) % batches.size()];
      pretrain_step(ws.graph, ws.tokens, batch, params, schedule, optimizer, hyper,
                    mix_seed({run.seed, static_cast<std::uint64_t>(s)}), s);
    }
    row.steps = steps;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    lines += row.to_json_line() + "\n";
    report.rows.push_back(row);
  }
  report.ordering_holds = true;
  for (std::size_t i = 1; i < report.rows.size(); ++i)
    report.ordering_holds = report.ordering_holds && report.rows[i - 1].encoded_nodes < report.rows[i].encoded_nodes;
  write_text(fs::path(config.output_dir) / "timing.jsonl", lines);
  return report;
}

TheorySuiteResult cmd_theory(const TheorySuiteOptions& options, const fs::path& csv_path) {
  TheorySuiteResult result = run_theory_suite(options);
  if (!csv_path.empty()) write_text(csv_path, profiles_to_csv(result.profiles));
  return result;
}

std::string render_theory_table(const TheorySuiteResult& result) {
  std::size_t name_w = 5;
  for (const auto& c : result.checks) name_w = std::max(name_w, c.name.size());
  std::ostringstream out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-*s  %-12s  %-12s  %-6s  %s\n", static_cast<int>(name_w), "check", "value",
                "threshold", "result", "detail");
  out << buf;
  for (const auto& c : result.checks) {
    std::snprintf(buf, sizeof buf, "%-*s  %-12.4e  %s %-10.3g  %-6s  %s\n", static_cast<int>(name_w),
                  c.name.c_str(), c.value, c.comparison.c_str(), c.threshold, c.passed ? "PASS" : "FAIL",
                  c.detail.c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace odin
