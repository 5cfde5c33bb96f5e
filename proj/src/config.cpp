#include "odin/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace odin {

using nlohmann::json;

namespace {

const char* const kTasks[] = {"linkpred", "classify", "retrieve", "rerank"};

bool known_task(std::string_view name) {
  for (const char* t : kTasks)
    if (name == t) return true;
  return false;
}

json to_json_object(const RunConfig& c) {
  json j;
  j["data"] = {{"nodes", c.data.nodes}, {"edges", c.data.edges}, {"labels", c.data.labels},
               {"min_freq", c.data.min_freq}};
  const auto& s = c.synth;
  j["synth"] = {{"n_nodes", s.n_nodes},
                {"n_classes", s.n_classes},
                {"n_coarse", s.n_coarse},
                {"homophily", s.homophily},
                {"vocab_size", s.vocab_size},
                {"class_vocab_fraction", s.class_vocab_fraction},
                {"words_per_node", s.words_per_node},
                {"signal", s.signal},
                {"avg_degree", s.avg_degree},
                {"ensure_connected", s.ensure_connected},
                {"label_name_words", s.label_name_words},
                {"seed", s.seed}};
  const auto& m = c.model;
  j["model"] = {{"preset", m.preset}, {"depth", m.depth},   {"tg_positions", m.tg_positions},
                {"strategy", m.strategy}, {"d", m.d},       {"heads", m.heads},
                {"ffn", m.ffn},           {"max_len", m.max_len}, {"tie_mlm", m.tie_mlm}};
  j["model"]["hops"] = m.hops ? json(*m.hops) : json(nullptr);
  j["fanouts"] = c.fanouts;
  const auto& p = c.pretrain;
  j["pretrain"] = {{"batch_size", p.batch_size},
                   {"epochs", p.epochs},
                   {"mask_ratio", p.mask_ratio},
                   {"optimizer", std::string(to_string(p.optimizer.kind))},
                   {"lr_encoder", p.optimizer.lr_encoder},
                   {"lr_gnn", p.optimizer.lr_gnn},
                   {"beta1", p.optimizer.beta1},
                   {"beta2", p.optimizer.beta2},
                   {"eps", p.optimizer.eps},
                   {"all_positives", p.all_positives},
                   {"hide_positive_edges", p.hide_positive_edges},
                   {"use_mnp", p.use_mnp},
                   {"use_nmlm", p.use_nmlm},
                   {"checkpoint_every", p.checkpoint_every},
                   {"max_steps", p.max_steps}};
  const auto& t = c.task;
  j["task"] = {{"name", t.name},
               {"shots", t.shots},
               {"label_kind", t.label_kind},
               {"fine_tune", t.fine_tune},
               {"epochs", t.epochs},
               {"batch_size", t.batch_size},
               {"lr_encoder", t.lr_encoder},
               {"lr_gnn", t.lr_gnn},
               {"optimizer", t.optimizer},
               {"head_epochs", t.head.epochs},
               {"head_lr", t.head.lr},
               {"head_weight_decay", t.head.weight_decay},
               {"linkpred_batch", t.linkpred_batch},
               {"test_edges", t.test_edges},
               {"retrieve_k", t.retrieve_k},
               {"candidates", t.candidates},
               {"hard_negatives", t.hard_negatives}};
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  return j;
}

void check_keys(const json& defaults, const json& given, const std::string& prefix) {
  if (!given.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (defaults.at(key).is_object()) check_keys(defaults.at(key), value, path);
  }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  const json& node = section ? j.at(section).at(key) : j.at(key);
  try {
    return node.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + (section ? std::string(section) + "." : "") + key +
                      "' has the wrong type");
  }
}

RunConfig from_json_object(const json& j) {
  RunConfig c;
  c.data.nodes = get<std::string>(j, "data", "nodes");
  c.data.edges = get<std::string>(j, "data", "edges");
  c.data.labels = get<std::string>(j, "data", "labels");
  c.data.min_freq = get<int>(j, "data", "min_freq");

  auto& s = c.synth;
  s.n_nodes = get<int>(j, "synth", "n_nodes");
  s.n_classes = get<int>(j, "synth", "n_classes");
  s.n_coarse = get<int>(j, "synth", "n_coarse");
  s.homophily = get<double>(j, "synth", "homophily");
  s.vocab_size = get<int>(j, "synth", "vocab_size");
  s.class_vocab_fraction = get<double>(j, "synth", "class_vocab_fraction");
  s.words_per_node = get<int>(j, "synth", "words_per_node");
  s.signal = get<double>(j, "synth", "signal");
  s.avg_degree = get<double>(j, "synth", "avg_degree");
  s.ensure_connected = get<bool>(j, "synth", "ensure_connected");
  s.label_name_words = get<int>(j, "synth", "label_name_words");
  s.seed = get<std::uint64_t>(j, "synth", "seed");

  auto& m = c.model;
  m.preset = get<std::string>(j, "model", "preset");
  m.depth = get<int>(j, "model", "depth");
  m.tg_positions = get<std::vector<int>>(j, "model", "tg_positions");
  m.strategy = get<std::string>(j, "model", "strategy");
  // A null in a merged file removes the key, so absent also means unset.
  if (!j.at("model").contains("hops") || j.at("model").at("hops").is_null()) {
    m.hops.reset();
  } else {
    m.hops = get<int>(j, "model", "hops");
  }
  m.d = get<int>(j, "model", "d");
  m.heads = get<int>(j, "model", "heads");
  m.ffn = get<int>(j, "model", "ffn");
  m.max_len = get<int>(j, "model", "max_len");
  m.tie_mlm = get<bool>(j, "model", "tie_mlm");

  c.fanouts = get<std::vector<int>>(j, nullptr, "fanouts");

  auto& p = c.pretrain;
  p.batch_size = get<int>(j, "pretrain", "batch_size");
  p.epochs = get<int>(j, "pretrain", "epochs");
  p.mask_ratio = get<double>(j, "pretrain", "mask_ratio");
  p.optimizer.kind = optimizer_from_string(get<std::string>(j, "pretrain", "optimizer"));
  p.optimizer.lr_encoder = get<double>(j, "pretrain", "lr_encoder");
  p.optimizer.lr_gnn = get<double>(j, "pretrain", "lr_gnn");
  p.optimizer.beta1 = get<double>(j, "pretrain", "beta1");
  p.optimizer.beta2 = get<double>(j, "pretrain", "beta2");
  p.optimizer.eps = get<double>(j, "pretrain", "eps");
  p.all_positives = get<bool>(j, "pretrain", "all_positives");
  p.hide_positive_edges = get<bool>(j, "pretrain", "hide_positive_edges");
  p.use_mnp = get<bool>(j, "pretrain", "use_mnp");
  p.use_nmlm = get<bool>(j, "pretrain", "use_nmlm");
  p.checkpoint_every = get<long>(j, "pretrain", "checkpoint_every");
  p.max_steps = get<long>(j, "pretrain", "max_steps");

  auto& t = c.task;
  t.name = get<std::string>(j, "task", "name");
  t.shots = get<int>(j, "task", "shots");
  t.label_kind = get<std::string>(j, "task", "label_kind");
  t.fine_tune = get<bool>(j, "task", "fine_tune");
  t.epochs = get<int>(j, "task", "epochs");
  t.batch_size = get<int>(j, "task", "batch_size");
  t.lr_encoder = get<double>(j, "task", "lr_encoder");
  t.lr_gnn = get<double>(j, "task", "lr_gnn");
  t.optimizer = get<std::string>(j, "task", "optimizer");
  t.head.epochs = get<int>(j, "task", "head_epochs");
  t.head.lr = get<double>(j, "task", "head_lr");
  t.head.weight_decay = get<double>(j, "task", "head_weight_decay");
  t.linkpred_batch = get<int>(j, "task", "linkpred_batch");
  t.test_edges = get<int>(j, "task", "test_edges");
  t.retrieve_k = get<int>(j, "task", "retrieve_k");
  t.candidates = get<int>(j, "task", "candidates");
  t.hard_negatives = get<int>(j, "task", "hard_negatives");

  c.output_dir = get<std::string>(j, nullptr, "output_dir");
  c.seed = get<std::uint64_t>(j, nullptr, "seed");
  return c;
}

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + what + ": " + e.what());
  }
}

}  // namespace

LayerSchedule RunConfig::schedule() const {
  if (!model.preset.empty()) return schedule_preset(model.preset);
  return make_schedule(model.depth, model.tg_positions, strategy_from_string(model.strategy), model.hops);
}

ModelDims RunConfig::dims(int vocab_size) const {
  const auto sched = schedule();
  ModelDims d;
  d.vocab_size = vocab_size;
  d.d = model.d;
  d.heads = model.heads;
  d.ffn = model.ffn;
  d.max_len = model.max_len;
  d.depth = sched.depth;
  d.graph_stages = static_cast<int>(sched.tg_positions.size());
  d.tie_mlm = model.tie_mlm;
  return d;
}

void RunConfig::validate() const {
  synth.validate();
  const auto sched = schedule();
  dims(4).validate();
  if (fanouts.empty()) throw ConfigError("fanouts must hold at least one value");
  for (int f : fanouts)
    if (f < 1) throw ConfigError("fanouts must be >= 1");
  if (fanouts.size() != 1 && static_cast<int>(fanouts.size()) != sched.hop_count())
    throw ConfigError("fanouts lists " + std::to_string(fanouts.size()) + " hops but the schedule samples " +
                      std::to_string(sched.hop_count()));
  if (data.min_freq < 1) throw ConfigError("data.min_freq must be >= 1");
  if (pretrain.batch_size < 2) throw ConfigError("pretrain.batch_size must be >= 2");
  if (pretrain.epochs < 0) throw ConfigError("pretrain.epochs must be >= 0");
  if (!(pretrain.mask_ratio > 0.0 && pretrain.mask_ratio < 1.0))
    throw ConfigError("pretrain.mask_ratio must lie in (0, 1)");
  if (pretrain.optimizer.lr_encoder < 0.0 || pretrain.optimizer.lr_gnn < 0.0)
    throw ConfigError("learning rates must be >= 0");
  if (pretrain.checkpoint_every < 0 || pretrain.max_steps < 0)
    throw ConfigError("pretrain.checkpoint_every and pretrain.max_steps must be >= 0");
  if (!known_task(task.name)) throw ConfigError("unknown task '" + task.name + "'");
  label_kind_from_string(task.label_kind);
  optimizer_from_string(task.optimizer);
  if (task.shots < 0) throw ConfigError("task.shots must be >= 0");
  if (task.epochs < 0 || task.batch_size < 2 || task.linkpred_batch < 2 || task.test_edges < 2)
    throw ConfigError("task epochs, batch sizes and test_edges are out of range");
  if (task.retrieve_k < 1 || task.candidates < 1 || task.hard_negatives < 0)
    throw ConfigError("task retrieve_k and candidates must be >= 1, hard_negatives >= 0");
  if (task.head.epochs < 1 || task.head.lr <= 0.0 || task.head.weight_decay < 0.0)
    throw ConfigError("task head settings are out of range");
  if (!data.nodes.empty() || !data.edges.empty()) {
    if (data.nodes.empty() || data.edges.empty())
      throw ConfigError("data.nodes and data.edges must be given together");
    for (const auto& p : {data.nodes, data.edges})
      if (!std::filesystem::exists(p)) throw ConfigError("data file not found: " + p);
  }
  if (!data.labels.empty() && !std::filesystem::exists(data.labels))
    throw ConfigError("label file not found: " + data.labels);
}

std::string RunConfig::to_json() const { return to_json_object(*this).dump(2) + "\n"; }

RunConfig RunConfig::from_json(std::string_view text) {
  json merged = to_json_object(RunConfig{});
  const json given = parse_json(text, "config");
  check_keys(merged, given, "");
  merged.merge_patch(given);
  return from_json_object(merged);
}

std::string RunConfig::digest() const {
  json j = to_json_object(*this);
  j.erase("seed");
  j.erase("output_dir");
  return hex64(fnv1a(j.dump()));
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return RunConfig::from_json(ss.str());
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' must look like key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json j = to_json_object(config);
  json* node = &j;
  std::stringstream path(key);
  std::string part;
  while (std::getline(path, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
  }
  if (node->is_object()) throw ConfigError("config key '" + key + "' names a section, not a value");
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  *node = value;
  config = from_json_object(j);
}

int default_shots(std::string_view task) {
  if (task == "linkpred") return 32;
  if (task == "classify") return 8;
  if (task == "retrieve") return 16;
  if (task == "rerank") return 32;
  throw ConfigError("unknown task '" + std::string(task) + "'");
}

}  // namespace odin
