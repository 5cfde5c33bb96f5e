#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "odin/commands.hpp"
#include "odin/config.hpp"

namespace {

using namespace odin;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string fanout;
  int hops = -1;
  long long seed = -1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", c.overrides, "Override a config value, e.g. --set pretrain.epochs=2");
  cmd->add_option("-o,--out", c.out, "Output directory (output_dir)");
  cmd->add_option("--fanout", c.fanout, "Fanout, one value or a comma list per hop");
  cmd->add_option("--hops", c.hops, "Number of sampled hops (defaults to the TG layer count)");
  cmd->add_option("--seed", c.seed, "Run seed");
}

std::vector<int> int_list(const std::string& text, char sep = ',') {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (item.empty()) continue;
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("expected an integer list, got '" + text + "'");
    }
  }
  return out;
}

std::vector<std::string> str_list(const std::string& text, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : load_config(c.config_path);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (!c.fanout.empty()) cfg.fanouts = int_list(c.fanout);
  if (c.hops >= 0) cfg.model.hops = c.hops;
  if (c.seed >= 0) cfg.seed = static_cast<std::uint64_t>(c.seed);
  return cfg;
}

std::string dataset_name(const RunConfig& cfg) {
  if (cfg.data.nodes.empty()) return "synthetic";
  return std::filesystem::path(cfg.data.nodes).parent_path().filename().string();
}

void print_report(const RunConfig& cfg, const EvalReport& r) {
  std::printf("%-28s %-12s %-10s %-10s %s\n", "model", "dataset", "task", "metric", "value");
  std::printf("%-28s %-12s %-10s %-10s %.4f\n", cfg.schedule().describe().c_str(), dataset_name(cfg).c_str(),
              r.task.c_str(), r.metric.c_str(), r.value);
  if (r.gold_absent > 0) std::printf("gold label absent from candidates: %zu\n", r.gold_absent);
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer-scheduled text-graph encoder: data, pretraining, evaluation and checks"};
  app.require_subcommand(1);

  Common synth_c, ingest_c, pre_c, ft_c, eval_c, sweep_c, timing_c;
  std::string task;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic text-attributed graph");
  add_common(synth, synth_c);

  auto* ingest = app.add_subcommand("ingest", "Build the vocabulary and print dataset statistics");
  add_common(ingest, ingest_c);

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain (or resume) into the output directory");
  add_common(pretrain, pre_c);

  auto* finetune = app.add_subcommand("finetune", "Fine-tune the pretrained encoder on a task and evaluate");
  add_common(finetune, ft_c);
  finetune->add_option("-t,--task", task, "linkpred | classify | retrieve | rerank");

  auto* eval = app.add_subcommand("eval", "Evaluate the pretrained encoder on a task");
  add_common(eval, eval_c);
  eval->add_option("-t,--task", task, "linkpred | classify | retrieve | rerank");

  auto* sweep = app.add_subcommand("sweep", "Schedule x strategy ablation grid");
  add_common(sweep, sweep_c);
  std::string sweep_schedules = "1,6,11;3,6,9", sweep_strategies = "PG,ME,VA", sweep_tasks = "linkpred,classify";
  int sweep_seeds = 3;
  sweep->add_option("--schedules", sweep_schedules, "TG position lists separated by ';' (none: text only)")
      ->capture_default_str();
  sweep->add_option("--strategies", sweep_strategies, "Comma list of VA, ME, PE, PG")->capture_default_str();
  sweep->add_option("--tasks", sweep_tasks, "Comma list of tasks")->capture_default_str();
  sweep->add_option("--seeds", sweep_seeds, "Seeds per cell")->capture_default_str();

  auto* theory = app.add_subcommand("theory", "Run the reduction, separation and over-smoothing checks");
  TheorySuiteOptions topts;
  std::string csv_path = "smoothing_profile.csv";
  long long theory_seed = 0;
  theory->add_option("--csv", csv_path, "Where to write the smoothing profile CSV ('' to skip)")
      ->capture_default_str();
  theory->add_option("--seed", theory_seed, "Base seed")->capture_default_str();
  theory->add_option("--seeds", topts.seeds, "Seeds for reduction and over-smoothing checks")
      ->capture_default_str();
  theory->add_option("--separation-seeds", topts.separation_seeds, "Seeds for separation checks")
      ->capture_default_str();

  auto* timing = app.add_subcommand("timing", "Compare encoded-node counts and pretraining time of presets");
  add_common(timing, timing_c);
  std::string timing_presets = "light-2,light-2;4,odin";
  long timing_steps = 5;
  timing->add_option("--presets", timing_presets,
                     "Presets separated by ',' (write light-2,4 as light-2;4)")
      ->capture_default_str();
  timing->add_option("--steps", timing_steps, "Pretraining steps to time per preset")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const RunConfig cfg = resolve(synth_c);
      cfg.synth.validate();
      const std::filesystem::path out = synth_c.out.empty() ? std::string("data/synthetic") : synth_c.out;
      cmd_synth(cfg.synth, out);
      std::printf("wrote %s/{nodes.jsonl,edges.txt,labels.jsonl}\n", out.string().c_str());
    } else if (*ingest) {
      std::cout << cmd_ingest(resolve(ingest_c));
    } else if (*pretrain) {
      const RunConfig cfg = resolve(pre_c);
      const auto o = cmd_pretrain(cfg, &std::cerr);
      std::printf("%s %ld steps (total %ld)%s, first loss %.4f, last loss %.4f\n",
                  o.resumed ? "resumed," : "ran", o.steps_run, o.total_steps, o.finished ? ", finished" : "",
                  o.first_loss, o.last_loss);
    } else if (*finetune || *eval) {
      RunConfig cfg = resolve(*finetune ? ft_c : eval_c);
      if (!task.empty()) cfg.task.name = task;
      const EvalReport r = *finetune ? cmd_finetune(cfg) : cmd_eval(cfg);
      print_report(cfg, r);
    } else if (*sweep) {
      const RunConfig cfg = resolve(sweep_c);
      SweepGrid grid;
      for (const auto& s : str_list(sweep_schedules, ';'))
        grid.positions.push_back(s == "none" ? std::vector<int>{} : int_list(s));
      grid.strategies = str_list(sweep_strategies);
      grid.tasks = str_list(sweep_tasks);
      grid.seeds = sweep_seeds;
      std::cout << cmd_sweep(cfg, grid, &std::cerr).render();
    } else if (*theory) {
      topts.seed = static_cast<std::uint64_t>(theory_seed);
      const auto result = cmd_theory(topts, csv_path);
      std::cout << render_theory_table(result);
      bool ok = true;
      for (const auto& c : result.checks) ok = ok && c.passed;
      return ok ? 0 : 1;
    } else if (*timing) {
      const RunConfig cfg = resolve(timing_c);
      std::vector<std::string> presets;
      for (auto p : str_list(timing_presets)) {
        for (auto& ch : p)
          if (ch == ';') ch = ',';
        presets.push_back(p);
      }
      const auto report = cmd_timing(cfg, presets, timing_steps);
      std::printf("%-12s %6s %5s %14s %12s %10s %12s\n", "model", "depth", "hops", "encoded_nodes", "layer_work",
                  "seconds", "memory_MiB");
      for (const auto& r : report.rows)
        std::printf("%-12s %6d %5d %14zu %12zu %10.2f %12.2f\n", r.model.c_str(), r.depth, r.hops, r.encoded_nodes,
                    r.node_layer_updates, r.wall_seconds, static_cast<double>(r.memory_bytes) / (1024.0 * 1024.0));
      std::printf("encoded-node ordering %s\n", report.ordering_holds ? "holds" : "VIOLATED");
      return report.ordering_holds ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
