#include "odin/fusion.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "odin/encoder.hpp"

namespace odin {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::VA: return "VA";
    case Strategy::ME: return "ME";
    case Strategy::PE: return "PE";
    case Strategy::PG: return "PG";
  }
  return "?";
}

Strategy strategy_from_string(std::string_view name) {
  std::string upper(name);
  for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (upper == "VA") return Strategy::VA;
  if (upper == "ME") return Strategy::ME;
  if (upper == "PE") return Strategy::PE;
  if (upper == "PG") return Strategy::PG;
  throw ConfigError("unknown aggregation strategy '" + std::string(name) + "' (VA, ME, PE, PG)");
}

bool LayerSchedule::is_tg(int layer) const { return stage_of(layer) >= 0; }

int LayerSchedule::stage_of(int layer) const {
  auto it = std::lower_bound(tg_positions.begin(), tg_positions.end(), layer);
  if (it == tg_positions.end() || *it != layer) return -1;
  return static_cast<int>(it - tg_positions.begin());
}

std::string LayerSchedule::describe() const {
  std::ostringstream ss;
  ss << "L=" << depth << " S=[";
  for (std::size_t i = 0; i < tg_positions.size(); ++i) ss << (i ? "," : "") << tg_positions[i];
  ss << "] " << to_string(strategy);
  if (hops != static_cast<int>(tg_positions.size())) ss << " A=" << hops;
  return ss.str();
}

LayerSchedule make_schedule(int depth, std::vector<int> positions, Strategy strategy,
                            std::optional<int> hops) {
  if (depth < 1) throw ConfigError("schedule depth must be >= 1");
  std::vector<int> bad;
  std::set<int> seen;
  for (int p : positions) {
    if (p < 1 || p > depth - 1 || !seen.insert(p).second) bad.push_back(p);
  }
  if (!bad.empty()) {
    std::ostringstream ss;
    ss << "invalid TG positions for depth " << depth << " (must be unique, in 1.." << depth - 1
       << "):";
    for (int p : bad) ss << ' ' << p;
    throw ConfigError(ss.str());
  }
  std::sort(positions.begin(), positions.end());
  LayerSchedule s;
  s.depth = depth;
  s.tg_positions = std::move(positions);
  s.strategy = strategy;
  const int m = static_cast<int>(s.tg_positions.size());
  s.hops = hops.value_or(m);
  if (s.hops < 0 || s.hops > m)
    throw ConfigError("hop count " + std::to_string(s.hops) + " must lie in [0, |S|=" +
                      std::to_string(m) + "]");
  return s;
}

LayerSchedule light_preset(std::string_view name) {
  if (name == "light-2,4") return make_schedule(6, {2, 4}, Strategy::PG);
  if (name == "light-2") return make_schedule(6, {2}, Strategy::PG);
  throw ConfigError("unknown light preset '" + std::string(name) + "' (light-2,4, light-2)");
}

LayerSchedule schedule_preset(std::string_view name) {
  if (name == "odin") return make_schedule(12, {1, 6, 11}, Strategy::PG);
  if (name == "text-only") return make_schedule(6, {}, Strategy::VA);
  return light_preset(name);
}

namespace {

Vector mean_of(std::span<const Vector> vs, Eigen::Index d) {
  Vector m = Vector::Zero(d);
  if (vs.empty()) return m;
  for (const auto& v : vs) m += v;
  return m / static_cast<double>(vs.size());
}

Vector graph_token(const Vector& nbr_mean, const Vector& self, const GraphStageParams& stage) {
  return stage.w1 * nbr_mean + stage.w2 * self;
}

}  // namespace

Vector tg_aggregate(const Vector& cls_self, std::span<const Vector> cls_neighbors, const Matrix& w1,
                    const Matrix& w2) {
  const auto d = cls_self.size();
  if (w1.rows() != d || w1.cols() != d || w2.rows() != d || w2.cols() != d)
    throw Error("tg_aggregate: weight shape does not match width " + std::to_string(d));
  for (const auto& v : cls_neighbors) {
    if (v.size() != d) throw Error("tg_aggregate: neighbor width mismatch");
  }
  return w1 * mean_of(cls_neighbors, d) + w2 * cls_self;
}

void AggCache::store(NodeId node, Vector agg, int stage) {
  entries_[node] = Entry{std::move(agg), stage};
}

const AggCache::Entry* AggCache::find(NodeId node) const {
  auto it = entries_.find(node);
  return it == entries_.end() ? nullptr : &it->second;
}

std::optional<Vector> simple_aggregate(Strategy strategy, const Vector& cls_self,
                                       std::span<const Vector> cls_neighbors, const AggCache& cache,
                                       NodeId node, std::span<const GraphStageParams> stages,
                                       bool* fell_back) {
  if (fell_back) *fell_back = false;
  switch (strategy) {
    case Strategy::VA:
      return std::nullopt;
    case Strategy::ME: {
      Vector sum = cls_self;
      for (const auto& v : cls_neighbors) sum += v;
      return Vector(sum / static_cast<double>(cls_neighbors.size() + 1));
    }
    case Strategy::PE: {
      const auto* entry = cache.find(node);
      if (!entry) {
        if (fell_back) *fell_back = true;
        return std::nullopt;
      }
      return entry->agg;
    }
    case Strategy::PG: {
      const int stage = cache.last_stage();
      if (stage < 0) {
        if (fell_back) *fell_back = true;
        return std::nullopt;
      }
      const auto& w = stages[static_cast<std::size_t>(stage)];
      return tg_aggregate(cls_self, cls_neighbors, w.w1, w.w2);
    }
  }
  return std::nullopt;
}

std::size_t ForwardResult::node_layer_updates() const {
  std::size_t total = 0;
  for (auto n : active_per_layer) total += n;
  return total;
}

std::map<NodeId, Matrix> embed_nodes(const std::map<NodeId, std::vector<int>>& tokens,
                                     const ParamSet& params) {
  std::map<NodeId, Matrix> out;
  for (const auto& [v, ids] : tokens) out.emplace(v, embed(ids, params));
  return out;
}

void embed_nodes_backward(const std::map<NodeId, std::vector<int>>& tokens,
                          const std::map<NodeId, Matrix>& d_states, ParamSet& grads) {
  for (const auto& [v, d] : d_states) {
    auto it = tokens.find(v);
    if (it == tokens.end()) throw Error("embed_nodes_backward: no tokens for node " + std::to_string(v));
    embed_backward(it->second, d, grads);
  }
}

enum class AggKind { None, Graph, Mean, Reuse };

struct NodeTape {
  int local = 0;
  AggKind kind = AggKind::None;
  int stage = -1;  // weights used by Graph kind
  bool produces_cache = false;  // TG layer whose token later PE layers reuse
  Vector self_cls;
  Vector nbr_mean;
  LayerCache cache;
};

struct LayerTape {
  std::vector<NodeTape> nodes;
};

struct ForwardTape {
  std::vector<NodeId> nodes;                // local index -> node id (B_0, sorted)
  std::vector<std::vector<int>> neighbors;  // local adjacency
  std::vector<Eigen::Index> rows;           // sequence length per node
  std::vector<LayerTape> layers;
  int heads = 1;
  EncoderMode mode = EncoderMode::Transformer;
};

namespace {

int local_index(const std::vector<NodeId>& nodes, NodeId v) {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), v);
  if (it == nodes.end() || *it != v) return -1;
  return static_cast<int>(it - nodes.begin());
}

Matrix identity_block(const Matrix& states, const Vector* agg) {
  Matrix out = states;
  if (agg) out.row(0) = agg->cwiseMax(0.0).transpose();
  return out;
}

}  // namespace

ForwardResult odin_forward(const SampledSubgraph& sub, const std::map<NodeId, Matrix>& init_states,
                           const ParamSet& params, const LayerSchedule& schedule,
                           const ForwardOptions& options) {
  if (sub.hop_count != schedule.hop_count()) {
    throw ConfigError("sampled hop count " + std::to_string(sub.hop_count) +
                      " does not match schedule hop count " + std::to_string(schedule.hop_count()) +
                      " (" + schedule.describe() + ")");
  }
  if (static_cast<int>(params.layers.size()) != schedule.depth)
    throw ConfigError("parameter depth " + std::to_string(params.layers.size()) +
                      " does not match schedule depth " + std::to_string(schedule.depth));
  if (params.stages.size() < schedule.tg_positions.size())
    throw ConfigError("parameters hold " + std::to_string(params.stages.size()) +
                      " graph stages; schedule needs " + std::to_string(schedule.tg_positions.size()));
  if (static_cast<int>(sub.frontiers.size()) != sub.hop_count + 1)
    throw ConfigError("sampled subgraph frontier chain is inconsistent with its hop count");

  auto tape = std::make_shared<ForwardTape>();
  tape->nodes = sub.all_nodes();
  tape->heads = params.dims.heads;
  tape->mode = options.mode;
  const auto& nodes = tape->nodes;
  const auto n = nodes.size();

  std::vector<Matrix> cur(n);
  tape->rows.resize(n);
  tape->neighbors.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto it = init_states.find(nodes[i]);
    if (it == init_states.end())
      throw ConfigError("node " + std::to_string(nodes[i]) + " in B_0 has no initial token states");
    cur[i] = it->second;
    tape->rows[i] = cur[i].rows();
    for (NodeId j : sub.sampled_neighbors(nodes[i])) {
      const int lj = local_index(nodes, j);
      if (lj < 0) throw ConfigError("sampled neighbor " + std::to_string(j) + " is outside B_0");
      tape->neighbors[i].push_back(lj);
    }
  }

  std::vector<std::vector<int>> frontier_local(static_cast<std::size_t>(sub.hop_count + 1));
  for (int a = 0; a <= sub.hop_count; ++a) {
    for (NodeId v : sub.frontier(a)) frontier_local[static_cast<std::size_t>(a)].push_back(local_index(nodes, v));
  }

  ForwardResult result;
  const int heads = params.dims.heads;
  auto run_block = [&](const Matrix& x, const Vector* agg, int layer, LayerCache* cache) {
    if (options.mode == EncoderMode::Identity) return identity_block(x, agg);
    return transformer_layer(x, agg, params.layers[static_cast<std::size_t>(layer)], heads, cache);
  };
  auto check_finite = [&](const Matrix& m, int layer, int local) {
    if (!m.allFinite())
      throw NumericError("non-finite activation at layer " + std::to_string(layer) + ", node " +
                         std::to_string(nodes[static_cast<std::size_t>(local)]));
  };
  auto record_trace = [&] {
    if (!options.trace_cls) return;
    std::map<NodeId, Vector> snap;
    for (std::size_t i = 0; i < n; ++i) snap.emplace(nodes[i], cur[i].row(0).transpose());
    result.cls_trace.push_back(std::move(snap));
  };
  if (options.keep_tape) tape->layers.resize(static_cast<std::size_t>(schedule.depth));

  // Layer 0: plain block over B_0.
  {
    std::vector<Matrix> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      LayerCache* cache = nullptr;
      if (options.keep_tape) {
        NodeTape nt;
        nt.local = static_cast<int>(i);
        tape->layers[0].nodes.push_back(std::move(nt));
        cache = &tape->layers[0].nodes.back().cache;
      }
      next[i] = run_block(cur[i], nullptr, 0, cache);
      check_finite(next[i], 0, static_cast<int>(i));
    }
    cur = std::move(next);
    result.active_per_layer.push_back(n);
    record_trace();
  }

  AggCache agg_cache;
  int m = 0;
  bool warned_fallback = false;
  const auto d = params.dims.d;
  for (int l = 1; l < schedule.depth; ++l) {
    const auto& active = frontier_local[static_cast<std::size_t>(std::min(m, sub.hop_count))];
    const int stage = schedule.stage_of(l);
    std::vector<std::pair<int, Matrix>> updates;
    updates.reserve(active.size());
    if (options.keep_tape) tape->layers[static_cast<std::size_t>(l)].nodes.reserve(active.size());
    for (int li : active) {
      const auto i = static_cast<std::size_t>(li);
      NodeTape nt;
      nt.local = li;
      nt.self_cls = cur[i].row(0).transpose();
      const auto& nbrs = tape->neighbors[i];
      std::optional<Vector> agg;
      if (stage >= 0 || schedule.strategy == Strategy::PG || schedule.strategy == Strategy::ME) {
        nt.nbr_mean = Vector::Zero(d);
        for (int lj : nbrs) nt.nbr_mean += cur[static_cast<std::size_t>(lj)].row(0).transpose();
        if (!nbrs.empty()) nt.nbr_mean /= static_cast<double>(nbrs.size());
      }
      if (stage >= 0) {
        agg = graph_token(nt.nbr_mean, nt.self_cls, params.stages[static_cast<std::size_t>(stage)]);
        nt.kind = AggKind::Graph;
        nt.stage = stage;
        nt.produces_cache = true;
        agg_cache.store(nodes[i], *agg, stage);
      } else {
        switch (schedule.strategy) {
          case Strategy::VA:
            break;
          case Strategy::ME:
            agg = (nt.self_cls + nt.nbr_mean * static_cast<double>(nbrs.size())) /
                  static_cast<double>(nbrs.size() + 1);
            nt.kind = AggKind::Mean;
            break;
          case Strategy::PE:
            if (const auto* e = agg_cache.find(nodes[i])) {
              agg = e->agg;
              nt.kind = AggKind::Reuse;
              nt.stage = e->stage;
            }
            break;
          case Strategy::PG:
            if (agg_cache.last_stage() >= 0) {
              nt.stage = agg_cache.last_stage();
              agg = graph_token(nt.nbr_mean, nt.self_cls, params.stages[static_cast<std::size_t>(nt.stage)]);
              nt.kind = AggKind::Graph;
            }
            break;
        }
        if (!agg && (schedule.strategy == Strategy::PE || schedule.strategy == Strategy::PG) &&
            !warned_fallback) {
          result.warnings.push_back("layer " + std::to_string(l) + ": " +
                                    std::string(to_string(schedule.strategy)) +
                                    " before the first TG layer falls back to VA");
          warned_fallback = true;
        }
      }
      if (agg) check_finite(*agg, l, li);
      LayerCache* cache = nullptr;
      if (options.keep_tape) {
        auto& lt = tape->layers[static_cast<std::size_t>(l)];
        lt.nodes.push_back(std::move(nt));
        cache = &lt.nodes.back().cache;
      }
      Matrix out = run_block(cur[i], agg ? &*agg : nullptr, l, cache);
      check_finite(out, l, li);
      updates.emplace_back(li, std::move(out));
    }
    for (auto& [li, out] : updates) cur[static_cast<std::size_t>(li)] = std::move(out);
    result.active_per_layer.push_back(active.size());
    if (stage >= 0) {
      agg_cache.set_last_stage(stage);
      m = std::min(m + 1, sub.hop_count);
    }
    record_trace();
  }

  result.m_final = m;
  result.batch = sub.batch();
  for (NodeId v : result.batch) {
    const auto i = static_cast<std::size_t>(local_index(nodes, v));
    result.cls.emplace(v, cur[i].row(0).transpose());
    result.final_states.emplace(v, cur[i]);
  }
  if (options.keep_tape) result.tape = std::move(tape);
  return result;
}

void odin_backward(const ForwardResult& forward, const std::map<NodeId, Matrix>& d_final_states,
                   const ParamSet& params, ParamSet& grads, std::map<NodeId, Matrix>* d_init_states) {
  if (!forward.tape) throw Error("odin_backward: forward pass was run without keep_tape");
  const auto& tape = *forward.tape;
  if (tape.mode != EncoderMode::Transformer)
    throw Error("odin_backward: only the Transformer encoder mode is differentiable");
  const auto n = tape.nodes.size();
  const auto d = params.dims.d;

  // grad[i]: gradient w.r.t. node i's current state, walking layers backwards.
  std::vector<Matrix> grad(n);
  for (std::size_t i = 0; i < n; ++i) grad[i] = Matrix::Zero(tape.rows[i], d);
  for (const auto& [v, g] : d_final_states) {
    const int li = local_index(tape.nodes, v);
    if (li < 0) throw Error("odin_backward: node " + std::to_string(v) + " is not in the subgraph");
    grad[static_cast<std::size_t>(li)] += g;
  }

  // Gradient reaching a cached graph token through later PE layers.
  std::vector<Vector> reuse_grad(n, Vector::Zero(d));
  for (int l = static_cast<int>(tape.layers.size()) - 1; l >= 0; --l) {
    const auto& lt = tape.layers[static_cast<std::size_t>(l)];
    const auto& lp = params.layers[static_cast<std::size_t>(l)];
    auto& lg = grads.layers[static_cast<std::size_t>(l)];
    std::vector<Matrix> input_grad(lt.nodes.size());
    std::vector<Vector> cls_grad(n);  // neighbor [CLS] contributions, applied after the layer
    for (std::size_t k = 0; k < lt.nodes.size(); ++k) {
      const auto& nt = lt.nodes[k];
      const auto i = static_cast<std::size_t>(nt.local);
      Matrix& d_in = input_grad[k];
      Vector d_agg;
      const bool has_agg = nt.cache.attn.has_agg;
      transformer_layer_backward(nt.cache, grad[i], lp, tape.heads, lg, d_in,
                                 has_agg ? &d_agg : nullptr);
      if (!has_agg) continue;
      const auto& nbrs = tape.neighbors[i];
      auto add_cls = [&](std::size_t j, const Vector& g) {
        if (cls_grad[j].size() == 0) cls_grad[j] = Vector::Zero(d);
        cls_grad[j] += g;
      };
      switch (nt.kind) {
        case AggKind::Reuse:
          reuse_grad[i] += d_agg;
          break;
        case AggKind::Graph: {
          Vector total = d_agg;
          if (nt.produces_cache) {
            total += reuse_grad[i];
            reuse_grad[i].setZero();
          }
          const auto& w = params.stages[static_cast<std::size_t>(nt.stage)];
          auto& wg = grads.stages[static_cast<std::size_t>(nt.stage)];
          wg.w1.noalias() += total * nt.nbr_mean.transpose();
          wg.w2.noalias() += total * nt.self_cls.transpose();
          d_in.row(0) += (w.w2.transpose() * total).transpose();
          if (!nbrs.empty()) {
            const Vector per_nbr = w.w1.transpose() * total / static_cast<double>(nbrs.size());
            for (int lj : nbrs) add_cls(static_cast<std::size_t>(lj), per_nbr);
          }
          break;
        }
        case AggKind::Mean: {
          const Vector share = d_agg / static_cast<double>(nbrs.size() + 1);
          d_in.row(0) += share.transpose();
          for (int lj : nbrs) add_cls(static_cast<std::size_t>(lj), share);
          break;
        }
        case AggKind::None:
          break;
      }
    }
    for (std::size_t k = 0; k < lt.nodes.size(); ++k) {
      grad[static_cast<std::size_t>(lt.nodes[k].local)] = std::move(input_grad[k]);
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (cls_grad[j].size() > 0) grad[j].row(0) += cls_grad[j].transpose();
    }
  }

  if (d_init_states) {
    d_init_states->clear();
    for (std::size_t i = 0; i < n; ++i) d_init_states->emplace(tape.nodes[i], std::move(grad[i]));
  }
}

Matrix transformer_stack(const Matrix& states, const ParamSet& params) {
  Matrix x = states;
  for (const auto& lp : params.layers) x = transformer_layer(x, nullptr, lp, params.dims.heads);
  return x;
}

}  // namespace odin
