#include "odin/objectives.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "odin/encoder.hpp"
#include "odin/sampler.hpp"
#include "odin/vocab.hpp"

namespace odin {

TokenTable tokenize_graph(const TextGraph& graph, const Vocab& vocab, int max_len) {
  TokenTable table;
  table.reserve(graph.num_nodes());
  for (const auto& text : graph.texts()) table.push_back(tokenize(text, vocab, max_len));
  return table;
}

std::set<NodeId> MaskPlan::masked_nodes() const {
  std::set<NodeId> out;
  for (const auto& t : node_pairs) out.insert(t.anchor);
  return out;
}

std::size_t MaskPlan::masked_token_count() const {
  std::size_t n = 0;
  for (const auto& [v, masks] : token_masks) n += masks.size();
  return n;
}

MaskPlan plan_masks(const std::map<NodeId, std::vector<int>>& batch_tokens, const TextGraph& graph,
                    double mask_ratio, std::uint64_t seed, bool all_positives) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
    throw ConfigError("mask ratio must lie in (0, 1)");
  MaskPlan plan;

  for (const auto& [v, ids] : batch_tokens) {
    const int candidates = static_cast<int>(ids.size()) - 1;  // never [CLS]
    if (candidates <= 0) continue;
    const int count = std::clamp(static_cast<int>(std::lround(mask_ratio * candidates)), 1, candidates);
    std::vector<int> positions(static_cast<std::size_t>(candidates));
    for (int p = 0; p < candidates; ++p) positions[static_cast<std::size_t>(p)] = p + 1;
    Rng rng(mix_seed({seed, 0x70CULL, static_cast<std::uint64_t>(v)}));
    for (int i = 0; i < count; ++i) {
      auto j = static_cast<std::size_t>(i) + rng.uniform(static_cast<std::uint64_t>(candidates - i));
      std::swap(positions[static_cast<std::size_t>(i)], positions[j]);
    }
    positions.resize(static_cast<std::size_t>(count));
    std::sort(positions.begin(), positions.end());
    auto& masks = plan.token_masks[v];
    for (int p : positions) masks.push_back({p, ids[static_cast<std::size_t>(p)]});
  }

  std::vector<NodeId> batch;
  for (const auto& [v, ids] : batch_tokens) batch.push_back(v);
  for (NodeId v : batch) {
    std::vector<NodeId> pos, neg;
    for (NodeId u : batch) {
      if (u == v) continue;
      (graph.has_edge(v, u) ? pos : neg).push_back(u);
    }
    if (pos.empty()) {
      ++plan.excluded_no_positive;
      continue;
    }
    if (neg.empty()) {
      ++plan.excluded_no_negative;
      continue;
    }
    Rng rng(mix_seed({seed, 0x4E0DEULL, static_cast<std::uint64_t>(v)}));
    if (all_positives) {
      for (NodeId p : pos) plan.node_pairs.push_back({v, p, neg[rng.uniform(neg.size())]});
    } else {
      const NodeId p = pos[rng.uniform(pos.size())];
      plan.node_pairs.push_back({v, p, neg[rng.uniform(neg.size())]});
    }
  }
  return plan;
}

std::map<NodeId, std::vector<int>> apply_masks(const std::map<NodeId, std::vector<int>>& tokens,
                                               const MaskPlan& plan) {
  auto out = tokens;
  for (const auto& [v, masks] : plan.token_masks) {
    auto it = out.find(v);
    if (it == out.end()) continue;
    for (const auto& m : masks) it->second[static_cast<std::size_t>(m.position)] = Vocab::kMask;
  }
  return out;
}

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

const Vector& cls_of(const std::map<NodeId, Vector>& cls, NodeId v) {
  auto it = cls.find(v);
  if (it == cls.end()) throw Error("mnp_loss: no [CLS] vector for node " + std::to_string(v));
  return it->second;
}

void add_grad(std::map<NodeId, Vector>& g, NodeId v, const Vector& delta) {
  auto [it, inserted] = g.try_emplace(v, delta);
  if (!inserted) it->second += delta;
}

}  // namespace

LossValue mnp_loss(const std::map<NodeId, Vector>& cls, const MaskPlan& plan,
                   std::map<NodeId, Vector>* d_cls) {
  LossValue out;
  out.empty = plan.node_pairs.empty();
  for (const auto& t : plan.node_pairs) {
    const auto& a = cls_of(cls, t.anchor);
    const auto& p = cls_of(cls, t.positive);
    const auto& n = cls_of(cls, t.negative);
    const double margin = a.dot(n) - a.dot(p);
    out.value += softplus(margin);
    ++out.terms;
    if (d_cls) {
      const double w = sigmoid(margin);
      add_grad(*d_cls, t.anchor, w * (n - p));
      add_grad(*d_cls, t.positive, -w * a);
      add_grad(*d_cls, t.negative, w * a);
    }
  }
  return out;
}

LossValue nmlm_loss(const std::map<NodeId, Matrix>& final_states, const MaskPlan& plan,
                    const ParamSet& params, std::map<NodeId, Matrix>* d_states, ParamSet* grads) {
  LossValue out;
  const Matrix& q = params.mlm_weights();
  for (const auto& [v, masks] : plan.token_masks) {
    if (masks.empty()) continue;
    auto it = final_states.find(v);
    if (it == final_states.end()) throw Error("nmlm_loss: no final states for node " + std::to_string(v));
    const Matrix& states = it->second;
    for (const auto& m : masks) {
      if (m.position >= states.rows()) throw Error("nmlm_loss: masked position beyond sequence");
      const Vector h = states.row(m.position).transpose();
      Vector logits = q * h;
      const double mx = logits.maxCoeff();
      Vector probs = (logits.array() - mx).exp();
      const double z = probs.sum();
      out.value += mx + std::log(z) - logits[m.original];
      ++out.terms;
      if (d_states || grads) {
        probs /= z;
        probs[m.original] -= 1.0;
        if (grads) {
          Matrix& qg = params.dims.tie_mlm ? grads->token_emb : grads->mlm_head;
          qg.noalias() += probs * h.transpose();
        }
        if (d_states) {
          auto [dit, inserted] = d_states->try_emplace(v, Matrix::Zero(states.rows(), states.cols()));
          dit->second.row(m.position) += (q.transpose() * probs).transpose();
        }
      }
    }
  }
  out.empty = out.terms == 0;
  return out;
}

double total_loss(double l1, double l2) { return l1 + l2; }

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (sgd, adam)");
}

Optimizer::Optimizer(const ParamSet& shape, OptimizerConfig config) : config_(config) {
  if (config_.kind == OptimizerKind::Adam) {
    for (const auto& t : const_cast<ParamSet&>(shape).tensors()) {
      m_.push_back(Vector::Zero(static_cast<Eigen::Index>(t.data.size())));
      v_.push_back(Vector::Zero(static_cast<Eigen::Index>(t.data.size())));
    }
  }
}

void Optimizer::step(ParamSet& params, ParamSet& grads) {
  ++steps_;
  auto pt = params.tensors();
  auto gt = grads.tensors();
  if (pt.size() != gt.size()) throw Error("optimizer: gradient layout mismatch");
  const double b1c = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double b2c = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < pt.size(); ++i) {
    const double lr = pt[i].group == ParamGroup::Graph ? config_.lr_gnn : config_.lr_encoder;
    auto p = Eigen::Map<Vector>(pt[i].data.data(), static_cast<Eigen::Index>(pt[i].data.size()));
    auto g = Eigen::Map<Vector>(gt[i].data.data(), static_cast<Eigen::Index>(gt[i].data.size()));
    if (config_.kind == OptimizerKind::Sgd) {
      p -= lr * g;
    } else {
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
      p.array() -= lr * (m_[i].array() / b1c) / ((v_[i].array() / b2c).sqrt() + config_.eps);
    }
  }
}

std::vector<Matrix> Optimizer::state() const {
  std::vector<Matrix> out;
  out.push_back(Matrix::Constant(1, 1, static_cast<double>(steps_)));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    out.push_back(m_[i]);
    out.push_back(v_[i]);
  }
  return out;
}

void Optimizer::restore(const std::vector<Matrix>& state) {
  if (state.empty() || state.size() != 1 + 2 * m_.size())
    throw DataError("optimizer state does not match the optimizer kind/layout");
  steps_ = static_cast<long>(state[0](0, 0));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (state[1 + 2 * i].size() != m_[i].size()) throw DataError("optimizer state shape mismatch");
    m_[i] = Eigen::Map<const Vector>(state[1 + 2 * i].data(), m_[i].size());
    v_[i] = Eigen::Map<const Vector>(state[2 + 2 * i].data(), v_[i].size());
  }
}

BatchLoss batch_loss(const TextGraph& graph, const TokenTable& tokens, std::span<const NodeId> batch,
                     const ParamSet& params, const LayerSchedule& schedule,
                     const PretrainHyper& hyper, std::uint64_t seed, ParamSet* grads) {
  const auto fanouts = resolve_fanouts(hyper.fanouts, schedule.hop_count());
  auto sub = sample_frontiers(graph, batch, schedule.hop_count(), fanouts, mix_seed({seed, 1}));

  std::map<NodeId, std::vector<int>> all_tokens;
  for (NodeId v : sub.all_nodes()) all_tokens.emplace(v, tokens[static_cast<std::size_t>(v)]);
  std::map<NodeId, std::vector<int>> batch_tokens;
  for (NodeId v : sub.batch()) batch_tokens.emplace(v, all_tokens.at(v));

  const auto plan = plan_masks(batch_tokens, graph, hyper.mask_ratio, mix_seed({seed, 2}),
                               hyper.all_positives);
  if (hyper.use_mnp && hyper.hide_positive_edges && !plan.node_pairs.empty()) {
    std::vector<TextGraph::Edge> hidden;
    for (const auto& t : plan.node_pairs) hidden.emplace_back(t.anchor, t.positive);
    sub = hide_edges(std::move(sub), hidden);
  }
  MaskPlan token_plan = plan;
  if (!hyper.use_nmlm) token_plan.token_masks.clear();
  const auto masked = apply_masks(all_tokens, token_plan);
  const auto init = embed_nodes(masked, params);
  ForwardOptions opts;
  opts.keep_tape = grads != nullptr;
  const auto fwd = odin_forward(sub, init, params, schedule, opts);

  BatchLoss out;
  out.encoded_nodes = fwd.encoded_nodes();
  std::map<NodeId, Vector> d_cls;
  std::map<NodeId, Matrix> d_states;
  if (hyper.use_mnp) {
    const auto l1 = mnp_loss(fwd.cls, plan, grads ? &d_cls : nullptr);
    out.l1 = l1.value;
    out.mnp_terms = l1.terms;
  }
  if (hyper.use_nmlm) {
    const auto l2 = nmlm_loss(fwd.final_states, token_plan, params, grads ? &d_states : nullptr, grads);
    out.l2 = l2.value;
    out.mlm_terms = l2.terms;
  }
  out.total = total_loss(out.l1, out.l2);
  if (!std::isfinite(out.total)) {
    std::ostringstream ss;
    ss << "non-finite loss (l1=" << out.l1 << ", l2=" << out.l2 << ", batch of " << batch.size()
       << " nodes, " << out.encoded_nodes << " encoded)";
    throw NumericError(ss.str());
  }
  if (grads) {
    for (const auto& [v, g] : d_cls) {
      auto [it, inserted] = d_states.try_emplace(v, Matrix::Zero(fwd.final_states.at(v).rows(), params.dims.d));
      it->second.row(0) += g.transpose();
    }
    std::map<NodeId, Matrix> d_init;
    odin_backward(fwd, d_states, params, *grads, &d_init);
    embed_nodes_backward(masked, d_init, *grads);
  }
  return out;
}

StepRecord pretrain_step(const TextGraph& graph, const TokenTable& tokens,
                         std::span<const NodeId> batch, ParamSet& params,
                         const LayerSchedule& schedule, Optimizer& optimizer,
                         const PretrainHyper& hyper, std::uint64_t seed, long step) {
  const auto start = std::chrono::steady_clock::now();
  ParamSet grads = params.zeros_like();
  StepRecord rec;
  rec.step = step;
  rec.loss = batch_loss(graph, tokens, batch, params, schedule, hyper, seed, &grads);
  optimizer.step(params, grads);
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

std::vector<std::vector<NodeId>> make_pretrain_batches(const TextGraph& graph,
                                                       std::span<const NodeId> ids,
                                                       int batch_size, std::uint64_t seed,
                                                       int epoch) {
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  std::vector<NodeId> order(ids.begin(), ids.end());
  Rng rng(mix_seed({seed, 0xBA7C4ULL, static_cast<std::uint64_t>(epoch)}));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform(i)]);
  const std::size_t anchors = static_cast<std::size_t>(batch_size / 2);
  std::vector<std::vector<NodeId>> batches;
  for (std::size_t start = 0; start < order.size(); start += anchors) {
    std::set<NodeId> members;
    const auto stop = std::min(order.size(), start + anchors);
    for (std::size_t i = start; i < stop; ++i) {
      const NodeId v = order[i];
      members.insert(v);
      auto nbrs = graph.neighbors(v);
      if (!nbrs.empty()) members.insert(nbrs[rng.uniform(nbrs.size())]);
    }
    batches.emplace_back(members.begin(), members.end());
  }
  return batches;
}

}  // namespace odin
