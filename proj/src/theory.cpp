#include "odin/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "odin/encoder.hpp"
#include "odin/sampler.hpp"
#include "odin/synth.hpp"
#include "odin/vocab.hpp"

namespace odin {

double mean_pairwise_cosine(std::span<const Vector> vectors) {
  if (vectors.size() < 2) throw ConfigError("cosine profile needs at least two vectors");
  std::vector<double> norms;
  norms.reserve(vectors.size());
  for (const auto& x : vectors) norms.push_back(x.norm());
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = i + 1; j < vectors.size(); ++j) {
      double c;
      if (norms[i] == 0.0 || norms[j] == 0.0) {
        c = (norms[i] == 0.0 && norms[j] == 0.0) ? 1.0 : 0.0;
      } else {
        c = vectors[i].dot(vectors[j]) / (norms[i] * norms[j]);
      }
      sum += c;
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

namespace {

void check_probe(const TextGraph& graph, std::span<const NodeId> probe, SmoothingProfile& profile) {
  if (probe.size() < 10) throw ConfigError("smoothing profile needs a probe set of at least 10 nodes");
  for (NodeId v : probe)
    if (!graph.valid(v)) throw DataError("probe node " + std::to_string(v) + " is not in the graph");
  if (!graph.is_connected())
    profile.warnings.push_back("graph is disconnected; collapse analysis assumes a connected graph");
}

std::vector<Vector> gather(const std::map<NodeId, Vector>& states, std::span<const NodeId> nodes) {
  std::vector<Vector> out;
  out.reserve(nodes.size());
  for (NodeId v : nodes) out.push_back(states.at(v));
  return out;
}

Matrix row_matrix(const Vector& x) { return x.transpose(); }

int full_fanout(const TextGraph& graph) { return std::max<int>(1, static_cast<int>(graph.max_degree())); }

double cls_gap(const ForwardResult& f, NodeId u, NodeId v) { return (f.cls.at(u) - f.cls.at(v)).norm(); }

ForwardResult run_tokens(const TextGraph& graph, const TokenTable& tokens, const ParamSet& params,
                         const LayerSchedule& schedule, std::span<const NodeId> batch, int fanout,
                         std::uint64_t seed, const ForwardOptions& options = {}) {
  const auto sub = sample_frontiers(graph, batch, schedule.hop_count(), fanout, seed);
  std::map<NodeId, std::vector<int>> seqs;
  for (NodeId v : sub.all_nodes()) seqs.emplace(v, tokens.at(static_cast<std::size_t>(v)));
  return odin_forward(sub, embed_nodes(seqs, params), params, schedule, options);
}

std::vector<int> random_text(Rng& rng, int vocab_size, int len) {
  std::vector<int> seq{Vocab::kCls};
  for (int i = 0; i < len; ++i)
    seq.push_back(Vocab::kNumSpecials +
                  static_cast<int>(rng.uniform(static_cast<std::uint64_t>(vocab_size - Vocab::kNumSpecials))));
  return seq;
}

TextGraph placeholder_graph(std::size_t n, const std::vector<TextGraph::Edge>& edges) {
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < n; ++i) texts.push_back("node " + std::to_string(i));
  return TextGraph::build(std::move(texts), edges);
}

}  // namespace

SmoothingProfile baseline_profile(const TextGraph& graph, const std::map<NodeId, Vector>& init_features,
                           std::span<const NodeId> probe, int depth) {
  SmoothingProfile profile;
  profile.model = "deep-gnn-baseline";
  check_probe(graph, probe, profile);
  if (depth < 1) throw ConfigError("profile depth must be >= 1");
  const auto n = graph.num_nodes();
  std::vector<Vector> h(n);
  for (std::size_t v = 0; v < n; ++v) {
    auto it = init_features.find(static_cast<NodeId>(v));
    if (it == init_features.end()) throw DataError("node " + std::to_string(v) + " has no initial feature");
    h[v] = it->second;
  }
  for (int layer = 0; layer < depth; ++layer) {
    std::vector<Vector> next(n);
    for (std::size_t v = 0; v < n; ++v) {
      Vector acc = h[v];
      const auto nbrs = graph.neighbors(static_cast<NodeId>(v));
      for (NodeId u : nbrs) acc += h[static_cast<std::size_t>(u)];
      next[v] = acc / static_cast<double>(nbrs.size() + 1);
    }
    h = std::move(next);
    std::vector<Vector> probe_states;
    for (NodeId v : probe) probe_states.push_back(h[static_cast<std::size_t>(v)]);
    profile.cosine.push_back(mean_pairwise_cosine(probe_states));
  }
  return profile;
}

SmoothingProfile odin_profile(const TextGraph& graph, const TokenTable& tokens, const ParamSet& params,
                              const LayerSchedule& schedule, std::span<const NodeId> probe, int fanout,
                              std::uint64_t seed) {
  SmoothingProfile profile;
  profile.model = "odin";
  check_probe(graph, probe, profile);
  ForwardOptions opts;
  opts.trace_cls = true;
  const auto f = run_tokens(graph, tokens, params, schedule, probe, fanout, seed, opts);
  for (const auto& layer : f.cls_trace) {
    const auto states = gather(layer, probe);
    profile.cosine.push_back(mean_pairwise_cosine(states));
  }
  for (const auto& w : f.warnings) profile.warnings.push_back(w);
  return profile;
}

std::map<NodeId, Vector> text_features(const TokenTable& tokens, const ParamSet& params,
                                std::span<const NodeId> nodes) {
  std::map<NodeId, Vector> out;
  for (NodeId v : nodes) {
    const auto& seq = tokens.at(static_cast<std::size_t>(v));
    Vector acc = Vector::Zero(params.dims.d);
    for (std::size_t i = 1; i < seq.size(); ++i) acc += params.token_emb.row(seq[i]).transpose();
    if (seq.size() > 1) {
      acc /= static_cast<double>(seq.size() - 1);
    } else {
      acc = params.token_emb.row(seq.front()).transpose();
    }
    out.emplace(v, std::move(acc));
  }
  return out;
}

ReductionResult transformer_reduction_check(const TextGraph& graph, const TokenTable& tokens,
                                     const ParamSet& params, std::span<const NodeId> nodes,
                                     const LayerSchedule* schedule, int fanout, std::uint64_t seed) {
  const LayerSchedule plain = make_schedule(params.dims.depth, {}, Strategy::VA);
  const LayerSchedule& sched = schedule ? *schedule : plain;
  const auto f = run_tokens(graph, tokens, params, sched, nodes, fanout, seed);
  ReductionResult r;
  for (NodeId v : f.batch) {
    std::map<NodeId, std::vector<int>> one{{v, tokens.at(static_cast<std::size_t>(v))}};
    const Matrix ref = transformer_stack(embed_nodes(one, params).at(v), params);
    r.max_deviation = std::max(r.max_deviation, (f.final_states.at(v) - ref).cwiseAbs().maxCoeff());
  }
  return r;
}

ReductionResult gnn_reduction_check(std::span<const Matrix> w1s, std::span<const Matrix> w2s,
                             const TextGraph& graph, const std::map<NodeId, Vector>& init_features) {
  if (w1s.empty() || w1s.size() != w2s.size())
    throw ConfigError("GNN reduction needs matching, non-empty W1 and W2 lists");
  if (graph.num_nodes() == 0 || init_features.empty()) throw DataError("GNN reduction needs a non-empty graph");
  const auto n = graph.num_nodes();
  const int layers = static_cast<int>(w1s.size());
  const auto d = static_cast<int>(init_features.begin()->second.size());
  for (std::size_t i = 0; i < w1s.size(); ++i) {
    if (w1s[i].rows() != d || w1s[i].cols() != d || w2s[i].rows() != d || w2s[i].cols() != d)
      throw ConfigError("GNN reduction weights must be d x d");
  }

  ModelDims dims;
  dims.vocab_size = Vocab::kNumSpecials;
  dims.d = d;
  dims.heads = 1;
  dims.ffn = 1;
  dims.max_len = 2;
  dims.depth = layers + 1;
  dims.graph_stages = layers;
  ParamSet params = ParamSet::init(dims, 0);
  for (int i = 0; i < layers; ++i) {
    params.stages[static_cast<std::size_t>(i)].w1 = w1s[static_cast<std::size_t>(i)];
    params.stages[static_cast<std::size_t>(i)].w2 = w2s[static_cast<std::size_t>(i)];
  }
  std::vector<int> positions;
  for (int l = 1; l <= layers; ++l) positions.push_back(l);
  const auto schedule = make_schedule(layers + 1, positions, Strategy::VA);

  std::vector<NodeId> all(n);
  for (std::size_t v = 0; v < n; ++v) all[v] = static_cast<NodeId>(v);
  const auto sub = sample_frontiers(graph, all, layers, full_fanout(graph), 0);
  std::map<NodeId, Matrix> init;
  std::vector<Vector> h(n);
  for (std::size_t v = 0; v < n; ++v) {
    auto it = init_features.find(static_cast<NodeId>(v));
    if (it == init_features.end()) throw DataError("node " + std::to_string(v) + " has no initial feature");
    if (it->second.size() != d) throw ConfigError("initial features differ in dimension");
    h[v] = it->second;
    init.emplace(static_cast<NodeId>(v), row_matrix(it->second));
  }
  ForwardOptions opts;
  opts.mode = EncoderMode::Identity;
  opts.trace_cls = true;
  const auto f = odin_forward(sub, init, params, schedule, opts);

  // Oracle: dense loops over the graph's own adjacency.
  ReductionResult r;
  for (int l = 0; l <= layers; ++l) {
    if (l > 0) {
      const Matrix& w1 = w1s[static_cast<std::size_t>(l - 1)];
      const Matrix& w2 = w2s[static_cast<std::size_t>(l - 1)];
      std::vector<Vector> next(n);
      for (std::size_t v = 0; v < n; ++v) {
        Vector mean = Vector::Zero(d);
        const auto nbrs = graph.neighbors(static_cast<NodeId>(v));
        for (NodeId u : nbrs) mean += h[static_cast<std::size_t>(u)];
        if (!nbrs.empty()) mean /= static_cast<double>(nbrs.size());
        Vector pre = w1 * mean + w2 * h[v];
        for (Eigen::Index k = 0; k < pre.size(); ++k) pre[k] = pre[k] > 0.0 ? pre[k] : 0.0;
        next[v] = pre;
      }
      h = std::move(next);
    }
    double dev = 0.0;
    const auto& trace = f.cls_trace.at(static_cast<std::size_t>(l));
    for (std::size_t v = 0; v < n; ++v)
      dev = std::max(dev, (trace.at(static_cast<NodeId>(v)) - h[v]).cwiseAbs().maxCoeff());
    r.per_layer.push_back(dev);
    r.max_deviation = std::max(r.max_deviation, dev);
  }
  return r;
}

SeparationInstance make_structural_instance(int vocab_size, int text_len, std::uint64_t seed) {
  if (vocab_size <= Vocab::kNumSpecials + 1) throw ConfigError("vocabulary too small for a separation instance");
  SeparationInstance inst;
  inst.graph = placeholder_graph(6, {{0, 2}, {0, 3}, {1, 4}, {1, 5}});
  Rng rng(mix_seed({seed, 0x57AC7ULL}));
  const auto shared = random_text(rng, vocab_size, text_len);
  inst.tokens = {shared, shared};
  for (int i = 2; i < 6; ++i) inst.tokens.push_back(random_text(rng, vocab_size, text_len));
  inst.u = 0;
  inst.v = 1;
  return inst;
}

SeparationInstance make_textual_instance(int vocab_size, int text_len, int leaves, bool same_text,
                                  std::uint64_t seed) {
  if (leaves < 2) throw ConfigError("star needs at least 2 leaves");
  if (vocab_size <= Vocab::kNumSpecials + 1) throw ConfigError("vocabulary too small for a separation instance");
  std::vector<TextGraph::Edge> edges;
  for (int i = 1; i <= leaves; ++i) edges.emplace_back(0, i);
  SeparationInstance inst;
  inst.graph = placeholder_graph(static_cast<std::size_t>(leaves) + 1, edges);
  Rng rng(mix_seed({seed, 0x7E87ULL}));
  for (int i = 0; i <= leaves; ++i) inst.tokens.push_back(random_text(rng, vocab_size, text_len));
  inst.u = 1;
  inst.v = 2;
  if (same_text) {
    inst.tokens[2] = inst.tokens[1];
  } else {
    while (inst.tokens[2] == inst.tokens[1]) inst.tokens[2] = random_text(rng, vocab_size, text_len);
  }
  return inst;
}

SeparationResult structural_separation_check(const ParamSet& params, const LayerSchedule& schedule,
                                      const SeparationInstance& instance) {
  const std::vector<NodeId> batch{instance.u, instance.v};
  const int fanout = full_fanout(instance.graph);
  SeparationResult r;
  r.odin = cls_gap(run_tokens(instance.graph, instance.tokens, params, schedule, batch, fanout, 0),
                   instance.u, instance.v);
  const auto plain = make_schedule(schedule.depth, {}, Strategy::VA);
  r.reduced = cls_gap(run_tokens(instance.graph, instance.tokens, params, plain, batch, fanout, 0),
                      instance.u, instance.v);
  return r;
}

SeparationResult textual_separation_check(const ParamSet& params, const LayerSchedule& schedule,
                                   const SeparationInstance& instance) {
  const std::vector<NodeId> batch{instance.u, instance.v};
  const int fanout = full_fanout(instance.graph);
  SeparationResult r;
  r.odin = cls_gap(run_tokens(instance.graph, instance.tokens, params, schedule, batch, fanout, 0),
                   instance.u, instance.v);
  const auto sub = sample_frontiers(instance.graph, batch, schedule.hop_count(), fanout, 0);
  std::map<NodeId, Matrix> constant;
  for (NodeId v : sub.all_nodes()) constant.emplace(v, Matrix::Ones(1, params.dims.d));
  ForwardOptions opts;
  opts.mode = EncoderMode::Identity;
  r.reduced = cls_gap(odin_forward(sub, constant, params, schedule, opts), instance.u, instance.v);
  return r;
}

namespace {

TheoryCheck make_check(std::string name, double value, std::string comparison, double threshold,
                       std::string detail = {}) {
  TheoryCheck c;
  c.name = std::move(name);
  c.value = value;
  c.comparison = std::move(comparison);
  c.threshold = threshold;
  c.passed = c.comparison == "<" ? value < threshold : value > threshold;
  c.detail = std::move(detail);
  return c;
}

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-1.0, 1.0);
  return m;
}

struct OversmoothingInstance {
  TextGraph graph;
  TokenTable tokens;
  ParamSet params;
  std::vector<NodeId> probe;
};

OversmoothingInstance oversmoothing_instance(int nodes, double avg_degree, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n_nodes = nodes;
  spec.n_classes = 5;
  spec.n_coarse = 5;
  spec.avg_degree = avg_degree;
  spec.ensure_connected = true;
  spec.seed = seed;
  OversmoothingInstance inst;
  inst.graph = generate_synthetic(spec);
  const auto vocab = build_vocab(inst.graph.texts(), 1);
  ModelDims dims;
  dims.vocab_size = vocab.size();
  dims.depth = 12;
  dims.graph_stages = 3;
  inst.tokens = tokenize_graph(inst.graph, vocab, dims.max_len);
  inst.params = ParamSet::init(dims, mix_seed({seed, 0x05C0ULL}));
  for (int v = 0; v < nodes; ++v) inst.probe.push_back(v);
  return inst;
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", x);
  return buf;
}

}  // namespace

std::vector<TheoryCheck> transformer_reduction_checks(const TheorySuiteOptions& o) {
  std::vector<TheoryCheck> out;
  double worst = 0.0, mutated = 1e300;
  for (int s = 0; s < o.seeds; ++s) {
    const auto seed = mix_seed({o.seed, 0x7A1ULL, static_cast<std::uint64_t>(s)});
    auto inst = oversmoothing_instance(30, 4.0, seed);
    ModelDims dims = inst.params.dims;
    dims.depth = 4;
    dims.graph_stages = 1;
    const auto params = ParamSet::init(dims, seed);
    Rng rng(seed);
    std::vector<NodeId> nodes;
    while (nodes.size() < 5) {
      const auto v = static_cast<NodeId>(rng.uniform(inst.graph.num_nodes()));
      if (std::find(nodes.begin(), nodes.end(), v) == nodes.end()) nodes.push_back(v);
    }
    worst = std::max(worst, transformer_reduction_check(inst.graph, inst.tokens, params, nodes).max_deviation);
    const auto faulty = make_schedule(4, {1}, Strategy::PG);
    mutated = std::min(mutated,
                       transformer_reduction_check(inst.graph, inst.tokens, params, nodes, &faulty).max_deviation);
  }
  out.push_back(make_check("transformer reduction", worst, "<", o.reduction_tol,
                           std::to_string(o.seeds) + " seeds x 5 nodes"));
  out.push_back(make_check("transformer reduction fault injection", mutated, ">", 1e-3,
                           "one TG layer inserted"));
  return out;
}

std::vector<TheoryCheck> gnn_reduction_checks(const TheorySuiteOptions& o) {
  std::vector<TheoryCheck> out;
  double worst = 0.0;
  for (int s = 0; s < o.seeds; ++s) {
    const auto seed = mix_seed({o.seed, 0x6E1ULL, static_cast<std::uint64_t>(s)});
    SyntheticSpec spec;
    spec.n_nodes = 30;
    spec.n_classes = 3;
    spec.n_coarse = 3;
    spec.avg_degree = 3.0;
    spec.seed = seed;
    const auto graph = generate_synthetic(spec);
    Rng rng(seed);
    std::vector<Matrix> w1s, w2s;
    for (int l = 0; l < 2; ++l) {
      w1s.push_back(random_matrix(4, 4, rng));
      w2s.push_back(random_matrix(4, 4, rng));
    }
    std::map<NodeId, Vector> init;
    for (NodeId v = 0; v < 30; ++v) init.emplace(v, random_matrix(4, 1, rng));
    worst = std::max(worst, gnn_reduction_check(w1s, w2s, graph, init).max_deviation);
  }
  out.push_back(make_check("GNN reduction", worst, "<", o.reduction_tol,
                           "30 nodes, 2 layers, d=4"));
  return out;
}

std::vector<TheoryCheck> separation_checks(const TheorySuiteOptions& o) {
  std::vector<TheoryCheck> out;
  const auto schedule = light_preset("light-2");
  int structural_ok = 0, textual_ok = 0;
  double structural_sym = 0.0, gnn_sym = 0.0, control = 0.0, ablation = 0.0;
  for (int s = 0; s < o.separation_seeds; ++s) {
    const auto seed = mix_seed({o.seed, 0x5E9ULL, static_cast<std::uint64_t>(s)});
    ModelDims dims;
    dims.vocab_size = 64;
    dims.depth = schedule.depth;
    dims.graph_stages = 1;
    auto params = ParamSet::init(dims, seed);
    const auto st = structural_separation_check(params, schedule, make_structural_instance(64, 8, seed));
    if (st.odin > o.separation_min) ++structural_ok;
    structural_sym = std::max(structural_sym, st.reduced);
    const auto tx = textual_separation_check(params, schedule, make_textual_instance(64, 8, 4, false, seed));
    if (tx.odin > o.separation_min) ++textual_ok;
    gnn_sym = std::max(gnn_sym, tx.reduced);
    const auto same = textual_separation_check(params, schedule, make_textual_instance(64, 8, 4, true, seed));
    control = std::max(control, same.odin);
    params.stages[0].w1.setZero();
    ablation = std::max(ablation,
                        structural_separation_check(params, schedule, make_structural_instance(64, 8, seed)).odin);
  }
  const std::string of = " of " + std::to_string(o.separation_seeds) + " seeds";
  out.push_back(make_check("structural separation", structural_ok, ">", o.separation_required - 0.5,
                           "seeds with separation > " + num(o.separation_min) + of));
  out.push_back(make_check("structural symmetry (Transformer)", structural_sym, "<", o.symmetry_tol));
  out.push_back(make_check("structural separation with W1 = 0", ablation, "<", o.symmetry_tol));
  out.push_back(make_check("textual separation", textual_ok, ">", o.separation_required - 0.5,
                           "seeds with separation > " + num(o.separation_min) + of));
  out.push_back(make_check("textual symmetry (identity GNN)", gnn_sym, "<", o.symmetry_tol));
  out.push_back(make_check("textual symmetry (identical texts)", control, "<", o.symmetry_tol));
  return out;
}

std::vector<TheoryCheck> oversmoothing_checks(const TheorySuiteOptions& o, std::vector<SmoothingProfile>* profiles) {
  std::vector<TheoryCheck> out;
  double baseline_min = 1.0, odin_max = -1.0;
  const auto schedule = schedule_preset("odin");
  for (int s = 0; s < o.seeds; ++s) {
    const auto seed = mix_seed({o.seed, 0x05ULL, static_cast<std::uint64_t>(s)});
    const auto inst = oversmoothing_instance(o.oversmoothing_nodes, o.oversmoothing_degree, seed);
    const auto base = baseline_profile(inst.graph, text_features(inst.tokens, inst.params, inst.probe),
                                inst.probe, o.baseline_depth);
    const auto odin = odin_profile(inst.graph, inst.tokens, inst.params, schedule, inst.probe, 5, seed);
    baseline_min = std::min(baseline_min, base.cosine.back());
    odin_max = std::max(odin_max, odin.cosine.back());
    if (s == 0 && profiles) {
      profiles->push_back(base);
      profiles->push_back(odin);
    }
  }
  out.push_back(make_check("over-smoothing baseline (depth " + std::to_string(o.baseline_depth) + ")",
                           baseline_min, ">", o.baseline_threshold, "minimum final cosine over seeds"));
  out.push_back(make_check("over-smoothing Odin (L=12, S=[1,6,11])", odin_max, "<", o.odin_threshold,
                           "maximum final cosine over seeds"));
  return out;
}

TheorySuiteResult run_theory_suite(const TheorySuiteOptions& o) {
  TheorySuiteResult out;
  for (auto group : {transformer_reduction_checks(o), gnn_reduction_checks(o), separation_checks(o),
                     oversmoothing_checks(o, &out.profiles)})
    out.checks.insert(out.checks.end(), group.begin(), group.end());
  return out;
}

std::string profiles_to_csv(const std::vector<SmoothingProfile>& profiles) {
  std::ostringstream ss;
  ss << "model,layer,cosine\n";
  char buf[64];
  for (const auto& p : profiles) {
    for (std::size_t l = 0; l < p.cosine.size(); ++l) {
      std::snprintf(buf, sizeof(buf), "%.12f", p.cosine[l]);
      ss << p.model << ',' << l << ',' << buf << '\n';
    }
  }
  return ss.str();
}

}  // namespace odin
