#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "odin/objectives.hpp"
#include "odin/synth.hpp"
#include "test_util.hpp"

using namespace odin;

namespace {

std::map<NodeId, std::vector<int>> seqs(const std::vector<NodeId>& nodes, int len, int vocab = 20) {
  std::map<NodeId, std::vector<int>> out;
  for (NodeId v : nodes) {
    std::vector<int> ids{Vocab::kCls};
    for (int i = 1; i < len; ++i) ids.push_back(Vocab::kNumSpecials + (v * 7 + i) % (vocab - Vocab::kNumSpecials));
    out[v] = ids;
  }
  return out;
}

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

struct Setup {
  TextGraph graph;
  TokenTable tokens;
  ParamSet params;
};

Setup small_setup(int depth, int stages, std::uint64_t seed, int d = 8) {
  SyntheticSpec spec;
  spec.n_nodes = 60;
  spec.seed = seed;
  spec.avg_degree = 4;
  Setup s;
  s.graph = generate_synthetic(spec);
  auto vocab = build_vocab(s.graph.texts(), 1);
  ModelDims dims;
  dims.vocab_size = vocab.size();
  dims.d = d;
  dims.heads = 2;
  dims.ffn = 2 * d;
  dims.max_len = 10;
  dims.depth = depth;
  dims.graph_stages = stages;
  s.params = ParamSet::init(dims, mix_seed({seed, 1}));
  s.tokens = tokenize_graph(s.graph, vocab, dims.max_len);
  return s;
}

}  // namespace

TEST(MaskPlan, RatioAndClsNeverMasked) {
  auto g = testutil::random_graph(20, 0.2, 1);
  auto batch = seqs({0, 1, 2, 3, 4}, 21);
  auto plan = plan_masks(batch, g, 0.15, 7);
  for (const auto& [v, masks] : plan.token_masks) {
    EXPECT_EQ(masks.size(), 3u);  // round(0.15 * 20)
    for (const auto& m : masks) {
      EXPECT_GT(m.position, 0);
      EXPECT_EQ(m.original, batch[v][static_cast<std::size_t>(m.position)]);
    }
  }
  auto masked = apply_masks(batch, plan);
  for (const auto& [v, ids] : masked) {
    EXPECT_EQ(ids[0], Vocab::kCls);
    std::size_t count = 0;
    for (int id : ids) count += id == Vocab::kMask;
    EXPECT_EQ(count, plan.token_masks.at(v).size());
  }
}

TEST(MaskPlan, ShortTextStillGetsOneMask) {
  auto g = testutil::random_graph(5, 0.5, 1);
  auto plan = plan_masks(seqs({0, 1}, 3), g, 0.15, 0);
  for (const auto& [v, masks] : plan.token_masks) EXPECT_EQ(masks.size(), 1u);
  auto only_cls = plan_masks(seqs({0}, 1), g, 0.15, 0);
  EXPECT_EQ(only_cls.masked_token_count(), 0u);
}

TEST(MaskPlan, RatioOutOfRange) {
  auto g = testutil::random_graph(5, 0.5, 1);
  EXPECT_THROW(plan_masks(seqs({0}, 4), g, 0.0, 0), ConfigError);
  EXPECT_THROW(plan_masks(seqs({0}, 4), g, 1.0, 0), ConfigError);
}

TEST(MaskPlan, TriangleHasNoNegatives) {
  auto g = TextGraph::build({"a", "b", "c"}, {{0, 1}, {1, 2}, {0, 2}});
  auto plan = plan_masks(seqs({0, 1, 2}, 4), g, 0.15, 0);
  EXPECT_TRUE(plan.node_pairs.empty());
  EXPECT_EQ(plan.excluded_no_negative, 3u);
}

TEST(MaskPlan, PathBatchPicksOnlyEligiblePair) {
  auto g = TextGraph::build({"a", "b", "c"}, {{0, 1}, {1, 2}});
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto plan = plan_masks(seqs({0, 1, 2}, 4), g, 0.15, seed);
    ASSERT_EQ(plan.node_pairs.size(), 2u);  // node 1 is adjacent to both others
    EXPECT_EQ(plan.excluded_no_negative, 1u);
    for (const auto& t : plan.node_pairs) {
      EXPECT_EQ(t.positive, 1);
      EXPECT_EQ(t.negative, t.anchor == 0 ? 2 : 0);
    }
  }
}

TEST(MaskPlan, TriplesRespectAdjacencyOnRandomBatches) {
  for (unsigned s = 0; s < 10; ++s) {
    auto g = testutil::random_graph(30, 0.15, s);
    std::vector<NodeId> nodes;
    for (NodeId v = 0; v < 12; ++v) nodes.push_back(v);
    auto plan = plan_masks(seqs(nodes, 6), g, 0.15, s, s % 2 == 0);
    EXPECT_EQ(plan, plan_masks(seqs(nodes, 6), g, 0.15, s, s % 2 == 0)) << "non-deterministic";
    for (const auto& t : plan.node_pairs) {
      EXPECT_TRUE(g.has_edge(t.anchor, t.positive));
      EXPECT_FALSE(g.has_edge(t.anchor, t.negative));
      EXPECT_NE(t.anchor, t.negative);
    }
  }
}

TEST(MnpLoss, SymmetricScoresGiveLn2) {
  MaskPlan plan;
  plan.node_pairs = {{0, 1, 2}, {1, 0, 2}};
  std::map<NodeId, Vector> cls{{0, vec({1, 0})}, {1, vec({0, 1})}, {2, vec({0, 1})}};
  cls[2] = cls[1];
  plan.node_pairs = {{0, 1, 2}};
  EXPECT_NEAR(mnp_loss(cls, plan).value, std::log(2.0), 1e-15);
}

TEST(MnpLoss, HandExampleAndLimit) {
  MaskPlan plan;
  plan.node_pairs = {{0, 1, 2}};
  std::map<NodeId, Vector> cls{{0, vec({1, 0})}, {1, vec({1, 0})}, {2, vec({0, 1})}};
  EXPECT_NEAR(mnp_loss(cls, plan).value, -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
  EXPECT_NEAR(mnp_loss(cls, plan).value, 0.3133, 1e-4);
  cls[1] = vec({1e3, 0});
  EXPECT_LT(mnp_loss(cls, plan).value, 1e-12);
  EXPECT_GE(mnp_loss(cls, plan).value, 0.0);
}

TEST(MnpLoss, EmptyPlanFlagged) {
  MaskPlan plan;
  auto l = mnp_loss({}, plan);
  EXPECT_TRUE(l.empty);
  EXPECT_EQ(l.value, 0.0);
}

TEST(MnpLoss, SumsOverPairs) {
  MaskPlan plan;
  plan.node_pairs = {{0, 1, 2}, {1, 0, 2}, {2, 0, 1}};
  std::map<NodeId, Vector> cls{{0, vec({0.5, 0.5})}, {1, vec({0.5, 0.5})}, {2, vec({0.5, 0.5})}};
  EXPECT_NEAR(mnp_loss(cls, plan).value, 3.0 * std::log(2.0), 1e-12);
}

TEST(NmlmLoss, UniformLogitsGiveLnV) {
  ModelDims dims;
  dims.vocab_size = 50;
  dims.d = 4;
  dims.heads = 2;
  dims.ffn = 4;
  dims.max_len = 4;
  dims.depth = 1;
  auto p = ParamSet::init(dims, 1);
  p.mlm_head.setZero();
  MaskPlan plan;
  plan.token_masks[0] = {{1, 7}, {2, 9}};
  std::map<NodeId, Matrix> states{{0, Matrix::Random(3, 4)}};
  auto l = nmlm_loss(states, plan, p);
  EXPECT_EQ(l.terms, 2u);
  EXPECT_NEAR(l.value / 2.0, std::log(50.0), 1e-12);
}

TEST(NmlmLoss, ConfidentCorrectIsZero) {
  ModelDims dims;
  dims.vocab_size = 6;
  dims.d = 6;
  dims.heads = 2;
  dims.ffn = 4;
  dims.max_len = 4;
  dims.depth = 1;
  auto p = ParamSet::init(dims, 1);
  p.mlm_head = Matrix::Identity(6, 6) * 1e6;
  MaskPlan plan;
  plan.token_masks[3] = {{1, 4}};
  Matrix s = Matrix::Zero(2, 6);
  s(1, 4) = 1.0;
  EXPECT_NEAR(nmlm_loss({{3, s}}, plan, p).value, 0.0, 1e-9);
}

TEST(NmlmLoss, MatchesSoftmaxCrossEntropyOracle) {
  ModelDims dims;
  dims.vocab_size = 9;
  dims.d = 4;
  dims.heads = 2;
  dims.ffn = 4;
  dims.max_len = 4;
  dims.depth = 1;
  auto p = ParamSet::init(dims, 3);
  MaskPlan plan;
  plan.token_masks[0] = {{1, 5}};
  plan.token_masks[1] = {{2, 8}};
  std::mt19937 gen(4);
  std::normal_distribution<double> n;
  std::map<NodeId, Matrix> states;
  for (NodeId v : {0, 1}) {
    Matrix m(3, 4);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) m(i, j) = n(gen);
    states[v] = m;
  }
  double expect = 0.0;
  for (auto [v, pos, target] : {std::tuple{0, 1, 5}, std::tuple{1, 2, 8}}) {
    std::vector<double> logits;
    for (int w = 0; w < 9; ++w) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) s += p.mlm_head(w, j) * states[v](pos, j);
      logits.push_back(s);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l);
    expect += -std::log(std::exp(logits[static_cast<std::size_t>(target)]) / z);
  }
  EXPECT_NEAR(nmlm_loss(states, plan, p).value, expect, 1e-10);
}

TEST(NmlmLoss, EmptyPlanFlagged) {
  ModelDims dims;
  dims.vocab_size = 6;
  dims.d = 4;
  dims.heads = 2;
  dims.ffn = 4;
  dims.max_len = 4;
  dims.depth = 1;
  auto l = nmlm_loss({}, MaskPlan{}, ParamSet::init(dims, 1));
  EXPECT_TRUE(l.empty);
  EXPECT_EQ(l.value, 0.0);
}

TEST(TotalLoss, UnweightedSum) {
  EXPECT_EQ(total_loss(0.0, 0.0), 0.0);
  EXPECT_EQ(total_loss(0.5, 1.5), 2.0);
}

TEST(BatchLoss, TotalIsSumOfParts) {
  auto s = small_setup(3, 1, 2);
  auto schedule = make_schedule(3, {1}, Strategy::PG);
  PretrainHyper hyper;
  hyper.fanouts = {3};
  std::vector<NodeId> batch{0, 1, 2, 3, 5, 8, 13};
  auto full = batch_loss(s.graph, s.tokens, batch, s.params, schedule, hyper, 4);
  EXPECT_GT(full.mlm_terms, 0u);
  EXPECT_NEAR(full.total, full.l1 + full.l2, 1e-12);
  // Switching a loss off also changes the inputs (no [MASK] tokens without
  // NMLM), so each part is only checked against its own total.
  PretrainHyper only_mnp = hyper;
  only_mnp.use_nmlm = false;
  auto a = batch_loss(s.graph, s.tokens, batch, s.params, schedule, only_mnp, 4);
  EXPECT_EQ(a.l2, 0.0);
  EXPECT_EQ(a.total, a.l1);
  PretrainHyper only_mlm = hyper;
  only_mlm.use_mnp = false;
  auto b = batch_loss(s.graph, s.tokens, batch, s.params, schedule, only_mlm, 4);
  EXPECT_EQ(b.l1, 0.0);
  EXPECT_EQ(b.total, b.l2);
}

TEST(BatchLoss, GradientMatchesFiniteDifferences) {
  auto s = small_setup(3, 1, 3);
  auto schedule = make_schedule(3, {1}, Strategy::PG);
  PretrainHyper hyper;
  hyper.fanouts = {3};
  std::vector<NodeId> batch{0, 1, 2, 3, 5, 8, 13, 21};
  ParamSet grads = s.params.zeros_like();
  auto base = batch_loss(s.graph, s.tokens, batch, s.params, schedule, hyper, 11, &grads);
  ASSERT_GT(base.mnp_terms, 0u);
  auto pt = s.params.tensors();
  auto gt = grads.tensors();
  std::mt19937 gen(17);
  int checked = 0;
  while (checked < 20) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, pt.size() - 1)(gen);
    if (pt[t].name.find("bk") != std::string::npos) continue;
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, pt[t].data.size() - 1)(gen);
    const double orig = pt[t].data[i], h = 1e-5;
    pt[t].data[i] = orig + h;
    const double lp = batch_loss(s.graph, s.tokens, batch, s.params, schedule, hyper, 11).total;
    pt[t].data[i] = orig - h;
    const double lm = batch_loss(s.graph, s.tokens, batch, s.params, schedule, hyper, 11).total;
    pt[t].data[i] = orig;
    const double num = (lp - lm) / (2 * h), an = gt[t].data[i];
    const double den = std::max({std::abs(num), std::abs(an), 1e-8});
    EXPECT_LT(std::abs(num - an) / den, 1e-4) << pt[t].name << "[" << i << "]";
    ++checked;
  }
}

TEST(PretrainStep, ZeroLearningRatesLeaveParamsUnchanged) {
  auto s = small_setup(3, 1, 4);
  auto schedule = make_schedule(3, {1}, Strategy::PG);
  PretrainHyper hyper;
  OptimizerConfig oc;
  oc.lr_encoder = 0.0;
  oc.lr_gnn = 0.0;
  for (auto kind : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    oc.kind = kind;
    ParamSet p = s.params;
    Optimizer opt(p, oc);
    std::vector<NodeId> batch{0, 1, 2, 3, 4, 5};
    pretrain_step(s.graph, s.tokens, batch, p, schedule, opt, hyper, 1, 0);
    auto a = p.tensors();
    auto b = s.params.tensors();
    for (std::size_t t = 0; t < a.size(); ++t)
      EXPECT_TRUE(std::equal(a[t].data.begin(), a[t].data.end(), b[t].data.begin())) << a[t].name;
  }
}

TEST(PretrainStep, GroupLearningRatesApplySeparately) {
  auto s = small_setup(3, 1, 5);
  auto schedule = make_schedule(3, {1}, Strategy::PG);
  OptimizerConfig oc;
  oc.lr_encoder = 0.0;
  oc.lr_gnn = 1e-2;
  ParamSet p = s.params;
  Optimizer opt(p, oc);
  pretrain_step(s.graph, s.tokens, std::vector<NodeId>{0, 1, 2, 3, 4, 5, 6, 7}, p, schedule, opt, PretrainHyper{}, 1,
                0);
  auto a = p.tensors();
  auto b = s.params.tensors();
  bool graph_moved = false;
  for (std::size_t t = 0; t < a.size(); ++t) {
    const bool same = std::equal(a[t].data.begin(), a[t].data.end(), b[t].data.begin());
    if (a[t].group == ParamGroup::Encoder) EXPECT_TRUE(same) << a[t].name;
    else graph_moved = graph_moved || !same;
  }
  EXPECT_TRUE(graph_moved);
}

TEST(PretrainStep, Deterministic) {
  auto s = small_setup(3, 1, 6);
  auto schedule = make_schedule(3, {1}, Strategy::PG);
  std::vector<NodeId> batch{0, 1, 2, 3, 4, 5};
  auto once = [&] {
    ParamSet p = s.params;
    OptimizerConfig oc;
    oc.kind = OptimizerKind::Adam;
    Optimizer opt(p, oc);
    double l = 0.0;
    for (long k = 0; k < 3; ++k) l = pretrain_step(s.graph, s.tokens, batch, p, schedule, opt, {}, 9, k).loss.total;
    return std::pair{l, p.token_emb};
  };
  auto a = once();
  auto b = once();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(PretrainStep, NonFiniteLossAborts) {
  auto s = small_setup(3, 1, 6);
  auto schedule = make_schedule(3, {1}, Strategy::PG);
  s.params.mlm_head(4, 0) = std::numeric_limits<double>::quiet_NaN();
  Optimizer opt(s.params, {});
  EXPECT_THROW(pretrain_step(s.graph, s.tokens, std::vector<NodeId>{0, 1, 2, 3}, s.params, schedule, opt, {}, 1, 0),
               NumericError);
}

TEST(Optimizer, StateRoundTripContinuesIdentically) {
  auto s = small_setup(3, 1, 7);
  auto schedule = make_schedule(3, {1}, Strategy::PG);
  OptimizerConfig oc;
  oc.kind = OptimizerKind::Adam;
  std::vector<NodeId> batch{0, 1, 2, 3, 4, 5};
  ParamSet p1 = s.params;
  Optimizer o1(p1, oc);
  pretrain_step(s.graph, s.tokens, batch, p1, schedule, o1, {}, 1, 0);
  ParamSet p2 = p1;
  Optimizer o2(p2, oc);
  o2.restore(o1.state());
  EXPECT_EQ(o2.steps(), 1);
  pretrain_step(s.graph, s.tokens, batch, p1, schedule, o1, {}, 2, 1);
  pretrain_step(s.graph, s.tokens, batch, p2, schedule, o2, {}, 2, 1);
  EXPECT_EQ(p1.token_emb, p2.token_emb);
  Optimizer sgd(p1, OptimizerConfig{});
  EXPECT_THROW(sgd.restore(o1.state()), DataError);
}

TEST(PretrainBatches, AnchorsWithNeighbors) {
  auto s = small_setup(3, 1, 8);
  std::vector<NodeId> ids;
  for (NodeId v = 0; v < 50; ++v) ids.push_back(v);
  auto batches = make_pretrain_batches(s.graph, ids, 32, 3, 0);
  EXPECT_EQ(batches.size(), 4u);  // 16 anchors per batch
  std::set<NodeId> covered;
  for (const auto& b : batches) {
    EXPECT_LE(b.size(), 32u);
    EXPECT_TRUE(std::is_sorted(b.begin(), b.end()));
    covered.insert(b.begin(), b.end());
  }
  for (NodeId v : ids) EXPECT_TRUE(covered.contains(v));
  EXPECT_EQ(batches, make_pretrain_batches(s.graph, ids, 32, 3, 0));
  EXPECT_NE(batches, make_pretrain_batches(s.graph, ids, 32, 3, 1));
  EXPECT_THROW(make_pretrain_batches(s.graph, ids, 1, 3, 0), ConfigError);
}

TEST(PretrainStep, LossDropsOverFiftySteps) {
  double first = 0.0, last = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    auto s = small_setup(3, 1, 20 + seed, 16);
    auto schedule = make_schedule(3, {1}, Strategy::PG);
    OptimizerConfig oc;
    oc.kind = OptimizerKind::Adam;
    oc.lr_encoder = 1e-3;
    Optimizer opt(s.params, oc);
    std::vector<NodeId> ids;
    for (NodeId v = 0; v < 60; ++v) ids.push_back(v);
    long step = 0;
    for (int epoch = 0; step < 50; ++epoch)
      for (const auto& b : make_pretrain_batches(s.graph, ids, 16, seed, epoch)) {
        if (step >= 50) break;
        // Score a fixed batch before and after to avoid batch-to-batch noise.
        if (step == 0) first += batch_loss(s.graph, s.tokens, ids, s.params, schedule, {}, 99).total;
        pretrain_step(s.graph, s.tokens, b, s.params, schedule, opt, {}, mix_seed({seed, static_cast<std::uint64_t>(step)}),
                      step);
        ++step;
      }
    last += batch_loss(s.graph, s.tokens, ids, s.params, schedule, {}, 99).total;
  }
  EXPECT_LT(last, first);
}
