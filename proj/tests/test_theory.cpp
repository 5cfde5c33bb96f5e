#include <gtest/gtest.h>

#include <random>

#include "odin/encoder.hpp"
#include "odin/fusion.hpp"
#include "odin/theory.hpp"
#include "odin/vocab.hpp"
#include "test_util.hpp"

using namespace odin;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

TextGraph cycle(int n) {
  std::vector<std::string> texts;
  std::vector<TextGraph::Edge> edges;
  for (int i = 0; i < n; ++i) {
    texts.push_back("t" + std::to_string(i));
    edges.emplace_back(i, (i + 1) % n);
  }
  return TextGraph::build(texts, edges);
}

std::map<NodeId, Vector> random_features(int n, int d, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::map<NodeId, Vector> out;
  for (NodeId v = 0; v < n; ++v) {
    Vector x(d);
    for (int j = 0; j < d; ++j) x(j) = g(gen);
    out[v] = x;
  }
  return out;
}

std::vector<NodeId> iota_ids(int n) {
  std::vector<NodeId> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  return ids;
}

ModelDims small_dims(int vocab, int depth, int stages) {
  ModelDims dims;
  dims.vocab_size = vocab;
  dims.d = 8;
  dims.heads = 2;
  dims.ffn = 16;
  dims.max_len = 16;
  dims.depth = depth;
  dims.graph_stages = stages;
  return dims;
}

}  // namespace

TEST(Cosine, HandExamples) {
  const std::vector<Vector> orth{vec({1, 0}), vec({0, 2})};
  EXPECT_DOUBLE_EQ(mean_pairwise_cosine(orth), 0.0);
  const std::vector<Vector> same{vec({1, 2}), vec({2, 4}), vec({0.5, 1})};
  EXPECT_NEAR(mean_pairwise_cosine(same), 1.0, 1e-15);
  // Pairs: (a,b)=1/sqrt2, (a,c)=0, (b,c)=1/sqrt2.
  const std::vector<Vector> mix{vec({1, 0}), vec({1, 1}), vec({0, 3})};
  EXPECT_NEAR(mean_pairwise_cosine(mix), 2.0 / (3.0 * std::sqrt(2.0)), 1e-15);
}

TEST(Cosine, ZeroVectorConvention) {
  const std::vector<Vector> zeros{Vector::Zero(3), Vector::Zero(3)};
  EXPECT_DOUBLE_EQ(mean_pairwise_cosine(zeros), 1.0);
  const std::vector<Vector> one_zero{Vector::Zero(2), vec({1, 1})};
  EXPECT_DOUBLE_EQ(mean_pairwise_cosine(one_zero), 0.0);
  const std::vector<Vector> single{vec({1, 1})};
  EXPECT_THROW(mean_pairwise_cosine(single), ConfigError);
}

TEST(Baseline, MatchesHandAveragingOnCycle) {
  const auto g = cycle(10);
  const auto init = random_features(10, 3, 4);
  const auto probe = iota_ids(10);
  const auto profile = baseline_profile(g, init, probe, 3);
  ASSERT_EQ(profile.cosine.size(), 3u);
  std::vector<Vector> h;
  for (NodeId v = 0; v < 10; ++v) h.push_back(init.at(v));
  for (int layer = 0; layer < 3; ++layer) {
    std::vector<Vector> next(10);
    for (int v = 0; v < 10; ++v)
      next[static_cast<std::size_t>(v)] =
          (h[static_cast<std::size_t>(v)] + h[static_cast<std::size_t>((v + 1) % 10)] +
           h[static_cast<std::size_t>((v + 9) % 10)]) / 3.0;
    h = next;
    double sum = 0.0;
    int pairs = 0;
    for (int i = 0; i < 10; ++i)
      for (int j = i + 1; j < 10; ++j, ++pairs)
        sum += h[static_cast<std::size_t>(i)].dot(h[static_cast<std::size_t>(j)]) /
               (h[static_cast<std::size_t>(i)].norm() * h[static_cast<std::size_t>(j)].norm());
    EXPECT_NEAR(profile.cosine[static_cast<std::size_t>(layer)], sum / pairs, 1e-12) << "layer " << layer;
  }
  EXPECT_EQ(profile.model, "deep-gnn-baseline");
  EXPECT_TRUE(profile.warnings.empty());
}

TEST(Baseline, CollapsesOnConnectedGraphs) {
  for (unsigned seed = 0; seed < 5; ++seed) {
    const auto g = testutil::random_graph(40, 0.2, seed);
    if (!g.is_connected()) continue;
    const auto profile = baseline_profile(g, random_features(40, 4, seed), iota_ids(40), 16);
    EXPECT_GT(profile.cosine.back(), 0.99) << "seed " << seed;
    EXPECT_GT(profile.cosine.back(), profile.cosine.front()) << "seed " << seed;
  }
}

TEST(Baseline, ConstantFeaturesStayAtOne) {
  const auto g = cycle(12);
  std::map<NodeId, Vector> init;
  for (NodeId v = 0; v < 12; ++v) init[v] = vec({1, -2});
  for (double c : baseline_profile(g, init, iota_ids(12), 5).cosine) EXPECT_NEAR(c, 1.0, 1e-15);
}

TEST(Baseline, WarnsOnDisconnectedGraphAndRejectsSmallProbe) {
  std::vector<std::string> texts(12, "x");
  std::vector<TextGraph::Edge> edges{{0, 1}, {2, 3}};
  const auto g = TextGraph::build(texts, edges);
  const auto profile = baseline_profile(g, random_features(12, 2, 1), iota_ids(12), 2);
  EXPECT_EQ(profile.warnings.size(), 1u);
  EXPECT_THROW(baseline_profile(g, random_features(12, 2, 1), iota_ids(5), 2), ConfigError);
}

TEST(Reduction, TransformerReductionHoldsAndFaultIsDetected) {
  const auto g = testutil::random_graph(30, 0.15, 2);
  const auto vocab = build_vocab(g.texts(), 1);
  const auto tokens = tokenize_graph(g, vocab, 8);
  const auto params = ParamSet::init(small_dims(vocab.size(), 4, 1), 3);
  const std::vector<NodeId> nodes{0, 5, 9, 17, 28};
  EXPECT_LT(transformer_reduction_check(g, tokens, params, nodes).max_deviation, 1e-12);
  const auto faulty = make_schedule(4, {1}, Strategy::PG);
  EXPECT_GT(transformer_reduction_check(g, tokens, params, nodes, &faulty).max_deviation, 1e-3);
}

TEST(Reduction, GnnReductionHoldsPerLayer) {
  const auto g = testutil::random_graph(30, 0.1, 6);
  std::mt19937 gen(6);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Matrix> w1s, w2s;
  for (int l = 0; l < 2; ++l) {
    Matrix a(4, 4), b(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        a(i, j) = n(gen);
        b(i, j) = n(gen);
      }
    w1s.push_back(a);
    w2s.push_back(b);
  }
  const auto r = gnn_reduction_check(w1s, w2s, g, random_features(30, 4, 6));
  EXPECT_LT(r.max_deviation, 1e-12);
  EXPECT_EQ(r.per_layer.size(), 3u);  // input states plus two layers
}

TEST(Separation, StructuralAndTextualInstances) {
  const auto schedule = light_preset("light-2");
  int structural = 0, textual = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto params = ParamSet::init(small_dims(64, schedule.depth, 1), seed);
    const auto st = structural_separation_check(params, schedule, make_structural_instance(64, 8, seed));
    EXPECT_LT(st.reduced, 1e-12);
    structural += st.odin > 1e-3;
    const auto tx = textual_separation_check(params, schedule, make_textual_instance(64, 8, 4, false, seed));
    EXPECT_LT(tx.reduced, 1e-12);
    textual += tx.odin > 1e-3;
    const auto same = textual_separation_check(params, schedule, make_textual_instance(64, 8, 4, true, seed));
    EXPECT_LT(same.odin, 1e-12);
  }
  EXPECT_GE(structural, 4);
  EXPECT_GE(textual, 4);
}

TEST(Separation, InstancesHaveTheAdvertisedShape) {
  const auto st = make_structural_instance(64, 8, 1);
  EXPECT_EQ(st.tokens.at(static_cast<std::size_t>(st.u)), st.tokens.at(static_cast<std::size_t>(st.v)));
  EXPECT_EQ(st.graph.degree(st.u), 2u);
  EXPECT_EQ(st.graph.degree(st.v), 2u);
  const auto tx = make_textual_instance(64, 8, 4, false, 1);
  EXPECT_EQ(tx.graph.num_nodes(), 5u);
  EXPECT_EQ(tx.graph.degree(tx.u), 1u);
  EXPECT_NE(tx.tokens.at(static_cast<std::size_t>(tx.u)), tx.tokens.at(static_cast<std::size_t>(tx.v)));
  const auto same = make_textual_instance(64, 8, 4, true, 1);
  EXPECT_EQ(same.tokens.at(static_cast<std::size_t>(same.u)), same.tokens.at(static_cast<std::size_t>(same.v)));
}

TEST(Suite, SmallRunPassesAndWritesProfiles) {
  TheorySuiteOptions o;
  o.seeds = 1;
  o.separation_seeds = 4;
  o.separation_required = 4;
  const auto r = run_theory_suite(o);
  ASSERT_GE(r.checks.size(), 10u);
  for (const auto& c : r.checks) EXPECT_TRUE(c.passed) << c.name << " = " << c.value;
  ASSERT_EQ(r.profiles.size(), 2u);
  const auto csv = profiles_to_csv(r.profiles);
  EXPECT_EQ(csv.rfind("model,layer,cosine\n", 0), 0u);
  std::size_t lines = 0;
  for (char ch : csv) lines += ch == '\n';
  EXPECT_EQ(lines, 1 + r.profiles[0].cosine.size() + r.profiles[1].cosine.size());
}
