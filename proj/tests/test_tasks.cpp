#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "odin/encoder.hpp"
#include "odin/fusion.hpp"
#include "odin/synth.hpp"
#include "odin/tasks.hpp"
#include "odin/vocab.hpp"

using namespace odin;

namespace {

Vector random_vector(int d, std::mt19937& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = n(gen);
  return v;
}

Vector unit(int d, int i) {
  Vector v = Vector::Zero(d);
  v(i) = 1.0;
  return v;
}

// Independent precision@1 oracle: for each pair, the tail with the highest
// score among distinct tails (excluding the query), smaller id on ties.
double linkpred_oracle(const std::map<NodeId, Vector>& e, const std::vector<TextGraph::Edge>& pairs) {
  std::vector<NodeId> tails;
  for (auto [u, v] : pairs) tails.push_back(v);
  std::sort(tails.begin(), tails.end());
  tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
  int hits = 0;
  for (auto [u, v] : pairs) {
    std::vector<std::pair<double, NodeId>> ranked;
    for (NodeId t : tails)
      if (t != u) ranked.push_back({-e.at(u).dot(e.at(t)), t});
    std::sort(ranked.begin(), ranked.end());
    if (ranked.front().second == v) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace

TEST(Linkpred, CollinearPairsScorePerfectly) {
  std::map<NodeId, Vector> e;
  std::vector<TextGraph::Edge> pairs;
  for (int i = 0; i < 4; ++i) {
    e[i] = unit(4, i);
    e[10 + i] = 2.0 * unit(4, i);
    pairs.push_back({i, 10 + i});
  }
  const auto r = linkpred_eval(e, pairs);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.metric, "PREC");
  EXPECT_EQ(r.count, 4u);
}

TEST(Linkpred, IdenticalEmbeddingsFollowTieRule) {
  std::map<NodeId, Vector> e;
  for (NodeId v : {0, 1, 2, 10, 11, 12}) e[v] = Vector::Ones(3);
  const std::vector<TextGraph::Edge> pairs{{0, 10}, {1, 11}, {2, 12}};
  // Every query picks tail 10, the smallest id.
  EXPECT_NEAR(linkpred_eval(e, pairs).value, 1.0 / 3.0, 1e-15);
}

TEST(Linkpred, MatchesBruteForceOracle) {
  std::mt19937 gen(7);
  for (int rep = 0; rep < 20; ++rep) {
    std::map<NodeId, Vector> e;
    std::vector<TextGraph::Edge> pairs;
    for (int i = 0; i < 8; ++i) {
      e[i] = random_vector(5, gen);
      e[100 + i] = e[i] + 1.5 * random_vector(5, gen);
      pairs.push_back({i, 100 + i});
    }
    EXPECT_DOUBLE_EQ(linkpred_eval(e, pairs).value, linkpred_oracle(e, pairs)) << "rep " << rep;
  }
}

TEST(Linkpred, InvariantToPositiveScaling) {
  std::mt19937 gen(3);
  std::map<NodeId, Vector> e, scaled;
  std::vector<TextGraph::Edge> pairs;
  for (int i = 0; i < 8; ++i) {
    e[i] = random_vector(4, gen);
    e[50 + i] = random_vector(4, gen);
    pairs.push_back({i, 50 + i});
  }
  for (const auto& [k, v] : e) scaled[k] = 4.0 * v;
  EXPECT_DOUBLE_EQ(linkpred_eval(e, pairs).value, linkpred_eval(scaled, pairs).value);
}

TEST(Linkpred, SinglePairBatchIsRejected) {
  std::map<NodeId, Vector> e{{0, unit(2, 0)}, {1, unit(2, 1)}};
  const std::vector<TextGraph::Edge> pairs{{0, 1}};
  EXPECT_THROW(linkpred_eval(e, pairs), DataError);
}

TEST(Linkpred, MissingEmbeddingIsAnError) {
  std::map<NodeId, Vector> e{{0, unit(2, 0)}, {1, unit(2, 1)}, {2, unit(2, 0)}};
  const std::vector<TextGraph::Edge> pairs{{0, 1}, {2, 3}};
  EXPECT_ANY_THROW(linkpred_eval(e, pairs));
}

TEST(Linkpred, BatchedFoldsTrailingSingleton) {
  std::mt19937 gen(11);
  std::map<NodeId, Vector> e;
  std::vector<TextGraph::Edge> pairs;
  for (int i = 0; i < 5; ++i) {
    e[i] = random_vector(3, gen);
    e[20 + i] = random_vector(3, gen);
    pairs.push_back({i, 20 + i});
  }
  const std::vector<TextGraph::Edge> a(pairs.begin(), pairs.begin() + 2), b(pairs.begin() + 2, pairs.end());
  const double expected = (2.0 * linkpred_oracle(e, a) + 3.0 * linkpred_oracle(e, b)) / 5.0;
  const auto r = linkpred_eval_batched(e, pairs, 2);
  EXPECT_NEAR(r.value, expected, 1e-15);
  EXPECT_EQ(r.count, 5u);
  EXPECT_THROW(linkpred_eval_batched(e, pairs, 1), ConfigError);
}

TEST(Classify, SeparableEmbeddingsGivePerfectAccuracy) {
  std::mt19937 gen(1);
  std::map<NodeId, Vector> e;
  std::vector<int> labels;
  TaskSplit split;
  for (NodeId v = 0; v < 80; ++v) {
    const int c = v % 4;
    labels.push_back(c);
    e[v] = 5.0 * unit(6, c) + 0.1 * random_vector(6, gen);
    (v < 16 ? split.train_ids : split.test_ids).push_back(v);
  }
  const auto r = classify_train_eval(e, split, labels, HeadSettings{}, 0);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.metric, "ACC");
  EXPECT_EQ(r.count, 64u);
}

TEST(Classify, RandomLabelsStayNearChance) {
  double total = 0.0;
  for (unsigned seed = 0; seed < 5; ++seed) {
    std::mt19937 gen(seed);
    std::uniform_int_distribution<int> cls(0, 3);
    std::map<NodeId, Vector> e;
    std::vector<int> labels;
    TaskSplit split;
    for (NodeId v = 0; v < 432; ++v) {
      labels.push_back(v < 32 ? v % 4 : cls(gen));
      e[v] = random_vector(16, gen);
      (v < 32 ? split.train_ids : split.test_ids).push_back(v);
    }
    total += classify_train_eval(e, split, labels, HeadSettings{}, seed).value;
  }
  EXPECT_NEAR(total / 5.0, 0.25, 0.1);
}

TEST(Classify, SingleClassTrainingSplitIsRejected) {
  std::map<NodeId, Vector> e;
  std::vector<int> labels{0, 0, 1};
  for (NodeId v = 0; v < 3; ++v) e[v] = unit(3, v);
  TaskSplit split;
  split.train_ids = {0, 1};
  split.test_ids = {2};
  EXPECT_THROW(classify_train_eval(e, split, labels, HeadSettings{}, 0), DataError);
}

TEST(Classify, UnlabeledNodeIsAnError) {
  std::map<NodeId, Vector> e;
  std::vector<int> labels{0, 1, -1};
  for (NodeId v = 0; v < 3; ++v) e[v] = unit(3, v);
  TaskSplit split;
  split.train_ids = {0, 1};
  split.test_ids = {2};
  EXPECT_THROW(classify_train_eval(e, split, labels, HeadSettings{}, 0), DataError);
}

TEST(LinearHead, ZeroHeadPredictsSmallestClass) {
  LinearHead h;
  h.weight = Matrix::Zero(3, 2);
  h.bias = Vector::Zero(3);
  EXPECT_EQ(h.predict(unit(2, 1)), 0);
}

TEST(LinearHead, StandardizesWithTrainingStatistics) {
  std::vector<Vector> x;
  std::vector<int> y;
  for (int i = 0; i < 10; ++i) {
    Vector v(2);
    v << 100.0 + i, -3.0 * i;
    x.push_back(v);
    y.push_back(i < 5 ? 0 : 1);
  }
  const auto h = train_linear_head(x, y, 2, HeadSettings{});
  Vector mean = Vector::Zero(2);
  for (const auto& v : x) mean += v;
  mean /= 10.0;
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(h.standardize(mean)(j), 0.0, 1e-12);
  int correct = 0;
  for (int i = 0; i < 10; ++i) correct += h.predict(x[static_cast<std::size_t>(i)]) == y[static_cast<std::size_t>(i)];
  EXPECT_EQ(correct, 10);
}

TEST(Bm25, HandComputedThreeDocumentTable) {
  const std::vector<std::vector<std::string>> docs{{"a", "b"}, {"a", "c", "c"}, {"b"}};
  const auto s = bm25_scores({"a", "c"}, docs);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_NEAR(s[0], 0.470003629246, 1e-11);
  EXPECT_NEAR(s[1], 1.572561202684, 1e-11);
  EXPECT_DOUBLE_EQ(s[2], 0.0);
}

TEST(Bm25, AbsentTermAndEmptyQueryScoreZero) {
  const std::vector<std::vector<std::string>> docs{{"a", "b"}, {"c"}};
  for (double x : bm25_scores({"zzz"}, docs)) EXPECT_EQ(x, 0.0);
  for (double x : bm25_scores({}, docs)) EXPECT_EQ(x, 0.0);
  EXPECT_THROW(bm25_scores({"a"}, {}), DataError);
}

TEST(Bm25, NonNegativeOnRandomCollections) {
  std::mt19937 gen(5);
  std::uniform_int_distribution<int> word(0, 9), len(0, 6);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::vector<std::string>> docs(6);
    for (auto& d : docs)
      for (int i = len(gen); i > 0; --i) d.push_back("w" + std::to_string(word(gen)));
    std::vector<std::string> q;
    for (int i = 0; i < 3; ++i) q.push_back("w" + std::to_string(word(gen)));
    for (double x : bm25_scores(q, docs)) EXPECT_GE(x, 0.0);
  }
}

TEST(Bm25, IncreasesWithTermFrequencyAtFixedLength) {
  const std::vector<std::vector<std::string>> docs{
      {"a", "x", "x", "x"}, {"a", "a", "x", "x"}, {"a", "a", "a", "x"}, {"y", "y", "y", "y"}};
  const auto s = bm25_scores({"a"}, docs);
  EXPECT_LT(s[0], s[1]);
  EXPECT_LT(s[1], s[2]);
}

TEST(Retrieval, OwnLabelEmbeddingsGivePerfectRecall) {
  std::map<int, Vector> labels;
  std::map<NodeId, Vector> nodes;
  std::map<NodeId, int> gold;
  for (int c = 0; c < 10; ++c) {
    labels[c] = unit(10, c);
    nodes[c] = 3.0 * unit(10, c);
    gold[c] = c;
  }
  const auto r = retrieval_eval(nodes, labels, gold, 1);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.metric, "Recall@1");
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Retrieval, MatchesTopKOracleOverFortyLabels) {
  std::mt19937 gen(9);
  std::map<int, Vector> labels;
  for (int c = 0; c < 40; ++c) labels[c] = random_vector(6, gen);
  std::map<NodeId, Vector> nodes;
  std::map<NodeId, int> gold;
  std::uniform_int_distribution<int> pick(0, 39);
  for (NodeId v = 0; v < 200; ++v) {
    gold[v] = pick(gen);
    nodes[v] = labels[gold[v]] + 1.2 * random_vector(6, gen);
  }
  for (int k : {1, 5, 10}) {
    int hits = 0;
    for (const auto& [v, g] : gold) {
      std::vector<std::pair<double, int>> ranked;
      for (const auto& [c, e] : labels) ranked.push_back({-nodes[v].dot(e), c});
      std::sort(ranked.begin(), ranked.end());
      for (int i = 0; i < k; ++i)
        if (ranked[static_cast<std::size_t>(i)].second == g) ++hits;
    }
    EXPECT_DOUBLE_EQ(retrieval_eval(nodes, labels, gold, k).value, hits / 200.0) << "k=" << k;
  }
}

TEST(Retrieval, ClipsKToLabelCountWithWarning) {
  std::map<int, Vector> labels;
  std::map<NodeId, Vector> nodes;
  std::map<NodeId, int> gold;
  std::mt19937 gen(2);
  for (int c = 0; c < 10; ++c) labels[c] = random_vector(3, gen);
  for (NodeId v = 0; v < 20; ++v) {
    nodes[v] = random_vector(3, gen);
    gold[v] = v % 10;
  }
  const auto r = retrieval_eval(nodes, labels, gold, 50);
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("clipped"), std::string::npos);
  EXPECT_THROW(retrieval_eval(nodes, labels, gold, 0), ConfigError);
}

TEST(Rerank, SingleCandidateListContainingGoldIsAHit) {
  std::map<NodeId, std::vector<int>> cands{{0, {3}}};
  std::map<NodeId, Vector> nodes{{0, unit(2, 0)}};
  std::map<int, Vector> labels{{3, -unit(2, 0)}};
  const auto r = rerank_eval(cands, nodes, labels, {{0, 3}});
  EXPECT_DOUBLE_EQ(r.value, 1.0);
  EXPECT_EQ(r.metric, "PRC");
}

TEST(Rerank, GoldAbsentCountsAsMissAndIsTallied) {
  std::map<NodeId, std::vector<int>> cands{{0, {1, 2}}, {1, {0, 2}}};
  std::map<NodeId, Vector> nodes{{0, unit(3, 0)}, {1, unit(3, 0)}};
  std::map<int, Vector> labels{{0, unit(3, 0)}, {1, unit(3, 1)}, {2, unit(3, 2)}};
  const auto r = rerank_eval(cands, nodes, labels, {{0, 0}, {1, 0}});
  EXPECT_DOUBLE_EQ(r.value, 0.5);
  EXPECT_EQ(r.gold_absent, 1u);
}

TEST(Rerank, PicksArgmaxAmongFiveCandidates) {
  std::mt19937 gen(4);
  std::map<int, Vector> labels;
  for (int c = 0; c < 12; ++c) labels[c] = random_vector(4, gen);
  std::map<NodeId, std::vector<int>> cands;
  std::map<NodeId, Vector> nodes;
  std::map<NodeId, int> gold;
  int hits = 0;
  for (NodeId v = 0; v < 100; ++v) {
    std::vector<int> all(12);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), gen);
    all.resize(5);
    cands[v] = all;
    gold[v] = all[static_cast<std::size_t>(v % 5)];
    nodes[v] = labels[gold[v]] + random_vector(4, gen);
    int best = all[0];
    for (int c : all)
      if (nodes[v].dot(labels[c]) > nodes[v].dot(labels[best])) best = c;
    hits += best == gold[v];
  }
  EXPECT_DOUBLE_EQ(rerank_eval(cands, nodes, labels, gold).value, hits / 100.0);
}

TEST(RetrieveCandidates, ExactMatchesComeFirstThenBm25) {
  const std::map<int, std::vector<std::string>> labels{
      {0, {"deep", "learning"}}, {1, {"graph"}}, {2, {"graph", "graph", "theory", "graph"}}, {3, {"cooking"}}};
  const std::vector<std::string> text{"graph", "graph", "deep", "learning", "methods"};
  const auto c = retrieve_candidates(text, labels, 3);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0], 0);
  EXPECT_EQ(c[1], 1);
  EXPECT_EQ(c[2], 2);
  EXPECT_EQ(retrieve_candidates(text, labels, 1), std::vector<int>{0});
  EXPECT_THROW(retrieve_candidates(text, labels, 0), ConfigError);
}

TEST(EvalReport, JsonLineRoundTrip) {
  EvalReport r;
  r.task = "rerank";
  r.metric = "PRC";
  r.value = 0.123456789012345;
  r.seed = 42;
  r.config_digest = "abc";
  r.count = 17;
  r.gold_absent = 3;
  r.warnings = {"one", "two"};
  const auto line = r.to_json_line();
  EXPECT_EQ(line.find('\n'), std::string::npos);
  const auto back = EvalReport::from_json_line(line);
  EXPECT_EQ(back.to_json_line(), line);
  EXPECT_EQ(back.value, r.value);
  EXPECT_THROW(EvalReport::from_json_line("{not json"), DataError);
  EXPECT_THROW(EvalReport::from_json_line("{\"task\":\"x\"}"), DataError);
}

TEST(Encode, TextsMatchPlainTransformerWithoutGraphLayers) {
  SyntheticSpec spec;
  spec.n_nodes = 30;
  const auto graph = generate_synthetic(spec);
  const auto vocab = build_vocab(graph.texts(), 1);
  ModelDims dims;
  dims.vocab_size = vocab.size();
  dims.d = 8;
  dims.heads = 2;
  dims.ffn = 16;
  dims.max_len = 8;
  dims.depth = 6;
  dims.graph_stages = 0;
  const auto params = ParamSet::init(dims, 3);
  const auto schedule = schedule_preset("text-only");
  const auto tokens = tokenize_graph(graph, vocab, dims.max_len);
  std::vector<std::vector<int>> seqs;
  for (NodeId v = 0; v < 5; ++v) seqs.push_back(tokens.at(static_cast<std::size_t>(v)));
  const auto out = encode_texts(seqs, params, schedule);
  ASSERT_EQ(out.size(), 5u);
  std::vector<NodeId> ids{0, 1, 2, 3, 4};
  const auto nodes = encode_nodes(graph, tokens, params, schedule, ids, EncodeSettings{});
  for (std::size_t i = 0; i < 5; ++i) {
    const Matrix h = transformer_stack(embed(seqs[i], params), params);
    EXPECT_LT((out[i] - h.row(0).transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((nodes.at(static_cast<NodeId>(i)) - out[i]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Encode, DeterministicUnderFixedSeed) {
  SyntheticSpec spec;
  spec.n_nodes = 60;
  const auto graph = generate_synthetic(spec);
  const auto vocab = build_vocab(graph.texts(), 1);
  const auto schedule = schedule_preset("light-2");
  ModelDims dims;
  dims.vocab_size = vocab.size();
  dims.d = 8;
  dims.heads = 2;
  dims.ffn = 16;
  dims.max_len = 8;
  dims.depth = schedule.depth;
  dims.graph_stages = static_cast<int>(schedule.tg_positions.size());
  const auto params = ParamSet::init(dims, 8);
  const auto tokens = tokenize_graph(graph, vocab, dims.max_len);
  std::vector<NodeId> ids(40);
  std::iota(ids.begin(), ids.end(), 0);
  EncodeSettings s;
  s.seed = 77;
  const auto a = encode_nodes(graph, tokens, params, schedule, ids, s);
  const auto b = encode_nodes(graph, tokens, params, schedule, ids, s);
  ASSERT_EQ(a.size(), 40u);
  for (const auto& [v, e] : a) EXPECT_EQ(e, b.at(v));
}
