#include "tagx/eval.hpp"
#include "tagx/synthetic.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace tagx;
using tagx::test::make_graph;

namespace {

// Path 0-1-2-3 with scalar features (1, -1, 2, -3). The hidden layer splits
// the sign into two channels and the output compares them.
struct PathFixture {
  TextAttributedGraph g;
  GcnModel gnn;
};

PathFixture path_fixture() {
  Matrix x(4, 1);
  x << 1, -1, 2, -3;
  PathFixture f{make_graph(4, {{0, 1}, {1, 2}, {2, 3}}, 2, x), zero_gcn(1, 2, 2)};
  f.gnn.weights[0] << 1, -1;
  f.gnn.weights[1] = Matrix::Identity(2, 2);
  f.gnn.weights[2] << 1, -1, -1, 1;
  return f;
}

struct CliqueFixture {
  TextAttributedGraph g;
  GcnModel gnn;
  ProjectorModel projector;
  MockBackend backend;
};

CliqueFixture clique_fixture() {
  auto g = make_two_cliques(5);
  TrainConfig tc;
  auto gnn = train_gcn(g, tc).model;
  MockOptions mo;
  mo.dim = 16;
  MockBackend backend(mo);
  EmbeddingTable emb{gcn_forward(gnn, g).embeddings, "gcn"};
  TextEmbeddingTable text;
  text.vectors.resize(static_cast<Eigen::Index>(g.num_nodes()), 16);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    text.vectors.row(static_cast<Eigen::Index>(v)) = backend.embed_text(g.text(static_cast<NodeId>(v))).transpose();
  }
  ProjectorTrainConfig pc;
  pc.epochs = 50;
  auto projector = train_projector(g, emb, text, pc).model;
  return {std::move(g), std::move(gnn), std::move(projector), std::move(backend)};
}

class FlakyBackend final : public LlmBackend {
 public:
  BackendDescriptor descriptor() const override { return {"flaky", 16, 1000, 4, true}; }
  Vector embed_text(const std::string&) const override { return Vector::Unit(16, 0); }
  std::string generate(const HybridPrompt& p, const GenerationConfig&) const override {
    if (p.target % 2 == 0) throw BackendError("timeout");
    return "";
  }
};

}  // namespace

TEST(Metrics, IdentityExplainerIsFaithful) {
  for (unsigned seed : {0u, 1u, 2u}) {
    SyntheticConfig sc;
    sc.seed = seed;
    const auto g = make_synthetic_graph(sc);
    const auto gnn = init_gcn(g.feature_dim(), 8, g.num_classes(), seed);
    NodeSet all;
    for (std::size_t v = 0; v < g.num_nodes(); ++v) all.insert(static_cast<NodeId>(v));
    std::map<NodeId, NodeSet> results;
    for (NodeId v : g.splits().test) results[v] = all;
    EXPECT_EQ(fidelity(gnn, g, results), 1.0);
  }
}

TEST(Metrics, PathSingletonFidelity) {
  // Full-graph logit margins are (0.169, 0.029, -0.402, -0.487), so the
  // predictions are (0, 0, 1, 1). On singletons they are the feature signs
  // (0, 1, 0, 1). Nodes 0 and 3 agree.
  const auto f = path_fixture();
  EXPECT_EQ(predict_all(f.gnn, f.g), (std::vector<int>{0, 0, 1, 1}));
  std::map<NodeId, NodeSet> results;
  for (NodeId v = 0; v < 4; ++v) results[v] = baseline_node(f.g, v);
  EXPECT_DOUBLE_EQ(fidelity(f.gnn, f.g, results), 0.5);
  EXPECT_FALSE(faithful(f.gnn, f.g, 2, {2}, predict_all(f.gnn, f.g)));
  EXPECT_TRUE(faithful(f.gnn, f.g, 3, {3}, predict_all(f.gnn, f.g)));
  EXPECT_TRUE(faithful(f.gnn, f.g, 2, {1, 2, 3}, predict_all(f.gnn, f.g)));
}

TEST(Metrics, FidelityRequiresTargetInSet) {
  const auto f = path_fixture();
  EXPECT_THROW(fidelity(f.gnn, f.g, {{0, {1, 2}}}), Error);
}

TEST(Metrics, AverageSize) {
  EXPECT_DOUBLE_EQ(avg_size({{0, {0, 1}}, {1, {1, 2, 3, 4}}}), 3.0);
  EXPECT_THROW(avg_size({}), Error);
}

TEST(Baselines, NodeIsSingleton) {
  const auto g = make_graph(3, {{0, 1}});
  EXPECT_EQ(baseline_node(g, 0), NodeSet{0});
  EXPECT_EQ(baseline_node(g, 2), NodeSet{2});
}

TEST(Baselines, RandomSizes) {
  // Star with 20 leaves: the depth-2 tree of the center has 21 unique nodes.
  std::vector<Edge> edges;
  for (NodeId i = 1; i <= 20; ++i) edges.emplace_back(0, i);
  const auto g = make_graph(21, edges);
  const auto half = baseline_random(g, 0, 0.5, 2, 7);
  EXPECT_EQ(half.size(), 11u);
  EXPECT_TRUE(half.count(0));
  EXPECT_EQ(half, baseline_random(g, 0, 0.5, 2, 7));
  EXPECT_NE(half, baseline_random(g, 0, 0.5, 2, 8));
  EXPECT_EQ(baseline_random(g, 0, 1.0, 2, 7).size(), 21u);
  EXPECT_EQ(baseline_random(g, 0, 0.25, 2, 7).size(), 6u);
  EXPECT_EQ(baseline_random(make_graph(2, {}), 1, 0.5, 2, 0), NodeSet{1});
  EXPECT_THROW(baseline_random(g, 0, 0.0, 2, 0), Error);
}

TEST(Methods, Parse) {
  EXPECT_EQ(parse_method("node").kind, MethodKind::node);
  EXPECT_EQ(parse_method("random").q, 0.5);
  EXPECT_EQ(parse_method("random(0.25)").q, 0.25);
  EXPECT_EQ(parse_method("random(50%)").q, 0.5);
  EXPECT_EQ(parse_method("llm_pr_po").kind, MethodKind::llm_pr_po);
  EXPECT_TRUE(parse_method("llm_text").uses_backend());
  EXPECT_FALSE(parse_method("random(0.5)").uses_backend());
  EXPECT_EQ(parse_method("random(0.25)").name(), "random(0.25)");
  EXPECT_THROW(parse_method("gnnexplainer"), Error);
  EXPECT_THROW(parse_method("random(2)"), Error);
}

TEST(Benchmark, NodeAndRandomRows) {
  const auto f = path_fixture();
  BenchmarkConfig cfg;
  cfg.methods = {parse_method("node"), parse_method("random(0.5)"), parse_method("random(1)")};
  const auto r = run_benchmark(f.g, f.gnn, nullptr, nullptr, default_template(), cfg);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].method, "node");
  EXPECT_EQ(r.rows[0].population, "test");
  EXPECT_DOUBLE_EQ(r.rows[0].size, 1.0);
  EXPECT_DOUBLE_EQ(r.rows[0].fidelity, 0.5);
  EXPECT_EQ(r.rows[1].seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
  EXPECT_GE(r.rows[1].fidelity_std, 0.0);
  // q = 1 keeps the whole depth-2 neighborhood: sizes 3, 4, 4, 3.
  EXPECT_DOUBLE_EQ(r.rows[2].size, 3.5);
  EXPECT_DOUBLE_EQ(r.rows[2].size_std, 0.0);
  EXPECT_TRUE(r.all_methods_succeeded());
  EXPECT_NE(report_to_markdown(r).find("| node | test |"), std::string::npos);
}

TEST(Benchmark, TwoCliquesFullMethodIsFaithful) {
  const auto fx = clique_fixture();
  BenchmarkConfig cfg;
  cfg.methods = {parse_method("llm_pr_po"), parse_method("llm_pr"), parse_method("llm_text")};
  const auto r = run_benchmark(fx.g, fx.gnn, &fx.projector, &fx.backend, default_template(), cfg);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[0].num_targets, fx.g.splits().test.size());
  EXPECT_EQ(r.rows[0].successes, r.rows[0].num_targets);
  EXPECT_DOUBLE_EQ(r.rows[0].fidelity, 1.0);
}

TEST(Benchmark, ReportIsDeterministicAcrossWorkerCounts) {
  const auto fx = clique_fixture();
  BenchmarkConfig cfg;
  cfg.methods = {parse_method("node"), parse_method("random(0.5)"), parse_method("llm_pr_po")};
  const auto a = report_to_json(run_benchmark(fx.g, fx.gnn, &fx.projector, &fx.backend, default_template(), cfg));
  const auto b = report_to_json(run_benchmark(fx.g, fx.gnn, &fx.projector, &fx.backend, default_template(), cfg));
  EXPECT_EQ(a.dump(), b.dump());
  cfg.workers = 3;
  const auto c = report_to_json(run_benchmark(fx.g, fx.gnn, &fx.projector, &fx.backend, default_template(), cfg));
  EXPECT_EQ(a["rows"].dump(), c["rows"].dump());

  tagx::test::TempDir dir;
  auto r = run_benchmark(fx.g, fx.gnn, &fx.projector, &fx.backend, default_template(), cfg);
  r.wall_clock_seconds = 12.5;
  write_report(r, dir.path());
  std::ifstream in(dir / "report.json");
  const auto written = nlohmann::json::parse(in);
  EXPECT_EQ(written.dump(), c.dump());
  EXPECT_TRUE(std::filesystem::exists(dir / "report.md"));
  std::ifstream meta(dir / "report.meta.json");
  EXPECT_EQ(nlohmann::json::parse(meta)["wall_clock_seconds"], 12.5);
}

TEST(Benchmark, FailuresAreCountedNotImputed) {
  const auto fx = clique_fixture();
  const FlakyBackend backend;
  BenchmarkConfig cfg;
  cfg.methods = {parse_method("llm_text")};
  cfg.workers = 2;
  const auto r = run_benchmark(fx.g, fx.gnn, nullptr, &backend, default_template(), cfg);
  const auto& row = r.rows.at(0);
  std::size_t odd = 0;
  for (NodeId v : fx.g.splits().test) odd += v % 2;
  EXPECT_EQ(row.successes, odd);
  EXPECT_EQ(row.failures.size(), row.num_targets - odd);
  for (const auto& f : row.failures) {
    EXPECT_EQ(f.target % 2, 0);
    EXPECT_NE(f.error.find("generate"), std::string::npos);
  }
}

TEST(Benchmark, AllFailuresMarkTheReport) {
  const auto fx = clique_fixture();
  const FlakyBackend backend;
  BenchmarkConfig cfg;
  cfg.methods = {parse_method("llm_text")};
  // Keep only even targets, which always fail.
  GraphParts parts;
  parts.name = "evens";
  parts.features = fx.g.features();
  parts.labels = fx.g.labels();
  parts.class_names = fx.g.class_names();
  parts.texts = fx.g.texts();
  parts.edges = fx.g.edges();
  parts.splits.test = {0, 2, 4};
  const TextAttributedGraph g(std::move(parts));
  const auto r = run_benchmark(g, fx.gnn, nullptr, &backend, default_template(), cfg);
  EXPECT_EQ(r.rows.at(0).successes, 0u);
  EXPECT_FALSE(r.all_methods_succeeded());
  const auto j = report_to_json(r);
  EXPECT_TRUE(j["rows"][0]["fidelity"].is_null());
  EXPECT_TRUE(j["rows"][0]["size"].is_null());
}

TEST(Benchmark, DummyLabelGivesTwoPopulations) {
  GraphParts parts;
  parts.name = "claims";
  parts.features = Matrix::Identity(5, 5);
  parts.labels = {0, 1, 2, 2, 0};
  parts.class_names = {"true", "false", "entity"};
  parts.dummy_label = 2;
  parts.texts = {"a", "b", "c", "d", "e"};
  parts.edges = {{0, 2}, {1, 2}, {3, 4}};
  parts.splits.test = {0, 1, 2, 3, 4};
  const TextAttributedGraph g(std::move(parts));
  const auto gnn = init_gcn(5, 4, 3, 0);
  BenchmarkConfig cfg;
  cfg.methods = {parse_method("node")};
  const auto r = run_benchmark(g, gnn, nullptr, nullptr, default_template(), cfg);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].population, "labeled");
  EXPECT_EQ(r.rows[0].num_targets, 3u);
  EXPECT_EQ(r.rows[1].population, "all");
  EXPECT_EQ(r.rows[1].num_targets, 5u);
}

TEST(Benchmark, TargetSubsamplingAndP) {
  SyntheticConfig sc;
  const auto g = make_synthetic_graph(sc);
  BenchmarkConfig cfg;
  cfg.num_targets = 5;
  cfg.target_seed = 3;
  const auto t = evaluation_targets(g, cfg);
  EXPECT_EQ(t.size(), 5u);
  EXPECT_EQ(t, evaluation_targets(g, cfg));
  for (NodeId v : t) {
    EXPECT_TRUE(std::find(g.splits().test.begin(), g.splits().test.end(), v) != g.splits().test.end());
  }
  EXPECT_EQ(reference_explanation_size("cora"), 17.4);
  EXPECT_FALSE(reference_explanation_size("synthetic").has_value());

  cfg.methods = {parse_method("node")};
  const auto gnn = init_gcn(g.feature_dim(), 8, g.num_classes(), 0);
  EXPECT_EQ(run_benchmark(g, gnn, nullptr, nullptr, default_template(), cfg).config["p"], 0.5);
  cfg.p = 0.3;
  EXPECT_EQ(run_benchmark(g, gnn, nullptr, nullptr, default_template(), cfg).config["p"], 0.3);
}

TEST(Benchmark, LlmMethodsNeedBackend) {
  const auto f = path_fixture();
  BenchmarkConfig cfg;
  cfg.methods = {parse_method("llm_pr")};
  EXPECT_THROW(run_benchmark(f.g, f.gnn, nullptr, nullptr, default_template(), cfg), Error);
}
