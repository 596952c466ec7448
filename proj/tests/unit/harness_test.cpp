#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace pt_test;

namespace {

ToyModel fast_model() {
  ToyModelConfig c;
  c.d_features = 8;
  auto m = generate_toy_model(c, 2024);
  for (auto& tc : m.bank.layers) tc.encoder_bias.array() += 0.3;
  return m;
}

RunConfig partial_config() {
  RunConfig c;
  c.partial_corpus = true;
  return c;
}

fs::path small_corpus(const TempDir& dir) {
  auto p = dir / "corpus";
  write_corpus(synthetic_corpus({"KR", "US"}, {"KR", "KP", "US"}, 2), p);
  return p;
}

std::map<std::string, std::string> without_manifest(std::map<std::string, std::string> t) {
  t.erase("manifest.json");
  return t;
}

}  // namespace

TEST(Harness, SampleCorpusRun) {
  TempDir dir("run_sample");
  auto out = dir / "out";
  auto manifest = run_experiment(fast_model(), fs::path(PATHTRACE_DATA) / "sample_corpus", out, partial_config());
  EXPECT_EQ(manifest.model_digest.rfind("sha256:", 0), 0u);
  EXPECT_EQ(manifest.model_digest.size(), 7u + 64u);

  std::size_t graphs = 0;
  for (const auto& e : fs::directory_iterator(out / "graphs")) graphs += e.path().extension() == ".graph";
  EXPECT_EQ(graphs, 9u);
  for (const char* f : {"matrix_fixed_language.csv", "matrix_fixed_language.json", "matrix_fixed_culture.csv",
                        "table_fixed_culture.csv", "stats_fixed_language.csv", "stats_fixed_culture.json",
                        "slice_korea.csv", "slice_similar_pairs.json", "report.html", "manifest.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;

  auto m = matrix_from_json(nlohmann::json::parse(slurp(out / "matrix_fixed_language.json")));
  EXPECT_EQ(m.row_pairs.size(), 3u);
  EXPECT_EQ(m.columns.size(), 3u);
  for (const auto& c : m.cells) {
    ASSERT_TRUE(c);
    EXPECT_GE(*c, 0.0);
    EXPECT_LE(*c, 1.0);
  }
  auto j = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_TRUE(j.contains("timestamps"));
  EXPECT_EQ(j["config"]["trace.logit_nodes"], "5");
  EXPECT_NE(slurp(out / "report.html").find("<svg"), std::string::npos);
}

TEST(Harness, RerunIsByteIdenticalApartFromTimestamps) {
  TempDir dir("run_rerun");
  auto corpus = small_corpus(dir);
  auto cfg = partial_config();
  run_experiment(fast_model(), corpus, dir / "a", cfg);
  cfg.workers = 4;
  run_experiment(fast_model(), corpus, dir / "b", cfg);
  auto a = tree_contents(dir / "a"), b = tree_contents(dir / "b");
  EXPECT_EQ(without_manifest(a), without_manifest(b));
  auto ja = nlohmann::json::parse(a.at("manifest.json")), jb = nlohmann::json::parse(b.at("manifest.json"));
  ja.erase("timestamps");
  jb.erase("timestamps");
  EXPECT_EQ(ja, jb);
}

TEST(Harness, MissingSetFailsWithoutOutput) {
  TempDir dir("run_missing");
  auto corpus = small_corpus(dir);
  fs::remove(corpus / "US__KP.qs.jsonl");
  try {
    run_experiment(fast_model(), corpus, dir / "out", partial_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingPath);
    EXPECT_NE(std::string(e.what()).find("(US, KP)"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(dir / "out"));
  for (const auto& e : fs::directory_iterator(dir.path()))
    EXPECT_EQ(e.path().filename().string().find(".out.partial"), std::string::npos);
}

TEST(Harness, StrictCorpusRejectsPartialData) {
  TempDir dir("run_strict");
  EXPECT_THROW(run_experiment(fast_model(), small_corpus(dir), dir / "out", RunConfig{}), CorpusError);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Harness, NonEmptyOutputDirectoryIsRejected) {
  TempDir dir("run_nonempty");
  auto corpus = small_corpus(dir);
  fs::create_directories(dir / "out");
  spit(dir / "out" / "keep.txt", "x");
  try {
    run_experiment(fast_model(), corpus, dir / "out", partial_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
  EXPECT_EQ(slurp(dir / "out" / "keep.txt"), "x");
  fs::remove(dir / "out" / "keep.txt");
  EXPECT_NO_THROW(run_experiment(fast_model(), corpus, dir / "out", partial_config()));
}

TEST(Harness, IngestedGraphsReproduceMatrices) {
  TempDir dir("run_ingest");
  auto out = dir / "out";
  run_experiment(fast_model(), small_corpus(dir), out, partial_config());
  auto store = ingest_external_graphs(out / "graphs");
  EXPECT_EQ(store.size(), 6u);
  for (auto mode : {MatrixMode::FixedLanguage, MatrixMode::FixedCulture}) {
    auto m = build_matrix(mode, store);
    auto ref = matrix_from_json(nlohmann::json::parse(slurp(out / ("matrix_" + stem_for(mode) + ".json"))));
    ASSERT_EQ(m.cells.size(), ref.cells.size());
    for (std::size_t i = 0; i < m.cells.size(); ++i) EXPECT_EQ(*m.cells[i], *ref.cells[i]);
  }
}

TEST(Harness, IngestRejectsBadInputs) {
  TempDir dir("ingest_bad");
  EXPECT_THROW(ingest_external_graphs(dir.path()), Error);

  auto g = normalize(graph_from({{{FeatureNode{0, NodeKind::Embedding, 1, {}}, FeatureNode{1, NodeKind::Feature, 0, {}}}, 1.0}},
                                meta_for("kr_us", true, false, "KR", "US")));
  write_graph_file(g, dir / "a.graph");
  write_graph_file(g, dir / "b.graph");
  try {
    ingest_external_graphs(dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateSet);
    EXPECT_NE(std::string(e.what()).find("a.graph"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("b.graph"), std::string::npos);
  }
  fs::remove(dir / "b.graph");

  auto raw = graph_from({{{FeatureNode{0, NodeKind::Embedding, 1, {}}, FeatureNode{1, NodeKind::Feature, 0, {}}}, 3.0}},
                        meta_for("raw", true, false, "US", "US"));
  write_graph_file(raw, dir / "raw.graph");
  try {
    ingest_external_graphs(dir.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
    EXPECT_NE(std::string(e.what()).find("raw.graph"), std::string::npos);
  }
  fs::remove(dir / "raw.graph");

  spit(dir / "cut.graph", graph_to_string(g).substr(0, 40));
  EXPECT_THROW(ingest_external_graphs(dir.path()), Error);
}

TEST(Harness, PerQuestionAggregation) {
  TempDir dir("run_perq");
  auto cfg = partial_config();
  cfg.aggregation = AggregationMode::PerQuestion;
  auto out = dir / "out";
  run_experiment(fast_model(), small_corpus(dir), out, cfg);
  for (const char* f : {"matrix_per_question_fixed_language.json", "matrix_per_question_fixed_culture.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  auto m = matrix_from_json(nlohmann::json::parse(slurp(out / "matrix_per_question_fixed_culture.json")));
  for (const auto& c : m.cells) {
    ASSERT_TRUE(c);
    EXPECT_GE(*c, 0.0);
    EXPECT_LE(*c, 1.0);
  }
}

TEST(Harness, PerQuestionMatrixAveragesMatchedQids) {
  auto model = fast_model();
  auto corpus = synthetic_corpus({"US"}, {"US", "UK"}, 3);
  auto traced = trace_corpus(model, corpus, partial_config());
  auto layout = build_matrix(MatrixMode::FixedLanguage, traced.sets);
  auto m = build_per_question_matrix(MatrixMode::FixedLanguage, traced.prompts, layout, {}, 1);
  const auto& a = traced.prompts.at({Code("US"), Code("US")});
  const auto& b = traced.prompts.at({Code("US"), Code("UK")});
  double total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    ASSERT_EQ(a.qids[i], b.qids[i]);
    total += weighted_jaccard(a.graphs[i], b.graphs[i]);
  }
  EXPECT_NEAR(*m.at(0, 0), total / 3, 1e-15);
}

TEST(Harness, TraceCorpusAggregatesPerSet) {
  auto model = fast_model();
  auto corpus = synthetic_corpus({"US", "KR"}, {"US"}, 2);
  auto traced = trace_corpus(model, corpus, partial_config());
  ASSERT_EQ(traced.sets.size(), 2u);
  const auto& g = traced.sets.at(Code("KR"), Code("US"));
  EXPECT_EQ(g.meta().id, "KR__US");
  EXPECT_TRUE(g.meta().collapsed && g.meta().normalized);
  const auto& prompts = traced.prompts.at({Code("KR"), Code("US")});
  auto expect = aggregate(prompts.graphs, "KR__US");
  EXPECT_TRUE(g == expect);

  auto cfg = partial_config();
  cfg.prune = TopKPolicy{3};
  auto pruned = trace_corpus(model, corpus, cfg);
  EXPECT_LE(pruned.sets.at(Code("KR"), Code("US")).edges().size(), 3u);
}
