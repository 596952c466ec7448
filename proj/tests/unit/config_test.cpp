#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace pt_test;

TEST(Config, DefaultsAndOverrides) {
  auto c = parse_config(
      "# comment\n"
      "version = 1\n"
      "trace.logit_nodes = 3\n"
      "trace.error_nodes = 0\n"
      "trace.positions = final\n"
      "prune = top_k:20\n"
      "similarity.error_nodes = true\n"
      "aggregation = per-question\n"
      "workers = 4\n"
      "model.n_layers = 3\n"
      "model.use_layernorm = 1\n");
  EXPECT_EQ(c.logit_nodes, 3u);
  EXPECT_FALSE(c.trace_error_nodes);
  EXPECT_TRUE(c.final_position_only);
  ASSERT_TRUE(c.prune);
  EXPECT_EQ(std::get<TopKPolicy>(*c.prune).k, 20u);
  EXPECT_TRUE(c.similarity().include_error_nodes);
  EXPECT_EQ(c.aggregation, AggregationMode::PerQuestion);
  EXPECT_EQ(c.workers, 4u);
  EXPECT_EQ(c.model.n_layers, 3u);
  EXPECT_TRUE(c.model.use_layernorm);
  EXPECT_EQ(c.attribution().max_logit_nodes, 3u);

  RunConfig d;
  EXPECT_EQ(d.logit_nodes, 5u);
  EXPECT_TRUE(d.trace_error_nodes);
  EXPECT_FALSE(d.similarity_error_nodes);
  EXPECT_FALSE(d.prune);
}

TEST(Config, ThresholdAcceptsDecimalAndHex) {
  EXPECT_EQ(std::get<ThresholdPolicy>(*parse_config("version=1\nprune=threshold:0.25\n").prune).threshold, 0.25);
  EXPECT_EQ(std::get<ThresholdPolicy>(*parse_config("version=1\nprune=threshold:0x1p-2\n").prune).threshold, 0.25);
}

TEST(Config, Errors) {
  auto code_of = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  EXPECT_EQ(code_of("version = 2\n"), ErrorCode::VersionError);
  EXPECT_EQ(code_of("workers = 2\n"), ErrorCode::ConfigError);
  EXPECT_EQ(code_of(""), ErrorCode::ConfigError);
  EXPECT_EQ(code_of("version = 1\nbogus = 1\n"), ErrorCode::ConfigError);
  EXPECT_EQ(code_of("version = 1\nworkers = 0\n"), ErrorCode::ConfigError);
  EXPECT_EQ(code_of("version = 1\nprune = top_k:0\n"), ErrorCode::ConfigError);
  EXPECT_EQ(code_of("version = 1\nprune = threshold:-1\n"), ErrorCode::ConfigError);
  EXPECT_EQ(code_of("version = 1\ntrace.error_nodes = maybe\n"), ErrorCode::ConfigError);
  EXPECT_EQ(code_of("version = 1\nno equals sign\n"), ErrorCode::ConfigError);
  try {
    parse_config("version = 1\n\nworkers = x\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(Config, EntriesOmitWorkers) {
  RunConfig a, b;
  b.workers = 8;
  EXPECT_EQ(config_entries(a), config_entries(b));
  b.prune = ThresholdPolicy{0.5};
  EXPECT_NE(config_entries(a), config_entries(b));
}

TEST(Config, SampleFileParses) {
  auto c = read_config_file(fs::path(PATHTRACE_DATA) / "sample.conf");
  EXPECT_TRUE(c.partial_corpus);
  EXPECT_THROW(read_config_file(fs::path(PATHTRACE_DATA) / "absent.conf"), Error);
}
