#pragma once

// Versioned key-value run configuration:
//
//   # comment
//   version = 1
//   trace.logit_nodes = 5
//   ...
//
// Unknown keys and unsupported versions are rejected.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "similarity.hpp"
#include "toy_model.hpp"
#include "tracer.hpp"
#include "transforms.hpp"

namespace pathtrace {

inline constexpr int kConfigVersion = 1;

enum class AggregationMode {
  Aggregate,    // one set-level graph per question set (default)
  PerQuestion,  // additionally average Sim over matched per-question graphs
};

struct RunConfig {
  std::size_t logit_nodes = 5;
  bool trace_error_nodes = true;
  bool final_position_only = false;
  std::optional<PrunePolicy> prune;
  bool similarity_error_nodes = false;
  AggregationMode aggregation = AggregationMode::Aggregate;
  bool partial_corpus = false;
  std::size_t workers = 1;  // execution only; not part of the experiment identity
  ToyModelConfig model;     // used by generate-model

  AttributionConfig attribution() const {
    AttributionConfig a;
    a.include_error_nodes = trace_error_nodes;
    a.max_logit_nodes = logit_nodes;
    a.final_position_only = final_position_only;
    a.workers = 1;
    return a;
  }

  SimilarityOptions similarity() const { return {similarity_error_nodes}; }
};

inline std::string prune_to_string(const std::optional<PrunePolicy>& p) {
  if (!p) return "none";
  if (const auto* t = std::get_if<ThresholdPolicy>(&*p)) return "threshold:" + to_hexfloat(t->threshold);
  return "top_k:" + std::to_string(std::get<TopKPolicy>(*p).k);
}

// Experiment-identifying settings in a fixed order (workers excluded).
inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  return {{"version", std::to_string(kConfigVersion)},
          {"trace.logit_nodes", std::to_string(c.logit_nodes)},
          {"trace.error_nodes", c.trace_error_nodes ? "1" : "0"},
          {"trace.positions", c.final_position_only ? "final" : "all"},
          {"prune", prune_to_string(c.prune)},
          {"similarity.error_nodes", c.similarity_error_nodes ? "1" : "0"},
          {"aggregation", c.aggregation == AggregationMode::Aggregate ? "aggregate" : "per-question"},
          {"corpus.partial", c.partial_corpus ? "1" : "0"}};
}

namespace config_detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::uint64_t parse_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size())
    throw Error(ErrorCode::ConfigError, std::string(key) + ": expected unsigned integer, got '" + std::string(v) + "'");
  return out;
}

inline double parse_real(std::string_view key, std::string_view v) {
  if (auto hex = parse_hexfloat(v)) return *hex;
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw Error(ErrorCode::ConfigError, std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw Error(ErrorCode::ConfigError, std::string(key) + ": expected 0/1, got '" + std::string(v) + "'");
}

}  // namespace config_detail

inline void apply_config_entry(RunConfig& c, std::string_view key, std::string_view v) {
  using namespace config_detail;
  auto u32 = [&](std::uint32_t& dst) { dst = static_cast<std::uint32_t>(parse_uint(key, v)); };
  if (key == "trace.logit_nodes") c.logit_nodes = parse_uint(key, v);
  else if (key == "trace.error_nodes") c.trace_error_nodes = parse_bool(key, v);
  else if (key == "trace.positions") {
    if (v == "all") c.final_position_only = false;
    else if (v == "final") c.final_position_only = true;
    else throw Error(ErrorCode::ConfigError, "trace.positions must be 'all' or 'final'");
  } else if (key == "prune") {
    if (v == "none") c.prune.reset();
    else if (v.rfind("threshold:", 0) == 0) {
      double t = parse_real(key, v.substr(10));
      if (t < 0) throw Error(ErrorCode::ConfigError, "prune threshold must be >= 0");
      c.prune = ThresholdPolicy{t};
    } else if (v.rfind("top_k:", 0) == 0) {
      auto k = parse_uint(key, v.substr(6));
      if (k < 1) throw Error(ErrorCode::ConfigError, "prune top_k must be >= 1");
      c.prune = TopKPolicy{k};
    } else {
      throw Error(ErrorCode::ConfigError, "prune must be none, threshold:<x> or top_k:<k>");
    }
  } else if (key == "similarity.error_nodes") c.similarity_error_nodes = parse_bool(key, v);
  else if (key == "aggregation") {
    if (v == "aggregate") c.aggregation = AggregationMode::Aggregate;
    else if (v == "per-question") c.aggregation = AggregationMode::PerQuestion;
    else throw Error(ErrorCode::ConfigError, "aggregation must be 'aggregate' or 'per-question'");
  } else if (key == "corpus.partial") c.partial_corpus = parse_bool(key, v);
  else if (key == "workers") {
    c.workers = parse_uint(key, v);
    if (c.workers < 1) throw Error(ErrorCode::ConfigError, "workers must be >= 1");
  } else if (key == "model.n_layers") u32(c.model.n_layers);
  else if (key == "model.d_model") u32(c.model.d_model);
  else if (key == "model.n_heads") u32(c.model.n_heads);
  else if (key == "model.vocab_size") u32(c.model.vocab_size);
  else if (key == "model.d_mlp") u32(c.model.d_mlp);
  else if (key == "model.d_features") u32(c.model.d_features);
  else if (key == "model.max_seq_len") u32(c.model.max_seq_len);
  else if (key == "model.use_layernorm") c.model.use_layernorm = parse_bool(key, v);
  else throw Error(ErrorCode::ConfigError, "unknown config key '" + std::string(key) + "'");
}

inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
  using config_detail::trim;
  bool saw_version = false;
  std::size_t line_no = 0;
  for (std::size_t start = 0; start < text.size();) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(line_no) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key == "version") {
      if (value != std::to_string(kConfigVersion))
        throw Error(ErrorCode::VersionError, "unsupported config version '" + std::string(value) + "'");
      saw_version = true;
      continue;
    }
    if (!saw_version)
      throw Error(ErrorCode::ConfigError, "config must declare 'version = 1' before other keys");
    try {
      apply_config_entry(base, key, value);
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.detail());
    }
  }
  if (!saw_version) throw Error(ErrorCode::ConfigError, "config lacks 'version = 1'");
  return base;
}

inline RunConfig read_config_file(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_config(text, std::move(base));
}

}  // namespace pathtrace
