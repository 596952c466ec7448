#pragma once

// Experiment runner: traces every question set, builds both similarity
// matrices, and writes graphs, matrices, pair statistics and slices.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unistd.h>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "corpus.hpp"
#include "digest.hpp"
#include "matrix_io.hpp"
#include "report.hpp"
#include "similarity.hpp"
#include "stats.hpp"
#include "toy_model.hpp"
#include "tracer.hpp"
#include "transforms.hpp"
#include "wire.hpp"

namespace pathtrace {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kGraphFileSuffix = ".graph";

struct RunManifest {
  std::string model_digest;
  std::string corpus_digest;
  RunConfig config;
  std::string tool_version{kToolVersion};
  std::string started_at;
  std::string finished_at;

  // Reports embed the manifest without timestamps so that reruns with the
  // same inputs produce identical files; manifest.json carries them.
  nlohmann::ordered_json to_json(bool with_timestamps) const {
    nlohmann::ordered_json j;
    j["tool_version"] = tool_version;
    j["model_digest"] = model_digest;
    j["corpus_digest"] = corpus_digest;
    nlohmann::ordered_json cfg;
    for (const auto& [k, v] : config_entries(config)) cfg[k] = v;
    j["config"] = cfg;
    if (with_timestamps) j["timestamps"] = {{"started_at", started_at}, {"finished_at", finished_at}};
    return j;
  }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string graph_file_name(const LanguageCode& l, const CountryCode& c) {
  return l.str() + "__" + c.str() + std::string(kGraphFileSuffix);
}

// Per-question graphs of one set, in corpus item order.
struct PromptGraphs {
  std::vector<std::string> qids;
  std::vector<AttributionGraph> graphs;
};

struct TraceOutput {
  PathStore sets;
  std::map<PathStore::Key, PromptGraphs> prompts;
};

// Traces every statement of every set (prompts run concurrently on
// config.workers threads), then aggregates each set into its path graph.
inline TraceOutput trace_corpus(const ToyModel& model, const Corpus& corpus, const RunConfig& config) {
  struct Job {
    const QuestionSet* set;
    std::size_t item;
  };
  std::vector<Job> jobs;
  for (const auto& s : corpus.sets())
    for (std::size_t i = 0; i < s.items.size(); ++i) jobs.push_back({&s, i});

  const auto attribution = config.attribution();
  std::vector<AttributionGraph> graphs(jobs.size());
  parallel_for(jobs.size(), config.workers, [&](std::size_t j) {
    const auto& set = *jobs[j].set;
    const auto& item = set.items[jobs[j].item];
    const auto tokens = tokenize_bytes(item.statement, model.config().vocab_size);
    GraphMeta meta{set.language, set.country, set.set_id() + ":" + item.qid, false, false};
    try {
      graphs[j] = trace_prompt(model, tokens, std::move(meta), attribution);
    } catch (const Error& e) {
      throw Error(e.code(), set.set_id() + " question " + item.qid + ": " + e.detail());
    }
  });

  TraceOutput out;
  std::size_t j = 0;
  for (const auto& s : corpus.sets()) {
    PromptGraphs pg;
    for (const auto& item : s.items) {
      pg.qids.push_back(item.qid);
      pg.graphs.push_back(std::move(graphs[j++]));
    }
    auto set_graph = aggregate(pg.graphs, s.set_id());
    if (config.prune) set_graph = prune(set_graph, *config.prune);
    out.sets.insert(std::move(set_graph));
    out.prompts.emplace(PathStore::Key{s.language, s.country}, std::move(pg));
  }
  return out;
}

// Alternative reading of the comparison: Sim averaged over per-question
// graph pairs with matching qids instead of comparing set-level graphs.
inline SimilarityMatrix build_per_question_matrix(MatrixMode mode,
                                                  const std::map<PathStore::Key, PromptGraphs>& prompts,
                                                  const SimilarityMatrix& layout,
                                                  const SimilarityOptions& opts, std::size_t workers) {
  SimilarityMatrix m = layout;
  const bool fixed_language = mode == MatrixMode::FixedLanguage;
  m.mode = mode;
  m.cells.assign(m.row_pairs.size() * m.columns.size(), std::nullopt);
  parallel_for(m.cells.size(), workers, [&](std::size_t idx) {
    const auto& pair = m.row_pairs[idx / m.columns.size()];
    const auto& col = m.columns[idx % m.columns.size()];
    PathStore::Key ka = fixed_language ? PathStore::Key{col, pair.first} : PathStore::Key{pair.first, col};
    PathStore::Key kb = fixed_language ? PathStore::Key{col, pair.second} : PathStore::Key{pair.second, col};
    auto ia = prompts.find(ka), ib = prompts.find(kb);
    if (ia == prompts.end() || ib == prompts.end()) return;
    double total = 0.0;
    std::size_t matched = 0;
    for (std::size_t i = 0; i < ia->second.qids.size(); ++i) {
      const auto& qids_b = ib->second.qids;
      auto it = std::find(qids_b.begin(), qids_b.end(), ia->second.qids[i]);
      if (it == qids_b.end()) continue;
      const auto& gb = ib->second.graphs[static_cast<std::size_t>(it - qids_b.begin())];
      total += weighted_jaccard(ia->second.graphs[i], gb, opts);
      ++matched;
    }
    if (matched) m.cells[idx] = total / static_cast<double>(matched);
  });
  return m;
}

// Reads every `*.graph` file directly inside `dir` into a path store. Each
// must be collapsed and normalized; two graphs for one (L, C) are rejected.
inline PathStore ingest_external_graphs(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.size() > kGraphFileSuffix.size() &&
        name.compare(name.size() - kGraphFileSuffix.size(), kGraphFileSuffix.size(), kGraphFileSuffix) == 0)
      files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorCode::MissingPath, "no *.graph files in " + dir.string());

  PathStore store;
  std::map<PathStore::Key, std::string> origin;
  for (const auto& f : files) {
    auto g = read_graph_file(f, kExternalNormalizationTolerance);
    const auto& m = g.meta();
    if (!m.collapsed || !m.normalized)
      throw Error(ErrorCode::FormatError, f.string() + ": graph must be collapsed and normalized");
    PathStore::Key key{m.language, m.country};
    if (auto it = origin.find(key); it != origin.end())
      throw Error(ErrorCode::DuplicateSet, "(" + key.first.str() + ", " + key.second.str() +
                                               ") appears in both " + it->second + " and " +
                                               f.filename().string());
    origin.emplace(key, f.filename().string());
    store.insert(std::move(g));
  }
  return store;
}

// ---------------------------------------------------------------------------
// Report emission

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

inline std::string stem_for(MatrixMode mode) {
  return mode == MatrixMode::FixedLanguage ? "fixed_language" : "fixed_culture";
}

inline nlohmann::ordered_json stats_to_json(const PairStatsTable& t, MatrixMode mode) {
  nlohmann::ordered_json j;
  j["mode"] = std::string(to_string(mode));
  j["overall_mean"] = to_hexfloat(t.overall_mean);
  j["overall_mean_decimal"] = t.overall_mean;
  j["pairs"] = nlohmann::ordered_json::array();
  for (const auto& p : t.pairs) {
    nlohmann::ordered_json e;
    e["pair"] = p.pair.label();
    e["mean"] = to_hexfloat(p.mean);
    e["ci95_half_width"] = to_hexfloat(p.ci95_half_width);
    e["n"] = p.n;
    e["similar_language_pair"] = p.is_similar_language_pair;
    e["mean_decimal"] = p.mean;
    e["ci95_half_width_decimal"] = p.ci95_half_width;
    j["pairs"].push_back(std::move(e));
  }
  return j;
}

inline std::string stats_to_csv(const PairStatsTable& t) {
  std::string s = "rank,pair,mean,ci95_half_width,n,similar_language_pair,overall_mean\n";
  for (std::size_t i = 0; i < t.pairs.size(); ++i) {
    const auto& p = t.pairs[i];
    s += std::to_string(i + 1) + "," + p.pair.label() + "," +
         format_value(p.mean, CsvPrecision::Significant6) + "," +
         format_value(p.ci95_half_width, CsvPrecision::Significant6) + "," + std::to_string(p.n) +
         "," + (p.is_similar_language_pair ? "1" : "0") + "," +
         format_value(t.overall_mean, CsvPrecision::Significant6) + "\n";
  }
  return s;
}

inline nlohmann::ordered_json korea_to_json(const KoreaSlice& k) {
  nlohmann::ordered_json j;
  j["pair"] = "KR-KP";
  j["values"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < k.languages.size(); ++i)
    j["values"].push_back({{"language", k.languages[i].str()}, {"value", to_hexfloat(k.values[i])}});
  j["korean_mean"] = to_hexfloat(k.korean_mean);
  j["other_mean"] = to_hexfloat(k.other_mean);
  return j;
}

inline std::string korea_to_csv(const KoreaSlice& k) {
  std::string s = "language,value,group\n";
  for (std::size_t i = 0; i < k.languages.size(); ++i) {
    const bool korean = k.languages[i].str() == "KR" || k.languages[i].str() == "KP";
    s += k.languages[i].str() + "," + format_value(k.values[i], CsvPrecision::Significant6) + "," +
         (korean ? "korean" : "other") + "\n";
  }
  return s;
}

inline nlohmann::ordered_json similar_pairs_to_json(const std::vector<PairDistribution>& d) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& p : d) {
    nlohmann::ordered_json e;
    e["pair"] = p.pair.label();
    e["mean"] = to_hexfloat(p.mean);
    e["sd"] = to_hexfloat(p.sd);
    e["values"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < p.values.size(); ++i)
      e["values"].push_back({{"column", p.columns[i].str()}, {"value", to_hexfloat(p.values[i])}});
    j.push_back(std::move(e));
  }
  return j;
}

inline std::string similar_pairs_to_csv(const std::vector<PairDistribution>& d) {
  std::string s = "pair,column,value,pair_mean,pair_sd\n";
  for (const auto& p : d)
    for (std::size_t i = 0; i < p.values.size(); ++i)
      s += p.pair.label() + "," + p.columns[i].str() + "," +
           format_value(p.values[i], CsvPrecision::Significant6) + "," +
           format_value(p.mean, CsvPrecision::Significant6) + "," +
           format_value(p.sd, CsvPrecision::Significant6) + "\n";
  return s;
}

inline std::string dump_json(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

// Writes matrix CSV (6 significant digits), table CSV (2 decimals) and JSON
// (hex floats) under `stem`.
inline void emit_matrix(const SimilarityMatrix& m, const std::filesystem::path& dir,
                        const std::string& stem, const nlohmann::ordered_json& manifest) {
  std::ostringstream csv, table;
  write_matrix_csv(m, csv, CsvPrecision::Significant6);
  write_matrix_csv(m, table, CsvPrecision::Decimals2);
  write_text_file(dir / ("matrix_" + stem + ".csv"), csv.str());
  write_text_file(dir / ("table_" + stem + ".csv"), table.str());
  auto j = nlohmann::ordered_json::parse(matrix_to_json(m).dump());
  j["manifest"] = manifest;
  write_text_file(dir / ("matrix_" + stem + ".json"), dump_json(j));
}

inline void emit_stats(const PairStatsTable& t, MatrixMode mode, const std::filesystem::path& dir,
                       const std::string& stem, const nlohmann::ordered_json& manifest) {
  write_text_file(dir / ("stats_" + stem + ".csv"), stats_to_csv(t));
  auto j = stats_to_json(t, mode);
  j["note"] = "n per pair is the number of populated cells in its matrix row";
  j["manifest"] = manifest;
  write_text_file(dir / ("stats_" + stem + ".json"), dump_json(j));
}

// Everything derived from a path store: both matrices, their pair stats, the
// slices that apply, and the HTML report.
inline ReportData analyze_store(const PathStore& store, const std::filesystem::path& dir,
                                const RunConfig& config, const nlohmann::ordered_json& manifest) {
  const auto registry = PairRegistry::reference();
  MatrixOptions mopts;
  mopts.workers = config.workers;
  mopts.similarity = config.similarity();

  ReportData report;
  report.manifest = manifest;
  for (auto mode : {MatrixMode::FixedLanguage, MatrixMode::FixedCulture}) {
    auto m = build_matrix(mode, store, mopts);
    auto stats = pair_stats(m, registry);
    emit_matrix(m, dir, stem_for(mode), manifest);
    emit_stats(stats, mode, dir, stem_for(mode), manifest);
    report.sections.push_back({m, stats});
  }

  const auto& fl = report.sections[0].matrix;
  if (fl.row_index({Code("KR"), Code("KP")})) {
    auto k = korea_slice(fl);
    write_text_file(dir / "slice_korea.csv", korea_to_csv(k));
    auto j = korea_to_json(k);
    j["manifest"] = manifest;
    write_text_file(dir / "slice_korea.json", dump_json(j));
    report.korea = k;
  }
  const auto& fc = report.sections[1].matrix;
  auto present = registry_within(registry, fc);
  if (!present.pairs().empty()) {
    auto d = similar_pairs_slice(fc, present);
    write_text_file(dir / "slice_similar_pairs.csv", similar_pairs_to_csv(d));
    nlohmann::ordered_json j;
    j["pairs"] = similar_pairs_to_json(d);
    j["manifest"] = manifest;
    write_text_file(dir / "slice_similar_pairs.json", dump_json(j));
    report.similar_pairs = d;
  }
  return report;
}

// Creates `target` atomically: `fill` writes into a scratch sibling directory
// which is renamed into place on success and removed on failure.
inline void require_fresh_output(const std::filesystem::path& target) {
  namespace fs = std::filesystem;
  if (fs::exists(target) && !(fs::is_directory(target) && fs::is_empty(target)))
    throw Error(ErrorCode::ConfigError, "output directory " + target.string() + " already exists and is not empty");
}

template <typename Fill>
void write_directory_atomically(const std::filesystem::path& target, Fill&& fill) {
  namespace fs = std::filesystem;
  require_fresh_output(target);
  const auto parent = target.has_parent_path() ? target.parent_path() : fs::path(".");
  fs::create_directories(parent);
  const auto scratch = parent / ("." + target.filename().string() + ".partial-" + std::to_string(::getpid()));
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  try {
    fill(scratch);
    if (fs::exists(target)) fs::remove(target);
    fs::rename(scratch, target);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(scratch, ec);
    throw;
  }
}

inline std::string model_digest(const ToyModel& model) {
  std::ostringstream os;
  write_toy_model(model, os);
  return "sha256:" + Sha256().update(os.str()).hex();
}

// Full pipeline for one model and corpus. Writes, under out_dir:
//   graphs/<L>__<C>.graph           set-level paths
//   matrix_*.{csv,json}, table_*.csv, stats_*.{csv,json}, slice_*.{csv,json}
//   matrix_per_question_*.{csv,json} when aggregation = per-question
//   report.html, manifest.json
// Nothing is left behind on failure.
inline RunManifest run_experiment(const ToyModel& model, const std::filesystem::path& corpus_path,
                                  const std::filesystem::path& out_dir, const RunConfig& config) {
  require_fresh_output(out_dir);
  RunManifest manifest;
  manifest.config = config;
  manifest.started_at = utc_timestamp();
  manifest.model_digest = model_digest(model);

  const auto corpus = load_corpus(corpus_path, {config.partial_corpus});
  manifest.corpus_digest = directory_digest(corpus_path, kCorpusFileSuffix);

  {
    std::string missing;
    for (const auto& l : corpus.languages())
      for (const auto& c : corpus.countries())
        if (!corpus.find(l, c)) missing += " (" + l.str() + ", " + c.str() + ")";
    if (!missing.empty()) throw Error(ErrorCode::MissingPath, "corpus lacks question sets for" + missing);
  }

  const auto traced = trace_corpus(model, corpus, config);
  const auto embedded = manifest.to_json(false);

  write_directory_atomically(out_dir, [&](const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "graphs");
    for (const auto& [key, g] : traced.sets.graphs())
      write_graph_file(g, dir / "graphs" / graph_file_name(key.first, key.second));

    auto report = analyze_store(traced.sets, dir, config, embedded);

    if (config.aggregation == AggregationMode::PerQuestion) {
      for (const auto& section : report.sections) {
        const auto& layout = section.matrix;
        auto m = build_per_question_matrix(layout.mode, traced.prompts, layout, config.similarity(),
                                           config.workers);
        emit_matrix(m, dir, "per_question_" + stem_for(layout.mode), embedded);
        report.per_question.push_back(m);
      }
    }

    write_text_file(dir / "report.html", render_html_report(report));
    manifest.finished_at = utc_timestamp();
    write_text_file(dir / "manifest.json", dump_json(manifest.to_json(true)));
  });
  return manifest;
}

inline RunManifest run_experiment(const std::filesystem::path& model_path,
                                  const std::filesystem::path& corpus_path,
                                  const std::filesystem::path& out_dir, const RunConfig& config) {
  return run_experiment(read_toy_model_file(model_path), corpus_path, out_dir, config);
}

}  // namespace pathtrace
