// pathtrace command-line interface.
//
// Exit codes: 0 success, 2 validation error (bad input), 1 internal error.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <pathtrace/pathtrace.hpp>

namespace fs = std::filesystem;
using namespace pathtrace;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
  std::size_t workers = 0;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config_path, "versioned key-value config file")->check(CLI::ExistingFile);
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_given = true; },
      "RNG seed (model generation)");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
  cmd->add_option("--workers", c.workers, "worker threads (overrides config)")->check(CLI::PositiveNumber);
}

RunConfig load_config(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : read_config_file(c.config_path);
  if (c.workers) cfg.workers = c.workers;
  return cfg;
}

// --model if given, otherwise a model generated from the config and --seed.
ToyModel resolve_model(const std::string& model_path, const Common& c, const RunConfig& cfg) {
  if (!model_path.empty()) return read_toy_model_file(model_path);
  if (!c.seed_given) throw Error(ErrorCode::ConfigError, "either --model or --seed is required");
  return generate_toy_model(cfg.model, c.seed);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

RunManifest analysis_manifest(const RunConfig& cfg, const std::string& model, const std::string& inputs) {
  RunManifest m;
  m.config = cfg;
  m.model_digest = model;
  m.corpus_digest = inputs;
  return m;
}

SimilarityMatrix read_matrix(const fs::path& path) {
  const auto text = read_file_bytes(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.what());
  }
  return matrix_from_json(j);
}

void print_summary(const PairStatsTable& t, MatrixMode mode) {
  std::cout << to_string(mode) << " (overall mean " << format_value(t.overall_mean, CsvPrecision::Decimals2)
            << ")\n";
  for (const auto& p : t.pairs)
    std::cout << "  " << p.pair.label() << (p.is_similar_language_pair ? "*" : " ") << "  "
              << format_value(p.mean, CsvPrecision::Decimals2) << " +/- "
              << format_value(p.ci95_half_width, CsvPrecision::Decimals2) << "  n=" << p.n << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attribution-path tracing and cross-cultural path similarity"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  // generate-model
  Common gen_c;
  auto* gen = app.add_subcommand("generate-model", "write a seeded random toy model and transcoders");
  add_common(gen, gen_c, true);

  // corpus validate
  Common cv_c;
  std::string cv_dir;
  bool cv_partial = false;
  auto* corpus_cmd = app.add_subcommand("corpus", "corpus utilities");
  corpus_cmd->require_subcommand(1);
  auto* cv = corpus_cmd->add_subcommand("validate", "check corpus shape, statement rules and qid alignment");
  cv->add_option("dir", cv_dir, "corpus directory")->required();
  cv->add_flag("--partial", cv_partial, "accept a subset of the 7x7 grid and short sets");
  add_common(cv, cv_c, false);

  // trace
  Common tr_c;
  std::string tr_model, tr_corpus;
  std::vector<std::string> tr_set;
  bool tr_prompts = false;
  auto* tr = app.add_subcommand("trace", "trace question sets into set-level path graphs");
  tr->add_option("--model", tr_model, "model file (default: generate from --seed)")->check(CLI::ExistingFile);
  tr->add_option("--corpus", tr_corpus, "corpus directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--set", tr_set, "trace only this set: --set <L> <C>")->expected(2);
  tr->add_flag("--per-prompt", tr_prompts, "also write per-question graphs under prompts/");
  add_common(tr, tr_c, true);

  // ingest
  Common in_c;
  std::string in_dir;
  auto* in = app.add_subcommand("ingest", "validate externally produced graphs");
  in->add_option("dir", in_dir, "directory of *.graph files")->required()->check(CLI::ExistingDirectory);
  add_common(in, in_c, false);

  // matrix
  Common mx_c;
  std::string mx_graphs, mx_mode = "both";
  bool mx_allow_missing = false;
  auto* mx = app.add_subcommand("matrix", "build similarity matrices from a directory of graphs");
  mx->add_option("--graphs", mx_graphs, "directory of *.graph files")->required()->check(CLI::ExistingDirectory);
  mx->add_option("--mode", mx_mode, "fixed-language, fixed-culture or both")
      ->check(CLI::IsMember({"fixed-language", "fixed-culture", "both"}));
  mx->add_flag("--allow-missing", mx_allow_missing, "leave cells with absent graphs as NA");
  add_common(mx, mx_c, true);

  // stats
  Common st_c;
  std::string st_matrix;
  auto* st = app.add_subcommand("stats", "per-pair means, 95% CIs and ordering for a matrix");
  st->add_option("--matrix", st_matrix, "matrix JSON file")->required()->check(CLI::ExistingFile);
  add_common(st, st_c, true);

  // slice korea / slice similar-pairs
  Common sk_c, sp_c;
  std::string sk_matrix, sp_matrix;
  auto* slice = app.add_subcommand("slice", "figure slices");
  slice->require_subcommand(1);
  auto* sk = slice->add_subcommand("korea", "KR-KP row of a fixed-language matrix by question language");
  sk->add_option("--matrix", sk_matrix, "fixed-language matrix JSON")->required()->check(CLI::ExistingFile);
  add_common(sk, sk_c, true);
  auto* sp = slice->add_subcommand("similar-pairs", "similar-language pairs of a fixed-culture matrix");
  sp->add_option("--matrix", sp_matrix, "fixed-culture matrix JSON")->required()->check(CLI::ExistingFile);
  add_common(sp, sp_c, true);

  // report
  Common rp_c;
  std::string rp_graphs;
  auto* rp = app.add_subcommand("report", "all matrices, statistics, slices and report.html from graphs");
  rp->add_option("--graphs", rp_graphs, "directory of *.graph files")->required()->check(CLI::ExistingDirectory);
  add_common(rp, rp_c, true);

  // run
  Common rn_c;
  std::string rn_model, rn_corpus;
  bool rn_per_question = false;
  auto* rn = app.add_subcommand("run", "full experiment: trace, matrices, statistics, slices, report");
  rn->add_option("--model", rn_model, "model file (default: generate from --seed)")->check(CLI::ExistingFile);
  rn->add_option("--corpus", rn_corpus, "corpus directory")->required()->check(CLI::ExistingDirectory);
  rn->add_flag("--per-question", rn_per_question, "also report Sim averaged over matched questions");
  add_common(rn, rn_c, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      auto cfg = load_config(gen_c);
      const auto model = generate_toy_model(cfg.model, gen_c.seed);
      ensure_dir(gen_c.out);
      write_toy_model_file(model, fs::path(gen_c.out) / "model.toy");
      std::cout << "wrote " << (fs::path(gen_c.out) / "model.toy").string() << " (" << model_digest(model)
                << ")\n";
    } else if (cv->parsed()) {
      auto cfg = load_config(cv_c);
      const auto scan = scan_corpus(cv_dir, {cv_partial || cfg.partial_corpus});
      for (const auto& d : scan.diagnostics) std::cout << d.to_string() << "\n";
      if (!scan.diagnostics.empty()) {
        std::cerr << scan.diagnostics.size() << " problem(s) found\n";
        return 2;
      }
      std::size_t items = 0;
      for (const auto& s : scan.corpus.sets()) items += s.items.size();
      std::cout << "ok: " << scan.corpus.sets().size() << " sets, " << items << " statements\n";
    } else if (tr->parsed()) {
      auto cfg = load_config(tr_c);
      const auto model = resolve_model(tr_model, tr_c, cfg);
      auto corpus = load_corpus(tr_corpus, {cfg.partial_corpus || !tr_set.empty()});
      if (!tr_set.empty()) {
        const Code l(tr_set[0]), c(tr_set[1]);
        const auto* s = corpus.find(l, c);
        if (!s) throw Error(ErrorCode::MissingPath, "corpus has no set (" + l.str() + ", " + c.str() + ")");
        corpus = Corpus({*s});
      }
      const auto traced = trace_corpus(model, corpus, cfg);
      ensure_dir(tr_c.out);
      for (const auto& [key, g] : traced.sets.graphs())
        write_graph_file(g, fs::path(tr_c.out) / graph_file_name(key.first, key.second));
      if (tr_prompts) {
        ensure_dir(fs::path(tr_c.out) / "prompts");
        for (const auto& [key, pg] : traced.prompts)
          for (std::size_t i = 0; i < pg.qids.size(); ++i)
            write_graph_file(pg.graphs[i], fs::path(tr_c.out) / "prompts" /
                                               (key.first.str() + "__" + key.second.str() + "__" +
                                                pg.qids[i] + std::string(kGraphFileSuffix)));
      }
      std::cout << "traced " << traced.sets.size() << " set(s) into " << tr_c.out << "\n";
    } else if (in->parsed()) {
      const auto store = ingest_external_graphs(in_dir);
      std::cout << "ok: " << store.size() << " graph(s); languages";
      for (const auto& l : store.languages()) std::cout << " " << l.str();
      std::cout << "; countries";
      for (const auto& c : store.countries()) std::cout << " " << c.str();
      std::cout << "\n";
      if (!in_c.out.empty()) {
        ensure_dir(in_c.out);
        for (const auto& [key, g] : store.graphs())
          write_graph_file(g, fs::path(in_c.out) / graph_file_name(key.first, key.second));
      }
    } else if (mx->parsed()) {
      auto cfg = load_config(mx_c);
      const auto store = ingest_external_graphs(mx_graphs);
      const auto manifest =
          analysis_manifest(cfg, "external", directory_digest(mx_graphs, kGraphFileSuffix)).to_json(false);
      MatrixOptions opts;
      opts.allow_missing = mx_allow_missing;
      opts.workers = cfg.workers;
      opts.similarity = cfg.similarity();
      ensure_dir(mx_c.out);
      for (auto mode : {MatrixMode::FixedLanguage, MatrixMode::FixedCulture}) {
        if (mx_mode != "both" && mx_mode != to_string(mode)) continue;
        const auto m = build_matrix(mode, store, opts);
        emit_matrix(m, mx_c.out, stem_for(mode), manifest);
        write_matrix_csv(m, std::cout, CsvPrecision::Decimals2);
      }
    } else if (st->parsed()) {
      const auto m = read_matrix(st_matrix);
      const auto table = pair_stats(m, PairRegistry::reference());
      auto cfg = load_config(st_c);
      const auto manifest = analysis_manifest(cfg, "external", file_digest(st_matrix)).to_json(false);
      ensure_dir(st_c.out);
      emit_stats(table, m.mode, st_c.out, stem_for(m.mode), manifest);
      print_summary(table, m.mode);
    } else if (sk->parsed()) {
      const auto k = korea_slice(read_matrix(sk_matrix));
      ensure_dir(sk_c.out);
      write_text_file(fs::path(sk_c.out) / "slice_korea.csv", korea_to_csv(k));
      write_text_file(fs::path(sk_c.out) / "slice_korea.json", dump_json(korea_to_json(k)));
      std::cout << "KR-KP: Korean languages " << format_value(k.korean_mean, CsvPrecision::Decimals2)
                << ", others " << format_value(k.other_mean, CsvPrecision::Decimals2) << "\n";
    } else if (sp->parsed()) {
      const auto m = read_matrix(sp_matrix);
      const auto d = similar_pairs_slice(m, PairRegistry::reference());
      ensure_dir(sp_c.out);
      write_text_file(fs::path(sp_c.out) / "slice_similar_pairs.csv", similar_pairs_to_csv(d));
      write_text_file(fs::path(sp_c.out) / "slice_similar_pairs.json",
                      dump_json(nlohmann::ordered_json{{"pairs", similar_pairs_to_json(d)}}));
      for (const auto& p : d)
        std::cout << p.pair.label() << ": mean " << format_value(p.mean, CsvPrecision::Decimals2) << ", sd "
                  << format_value(p.sd, CsvPrecision::Decimals2) << "\n";
    } else if (rp->parsed()) {
      auto cfg = load_config(rp_c);
      const auto store = ingest_external_graphs(rp_graphs);
      const auto manifest =
          analysis_manifest(cfg, "external", directory_digest(rp_graphs, kGraphFileSuffix)).to_json(false);
      write_directory_atomically(rp_c.out, [&](const fs::path& dir) {
        auto report = analyze_store(store, dir, cfg, manifest);
        write_text_file(dir / "report.html", render_html_report(report));
      });
      std::cout << "wrote " << (fs::path(rp_c.out) / "report.html").string() << "\n";
    } else if (rn->parsed()) {
      auto cfg = load_config(rn_c);
      if (rn_per_question) cfg.aggregation = AggregationMode::PerQuestion;
      const auto model = resolve_model(rn_model, rn_c, cfg);
      const auto manifest = run_experiment(model, rn_corpus, rn_c.out, cfg);
      std::cout << "wrote " << rn_c.out << " (model " << manifest.model_digest << ")\n";
    }
  } catch (const CorpusError& e) {
    for (const auto& d : e.diagnostics()) std::cerr << d.to_string() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_validation_error(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
