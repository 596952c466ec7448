#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "codes.hpp"
#include "graph.hpp"
#include "parallel.hpp"

namespace pathtrace {

struct SimilarityOptions {
  // Reconstruction-error nodes are not interpretable features, so edges
  // touching them are left out of the comparison unless requested.
  bool include_error_nodes = false;
};

inline bool counts_for_similarity(const AttributionEdge& e, const SimilarityOptions& opts) {
  return opts.include_error_nodes ||
         (e.src.kind != NodeKind::Error && e.dst.kind != NodeKind::Error);
}

// Weighted Jaccard similarity over |w|: sum of per-edge minima divided by
// sum of per-edge maxima across the union of edge keys, absent edges counting
// as zero. The union is walked in key order, which makes the result
// bit-exactly symmetric.
inline double weighted_jaccard(const AttributionGraph& a, const AttributionGraph& b,
                               const SimilarityOptions& opts = {}) {
  for (const auto* g : {&a, &b}) {
    if (!g->meta().collapsed || !g->meta().normalized) {
      throw Error(ErrorCode::NotComparable,
                  "graph '" + g->meta().id + "' must be collapsed and normalized");
    }
  }
  const auto& ea = a.edges();
  const auto& eb = b.edges();
  double num = 0.0;
  double den = 0.0;
  std::size_t i = 0, j = 0;
  while (i < ea.size() || j < eb.size()) {
    double wa = 0.0, wb = 0.0;
    const AttributionEdge* edge = nullptr;
    if (j == eb.size() || (i < ea.size() && ea[i].key() < eb[j].key())) {
      edge = &ea[i];
      wa = std::fabs(ea[i++].weight);
    } else if (i == ea.size() || eb[j].key() < ea[i].key()) {
      edge = &eb[j];
      wb = std::fabs(eb[j++].weight);
    } else {
      edge = &ea[i];
      wa = std::fabs(ea[i++].weight);
      wb = std::fabs(eb[j++].weight);
    }
    if (!counts_for_similarity(*edge, opts)) continue;
    num += std::min(wa, wb);
    den += std::max(wa, wb);
  }
  if (!(den > 0.0)) {
    throw Error(ErrorCode::DegenerateGraphs, "graphs '" + a.meta().id + "' and '" +
                                                 b.meta().id + "' both carry zero weight");
  }
  return num / den;
}

// Set-level graphs keyed by (language, country).
class PathStore {
 public:
  using Key = std::pair<LanguageCode, CountryCode>;

  void insert(AttributionGraph g) {
    Key key{g.meta().language, g.meta().country};
    if (graphs_.contains(key)) {
      throw Error(ErrorCode::DuplicateSet, "two graphs for (" + key.first.str() + ", " +
                                               key.second.str() + "): '" +
                                               graphs_.at(key).meta().id + "' and '" +
                                               g.meta().id + "'");
    }
    graphs_.emplace(std::move(key), std::move(g));
  }

  const AttributionGraph* find(const LanguageCode& l, const CountryCode& c) const {
    auto it = graphs_.find({l, c});
    return it == graphs_.end() ? nullptr : &it->second;
  }

  const AttributionGraph& at(const LanguageCode& l, const CountryCode& c) const {
    if (const auto* g = find(l, c)) return *g;
    throw Error(ErrorCode::MissingPath, "no path for (" + l.str() + ", " + c.str() + ")");
  }

  std::size_t size() const noexcept { return graphs_.size(); }
  const std::map<Key, AttributionGraph>& graphs() const noexcept { return graphs_; }

  std::vector<LanguageCode> languages() const {
    std::vector<Code> out;
    for (const auto& [k, _] : graphs_) out.push_back(k.first);
    sort_reporting_order(out);
    return out;
  }

  std::vector<CountryCode> countries() const {
    std::vector<Code> out;
    for (const auto& [k, _] : graphs_) out.push_back(k.second);
    sort_reporting_order(out);
    return out;
  }

 private:
  std::map<Key, AttributionGraph> graphs_;
};

// Sim(P(Q_{L,C1}), P(Q_{L,C2})) with the question language held fixed.
inline double fixed_language_cell(const LanguageCode& language, const CountryCode& c1,
                                  const CountryCode& c2, const PathStore& paths,
                                  const SimilarityOptions& opts = {}) {
  const auto& a = paths.at(language, c1);
  const auto& b = paths.at(language, c2);
  if (c1 == c2) return 1.0;
  return weighted_jaccard(a, b, opts);
}

// Sim(P(Q_{L1,C}), P(Q_{L2,C})) with the target country held fixed.
inline double fixed_culture_cell(const CountryCode& country, const LanguageCode& l1,
                                 const LanguageCode& l2, const PathStore& paths,
                                 const SimilarityOptions& opts = {}) {
  const auto& a = paths.at(l1, country);
  const auto& b = paths.at(l2, country);
  if (l1 == l2) return 1.0;
  return weighted_jaccard(a, b, opts);
}

enum class MatrixMode { FixedLanguage, FixedCulture };

inline std::string_view to_string(MatrixMode mode) {
  return mode == MatrixMode::FixedLanguage ? "fixed-language" : "fixed-culture";
}

inline MatrixMode matrix_mode_from_string(std::string_view text) {
  if (text == "fixed-language") return MatrixMode::FixedLanguage;
  if (text == "fixed-culture") return MatrixMode::FixedCulture;
  throw Error(ErrorCode::ConfigError,
              "unknown matrix mode '" + std::string(text) + "' (fixed-language|fixed-culture)");
}

// Rows are unordered code pairs (countries for FixedLanguage, languages for
// FixedCulture); columns are the held-fixed codes. Missing cells are nullopt.
struct SimilarityMatrix {
  MatrixMode mode = MatrixMode::FixedLanguage;
  std::vector<CodePair> row_pairs;
  std::vector<Code> columns;
  std::vector<std::optional<double>> cells;  // row-major

  std::optional<double> at(std::size_t row, std::size_t col) const {
    return cells[row * columns.size() + col];
  }

  std::optional<std::size_t> row_index(const CodePair& pair) const {
    for (std::size_t r = 0; r < row_pairs.size(); ++r)
      if (row_pairs[r].same_as(pair)) return r;
    return std::nullopt;
  }

  std::optional<std::size_t> column_index(const Code& code) const {
    auto it = std::find(columns.begin(), columns.end(), code);
    if (it == columns.end()) return std::nullopt;
    return static_cast<std::size_t>(it - columns.begin());
  }

  std::vector<std::optional<double>> row(std::size_t r) const {
    return {cells.begin() + static_cast<std::ptrdiff_t>(r * columns.size()),
            cells.begin() + static_cast<std::ptrdiff_t>((r + 1) * columns.size())};
  }
};

struct MatrixOptions {
  // Codes forming the row pairs and the columns. Empty means "derive from
  // the store" (countries/languages present, in reporting order).
  std::vector<Code> row_codes;
  std::vector<Code> column_codes;
  // Leave cells whose inputs are absent empty instead of failing.
  bool allow_missing = false;
  std::size_t workers = 1;
  SimilarityOptions similarity;
};

inline SimilarityMatrix build_matrix(MatrixMode mode, const PathStore& paths,
                                     MatrixOptions opts = {}) {
  const bool fixed_language = mode == MatrixMode::FixedLanguage;
  if (opts.row_codes.empty()) opts.row_codes = fixed_language ? paths.countries() : paths.languages();
  if (opts.column_codes.empty())
    opts.column_codes = fixed_language ? paths.languages() : paths.countries();

  if (!opts.allow_missing) {
    std::string missing;
    for (const auto& col : opts.column_codes) {
      for (const auto& row : opts.row_codes) {
        const auto& l = fixed_language ? col : row;
        const auto& c = fixed_language ? row : col;
        if (!paths.find(l, c)) missing += " (" + l.str() + ", " + c.str() + ")";
      }
    }
    if (!missing.empty()) throw Error(ErrorCode::MissingPath, "absent sets:" + missing);
  }

  SimilarityMatrix m;
  m.mode = mode;
  m.row_pairs = all_pairs(opts.row_codes);
  m.columns = opts.column_codes;
  m.cells.assign(m.row_pairs.size() * m.columns.size(), std::nullopt);
  parallel_for(m.cells.size(), opts.workers, [&](std::size_t idx) {
    const auto& pair = m.row_pairs[idx / m.columns.size()];
    const auto& col = m.columns[idx % m.columns.size()];
    const AttributionGraph* a =
        fixed_language ? paths.find(col, pair.first) : paths.find(pair.first, col);
    const AttributionGraph* b =
        fixed_language ? paths.find(col, pair.second) : paths.find(pair.second, col);
    if (!a || !b) return;
    m.cells[idx] = fixed_language
                       ? fixed_language_cell(col, pair.first, pair.second, paths, opts.similarity)
                       : fixed_culture_cell(col, pair.first, pair.second, paths, opts.similarity);
  });
  return m;
}

}  // namespace pathtrace
