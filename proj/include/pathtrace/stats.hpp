#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "codes.hpp"
#include "similarity.hpp"

namespace pathtrace {

// Two-sided 95% Student-t critical values t(0.975, df) for df = 1..29.
inline constexpr std::array<double, 29> kStudentT975 = {
    12.706205, 4.302653, 3.182446, 2.776445, 2.570582, 2.446912, 2.364624, 2.306004,
    2.262157,  2.228139, 2.200985, 2.178813, 2.160369, 2.144787, 2.131450, 2.119905,
    2.109816,  2.100922, 2.093024, 2.085963, 2.079614, 2.073873, 2.068658, 2.063899,
    2.059539,  2.055529, 2.051831, 2.048407, 2.045230};

inline double student_t975(std::size_t df) {
  if (df == 0) return 0.0;
  if (df <= kStudentT975.size()) return kStudentT975[df - 1];
  boost::math::students_t dist(static_cast<double>(df));
  return boost::math::quantile(dist, 0.975);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

struct PairStats {
  CodePair pair;
  double mean = 0.0;
  double ci95_half_width = 0.0;
  std::size_t n = 0;
  bool is_similar_language_pair = false;
  std::vector<double> values;
};

struct PairStatsTable {
  std::vector<PairStats> pairs;  // descending by mean
  double overall_mean = 0.0;     // mean over every populated cell
};

inline std::vector<double> present_values(const std::vector<std::optional<double>>& row) {
  std::vector<double> out;
  for (const auto& v : row)
    if (v) out.push_back(*v);
  return out;
}

// Per-row mean and 95% CI (t * sd / sqrt(n)), sorted by descending mean with
// ties broken by pair label.
inline PairStatsTable pair_stats(const SimilarityMatrix& m, const PairRegistry& registry) {
  PairStatsTable table;
  std::vector<double> all;
  for (std::size_t r = 0; r < m.row_pairs.size(); ++r) {
    PairStats s;
    s.pair = m.row_pairs[r];
    s.values = present_values(m.row(r));
    s.n = s.values.size();
    s.mean = mean_of(s.values);
    if (s.n >= 2)
      s.ci95_half_width = student_t975(s.n - 1) * sample_sd(s.values) /
                          std::sqrt(static_cast<double>(s.n));
    s.is_similar_language_pair = registry.contains(s.pair);
    all.insert(all.end(), s.values.begin(), s.values.end());
    table.pairs.push_back(std::move(s));
  }
  std::stable_sort(table.pairs.begin(), table.pairs.end(),
                   [](const PairStats& a, const PairStats& b) {
                     if (a.mean != b.mean) return a.mean > b.mean;
                     return a.pair.label() < b.pair.label();
                   });
  table.overall_mean = mean_of(all);
  return table;
}

struct KoreaSlice {
  std::vector<Code> languages;
  std::vector<double> values;  // KR-KP cell per language
  double korean_mean = 0.0;    // languages KR and KP
  double other_mean = 0.0;     // every other language
};

// The KR-KP row of a fixed-language matrix, split into Korean and
// non-Korean question languages.
inline KoreaSlice korea_slice(const SimilarityMatrix& m) {
  if (m.mode != MatrixMode::FixedLanguage)
    throw Error(ErrorCode::NotComparable, "korea slice needs a fixed-language matrix");
  const CodePair kr_kp{Code("KR"), Code("KP")};
  auto row = m.row_index(kr_kp);
  if (!row) throw Error(ErrorCode::MissingPair, "matrix has no KR-KP row");
  KoreaSlice out;
  std::vector<double> korean, other;
  for (std::size_t c = 0; c < m.columns.size(); ++c) {
    auto v = m.at(*row, c);
    if (!v) continue;
    out.languages.push_back(m.columns[c]);
    out.values.push_back(*v);
    (kr_kp.contains(m.columns[c]) ? korean : other).push_back(*v);
  }
  out.korean_mean = mean_of(korean);
  out.other_mean = mean_of(other);
  return out;
}

struct PairDistribution {
  CodePair pair;
  std::vector<Code> columns;
  std::vector<double> values;
  double mean = 0.0;
  double sd = 0.0;
};

// Cells, mean and sample sd of each registry pair in a fixed-culture matrix.
inline std::vector<PairDistribution> similar_pairs_slice(const SimilarityMatrix& m,
                                                         const PairRegistry& registry) {
  if (m.mode != MatrixMode::FixedCulture)
    throw Error(ErrorCode::NotComparable, "similar-pairs slice needs a fixed-culture matrix");
  std::vector<PairDistribution> out;
  for (const auto& pair : registry.pairs()) {
    auto row = m.row_index(pair);
    if (!row) throw Error(ErrorCode::MissingPair, "matrix has no " + pair.label() + " row");
    PairDistribution d{pair, {}, {}, 0.0, 0.0};
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
      if (auto v = m.at(*row, c)) {
        d.columns.push_back(m.columns[c]);
        d.values.push_back(*v);
      }
    }
    d.mean = mean_of(d.values);
    d.sd = sample_sd(d.values);
    out.push_back(std::move(d));
  }
  return out;
}

// Registry restricted to pairs whose codes both appear as matrix rows.
inline PairRegistry registry_within(const PairRegistry& registry, const SimilarityMatrix& m) {
  std::vector<CodePair> kept;
  for (const auto& p : registry.pairs())
    if (m.row_index(p)) kept.push_back(p);
  return PairRegistry(std::move(kept));
}

}  // namespace pathtrace
