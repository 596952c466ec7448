#pragma once

#include <charconv>
#include <cstdio>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hexfloat.hpp"
#include "similarity.hpp"

namespace pathtrace {

enum class CsvPrecision {
  Significant6,  // %.6g, the default report format
  Decimals2,     // %.2f, table-style summaries
};

inline std::string format_value(double v, CsvPrecision precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), precision == CsvPrecision::Significant6 ? "%.6g" : "%.2f", v);
  return buf;
}

// Header `pair,<col1>,...` then one `A-B,v1,...` row per code pair; missing
// cells are written as NA.
inline void write_matrix_csv(const SimilarityMatrix& m, std::ostream& out,
                             CsvPrecision precision = CsvPrecision::Significant6) {
  std::string buf = "pair";
  for (const auto& c : m.columns) buf += "," + c.str();
  buf += "\n";
  for (std::size_t r = 0; r < m.row_pairs.size(); ++r) {
    buf += m.row_pairs[r].label();
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
      auto v = m.at(r, c);
      buf += "," + (v ? format_value(*v, precision) : std::string("NA"));
    }
    buf += "\n";
  }
  out << buf;
}

inline SimilarityMatrix parse_matrix_csv(std::string_view text, MatrixMode mode) {
  SimilarityMatrix m;
  m.mode = mode;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    std::vector<std::pair<std::string_view, std::size_t>> fields;
    std::size_t f = 0;
    while (true) {
      auto comma = line.find(',', f);
      fields.emplace_back(line.substr(f, comma == std::string_view::npos ? line.size() - f : comma - f),
                          f + 1);
      if (comma == std::string_view::npos) break;
      f = comma + 1;
    }

    if (line_no == 1) {
      if (fields[0].first != "pair") throw FormatError(1, 1, "matrix header must start with 'pair'");
      for (std::size_t i = 1; i < fields.size(); ++i) {
        if (!Code::is_valid(fields[i].first))
          throw FormatError(1, fields[i].second, "invalid column code '" + std::string(fields[i].first) + "'");
        m.columns.emplace_back(fields[i].first);
      }
      continue;
    }
    if (fields.size() != m.columns.size() + 1)
      throw FormatError(line_no, 1, "expected " + std::to_string(m.columns.size() + 1) + " fields");
    auto label = fields[0].first;
    auto dash = label.find('-');
    if (dash == std::string_view::npos || !Code::is_valid(label.substr(0, dash)) ||
        !Code::is_valid(label.substr(dash + 1)))
      throw FormatError(line_no, 1, "row label must look like 'KR-KP'");
    m.row_pairs.push_back({Code(label.substr(0, dash)), Code(label.substr(dash + 1))});
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto [txt, col] = fields[i];
      if (txt == "NA") {
        m.cells.push_back(std::nullopt);
        continue;
      }
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(txt.data(), txt.data() + txt.size(), v);
      if (txt.empty() || ec != std::errc() || ptr != txt.data() + txt.size() || !(v >= 0.0 && v <= 1.0))
        throw FormatError(line_no, col, "cell must be a number in [0, 1] or NA");
      m.cells.push_back(v);
    }
  }
  if (m.columns.empty()) throw FormatError(1, 1, "empty matrix file");
  return m;
}

inline nlohmann::json matrix_to_json(const SimilarityMatrix& m) {
  nlohmann::json j;
  j["format"] = "pathtrace-matrix";
  j["version"] = 1;
  j["mode"] = std::string(to_string(m.mode));
  j["columns"] = nlohmann::json::array();
  for (const auto& c : m.columns) j["columns"].push_back(c.str());
  j["rows"] = nlohmann::json::array();
  for (std::size_t r = 0; r < m.row_pairs.size(); ++r) {
    nlohmann::json values = nlohmann::json::array();
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
      auto v = m.at(r, c);
      values.push_back(v ? nlohmann::json(to_hexfloat(*v)) : nlohmann::json(nullptr));
    }
    j["rows"].push_back({{"pair", m.row_pairs[r].label()}, {"values", std::move(values)}});
  }
  return j;
}

inline SimilarityMatrix matrix_from_json(const nlohmann::json& j) {
  auto bad = [](const std::string& what) { return Error(ErrorCode::FormatError, "matrix JSON: " + what); };
  if (!j.is_object() || j.value("format", "") != "pathtrace-matrix") throw bad("not a matrix document");
  if (j.value("version", 0) != 1) throw Error(ErrorCode::VersionError, "unsupported matrix JSON version");
  SimilarityMatrix m;
  m.mode = matrix_mode_from_string(j.at("mode").get<std::string>());
  for (const auto& c : j.at("columns")) {
    auto s = c.get<std::string>();
    if (!Code::is_valid(s)) throw bad("invalid column code '" + s + "'");
    m.columns.emplace_back(s);
  }
  for (const auto& row : j.at("rows")) {
    auto label = row.at("pair").get<std::string>();
    auto dash = label.find('-');
    if (dash == std::string::npos || !Code::is_valid(label.substr(0, dash)) ||
        !Code::is_valid(label.substr(dash + 1)))
      throw bad("invalid row label '" + label + "'");
    m.row_pairs.push_back({Code(label.substr(0, dash)), Code(label.substr(dash + 1))});
    const auto& values = row.at("values");
    if (values.size() != m.columns.size()) throw bad("row '" + label + "' has wrong width");
    for (const auto& v : values) {
      if (v.is_null()) {
        m.cells.push_back(std::nullopt);
        continue;
      }
      auto parsed = parse_hexfloat(v.get<std::string>());
      if (!parsed) throw bad("row '" + label + "' holds a malformed hex float");
      m.cells.push_back(*parsed);
    }
  }
  return m;
}

}  // namespace pathtrace
