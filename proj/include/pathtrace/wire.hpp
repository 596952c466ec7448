#pragma once

// Line-oriented text format for attribution graphs:
//
//   CIRCUIT-GRAPH v1
//   meta language=<code> country=<code> id=<string> collapsed=<0|1> normalized=<0|1>
//   n <ordinal> <layer> <E|F|R|L> <feature_index> [<token_position>]
//   ...
//   e <src_ordinal> <dst_ordinal> <weight as hex float>
//   ...
//
// Nodes are listed in sorted order with consecutive ordinals from 0, edges in
// (src_ordinal, dst_ordinal) order. Every line, including the last, ends in
// '\n'. Hex-float weights make the round trip bit-exact.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "graph.hpp"
#include "hexfloat.hpp"

namespace pathtrace {

inline constexpr std::string_view kGraphMagic = "CIRCUIT-GRAPH";
inline constexpr int kGraphFormatVersion = 1;

namespace wire_detail {

inline bool valid_id(std::string_view id) {
  if (id.empty()) return false;
  for (unsigned char c : id)
    if (c <= 0x20 || c == 0x7f) return false;
  return true;
}

struct Token {
  std::string_view text;
  std::size_t column;  // 1-based
};

inline std::vector<Token> split_spaces(std::string_view line) {
  std::vector<Token> out;
  std::size_t start = 0;
  while (start <= line.size()) {
    auto end = line.find(' ', start);
    if (end == std::string_view::npos) end = line.size();
    out.push_back({line.substr(start, end - start), start + 1});
    start = end + 1;
  }
  return out;
}

class LineParser {
 public:
  explicit LineParser(std::size_t line) : line_(line) {}

  [[noreturn]] void fail(std::size_t column, const std::string& message) const {
    throw FormatError(line_, column, message);
  }

  std::uint32_t parse_u32(const Token& t, const char* what) const {
    std::uint32_t value = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), value);
    if (t.text.empty() || ec != std::errc() || ptr != t.text.data() + t.text.size())
      fail(t.column, std::string("expected unsigned integer ") + what + ", got '" +
                         std::string(t.text) + "'");
    if (t.text.size() > 1 && t.text.front() == '0')
      fail(t.column, std::string("leading zero in ") + what);
    return value;
  }

  std::string_view parse_field(const Token& t, std::string_view key) const {
    if (t.text.size() <= key.size() || t.text.substr(0, key.size()) != key ||
        t.text[key.size()] != '=')
      fail(t.column, "expected '" + std::string(key) + "=<value>', got '" + std::string(t.text) + "'");
    return t.text.substr(key.size() + 1);
  }

  bool parse_flag(const Token& t, std::string_view key) const {
    auto v = parse_field(t, key);
    if (v == "0") return false;
    if (v == "1") return true;
    fail(t.column, std::string(key) + " must be 0 or 1");
  }

  Code parse_code(const Token& t, std::string_view key) const {
    auto v = parse_field(t, key);
    if (!Code::is_valid(v)) fail(t.column, "invalid code '" + std::string(v) + "'");
    return Code(v);
  }

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace wire_detail

inline void write_graph(const AttributionGraph& g, std::ostream& out) {
  if (auto problem = g.find_violation()) throw Error(ErrorCode::InvalidGraph, *problem);
  const auto& m = g.meta();
  if (!wire_detail::valid_id(m.id))
    throw Error(ErrorCode::InvalidGraph, "graph id must be non-empty without whitespace");
  if (m.language.empty() || m.country.empty())
    throw Error(ErrorCode::InvalidGraph, "graph '" + m.id + "' lacks language/country");

  std::string buf;
  buf += std::string(kGraphMagic) + " v" + std::to_string(kGraphFormatVersion) + "\n";
  buf += "meta language=" + m.language.str() + " country=" + m.country.str() + " id=" + m.id +
         " collapsed=" + (m.collapsed ? "1" : "0") + " normalized=" + (m.normalized ? "1" : "0") +
         "\n";
  const auto& nodes = g.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& n = nodes[i];
    buf += "n " + std::to_string(i) + " " + std::to_string(n.layer) + " " + kind_letter(n.kind) +
           " " + std::to_string(n.feature_index);
    if (n.position) buf += " " + std::to_string(*n.position);
    buf += "\n";
  }
  auto ordinal = [&](const FeatureNode& n) {
    return static_cast<std::size_t>(std::lower_bound(nodes.begin(), nodes.end(), n) - nodes.begin());
  };
  for (const auto& e : g.edges()) {
    buf += "e " + std::to_string(ordinal(e.src)) + " " + std::to_string(ordinal(e.dst)) + " " +
           to_hexfloat(e.weight) + "\n";
  }
  out << buf;
  if (!out) throw Error(ErrorCode::IoError, "failed writing graph '" + m.id + "'");
}

inline std::string graph_to_string(const AttributionGraph& g) {
  std::ostringstream os;
  write_graph(g, os);
  return os.str();
}

// Parses a complete graph document. Throws FormatError (with line/column) on
// any malformed content and VersionError on an unknown format version; no
// partially read graph is ever returned. Graphs flagged normalized must satisfy
// sum(|w|) = 1 within `tolerance`.
inline AttributionGraph parse_graph(std::string_view text,
                                    double tolerance = kNormalizationTolerance) {
  using wire_detail::LineParser;
  using wire_detail::split_spaces;

  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string_view::npos) {
        throw FormatError(lines.size() + 1, text.size() - start + 1,
                          "unterminated final line (truncated input?)");
      }
      lines.push_back(text.substr(start, end - start));
      start = end + 1;
    }
  }
  if (lines.empty()) throw FormatError(1, 1, "empty input");

  {
    LineParser p(1);
    auto header = lines[0];
    const std::string prefix = std::string(kGraphMagic) + " v";
    if (header.substr(0, prefix.size()) != prefix)
      p.fail(1, "expected '" + std::string(kGraphMagic) + " v1' header");
    auto version_text = header.substr(prefix.size());
    int version = 0;
    auto [ptr, ec] =
        std::from_chars(version_text.data(), version_text.data() + version_text.size(), version);
    if (version_text.empty() || ec != std::errc() ||
        ptr != version_text.data() + version_text.size())
      p.fail(prefix.size() + 1, "malformed format version '" + std::string(version_text) + "'");
    if (version != kGraphFormatVersion)
      throw Error(ErrorCode::VersionError,
                  "unsupported graph format version " + std::string(version_text));
  }

  if (lines.size() < 2) throw FormatError(2, 1, "missing meta line (truncated input?)");
  GraphMeta meta;
  {
    LineParser p(2);
    auto tokens = split_spaces(lines[1]);
    if (tokens.size() != 6 || tokens[0].text != "meta")
      p.fail(1, "expected 'meta language=.. country=.. id=.. collapsed=.. normalized=..'");
    meta.language = p.parse_code(tokens[1], "language");
    meta.country = p.parse_code(tokens[2], "country");
    auto id = p.parse_field(tokens[3], "id");
    if (!wire_detail::valid_id(id)) p.fail(tokens[3].column, "invalid id");
    meta.id = std::string(id);
    meta.collapsed = p.parse_flag(tokens[4], "collapsed");
    meta.normalized = p.parse_flag(tokens[5], "normalized");
  }

  std::vector<FeatureNode> nodes;
  std::vector<AttributionEdge> edges;
  std::uint32_t prev_src = 0, prev_dst = 0;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    LineParser p(i + 1);
    auto tokens = split_spaces(lines[i]);
    if (tokens[0].text == "n") {
      if (!edges.empty()) p.fail(1, "node line after edge lines");
      if (tokens.size() != 5 && tokens.size() != 6) p.fail(1, "node line needs 4 or 5 fields");
      auto ordinal = p.parse_u32(tokens[1], "ordinal");
      if (ordinal != nodes.size())
        p.fail(tokens[1].column, "expected ordinal " + std::to_string(nodes.size()));
      FeatureNode n;
      n.layer = p.parse_u32(tokens[2], "layer");
      if (tokens[3].text.size() != 1 || !kind_from_letter(tokens[3].text[0]))
        p.fail(tokens[3].column, "node kind must be one of E, F, R, L");
      n.kind = *kind_from_letter(tokens[3].text[0]);
      n.feature_index = p.parse_u32(tokens[4], "feature index");
      if (tokens.size() == 6) n.position = p.parse_u32(tokens[5], "token position");
      if (!nodes.empty() && !(nodes.back() < n)) p.fail(1, "nodes not in strictly sorted order");
      nodes.push_back(n);
    } else if (tokens[0].text == "e") {
      if (tokens.size() != 4) p.fail(1, "edge line needs 3 fields");
      auto src = p.parse_u32(tokens[1], "source ordinal");
      auto dst = p.parse_u32(tokens[2], "target ordinal");
      if (src >= nodes.size()) p.fail(tokens[1].column, "source ordinal out of range");
      if (dst >= nodes.size()) p.fail(tokens[2].column, "target ordinal out of range");
      if (!edges.empty() && !(std::pair(prev_src, prev_dst) < std::pair(src, dst)))
        p.fail(1, "edges not in strictly sorted order");
      auto weight = parse_hexfloat(tokens[3].text);
      if (!weight) p.fail(tokens[3].column, "weight is not a finite hexadecimal float");
      if (!is_forward_edge(nodes[src], nodes[dst])) p.fail(1, "edge does not point forward");
      edges.push_back({nodes[src], nodes[dst], *weight});
      prev_src = src;
      prev_dst = dst;
    } else {
      p.fail(1, "unexpected line '" + std::string(lines[i].substr(0, 32)) + "'");
    }
  }

  try {
    return AttributionGraph::from_parts(std::move(nodes), std::move(edges), std::move(meta),
                                        ErrorCode::FormatError, tolerance);
  } catch (const Error& e) {
    throw FormatError(lines.size(), 1, e.detail());
  }
}

inline AttributionGraph read_graph(std::istream& in, double tolerance = kNormalizationTolerance) {
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_graph(text, tolerance);
}

inline AttributionGraph read_graph_file(const std::filesystem::path& path,
                                        double tolerance = kNormalizationTolerance) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  try {
    return read_graph(in, tolerance);
  } catch (const FormatError& e) {
    throw Error(ErrorCode::FormatError, path.string() + ": " + e.detail());
  }
}

inline void write_graph_file(const AttributionGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot create " + path.string());
  write_graph(g, out);
}

}  // namespace pathtrace
