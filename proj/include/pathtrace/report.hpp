#pragma once

// Self-contained HTML report (inline SVG and CSS, no external assets).

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matrix_io.hpp"
#include "similarity.hpp"
#include "stats.hpp"

namespace pathtrace {

struct ReportSection {
  SimilarityMatrix matrix;
  PairStatsTable stats;
};

struct ReportData {
  nlohmann::ordered_json manifest;
  std::vector<ReportSection> sections;  // fixed-language, then fixed-culture
  std::optional<KoreaSlice> korea;
  std::optional<std::vector<PairDistribution>> similar_pairs;
  std::vector<SimilarityMatrix> per_question;
};

namespace report_detail {

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

// White to blue over [0, 1].
inline std::string heat_color(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const int r = static_cast<int>(255 - 200 * v), g = static_cast<int>(255 - 140 * v), b = 255;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
  return buf;
}

inline std::string heatmap_table(const SimilarityMatrix& m) {
  std::string s = "<table class=\"heat\"><tr><th>pair</th>";
  for (const auto& c : m.columns) s += "<th>" + c.str() + "</th>";
  s += "</tr>\n";
  for (std::size_t r = 0; r < m.row_pairs.size(); ++r) {
    s += "<tr><th>" + m.row_pairs[r].label() + "</th>";
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
      if (auto v = m.at(r, c))
        s += "<td style=\"background:" + heat_color(*v) + "\">" + num(*v) + "</td>";
      else
        s += "<td class=\"na\">NA</td>";
    }
    s += "</tr>\n";
  }
  return s + "</table>\n";
}

inline std::string bar_chart(const PairStatsTable& t) {
  const double bar_w = 48, gap = 16, left = 44, top = 16, plot_h = 240, bottom = 70;
  const double width = left + static_cast<double>(t.pairs.size()) * (bar_w + gap) + gap;
  const double height = top + plot_h + bottom;
  auto y = [&](double v) { return top + plot_h * (1.0 - std::clamp(v, 0.0, 1.0)); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width, 0) +
                  "\" height=\"" + num(height, 0) + "\">\n";
  s += "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" "
       "patternTransform=\"rotate(45)\"><rect width=\"6\" height=\"6\" fill=\"#9ecae1\"/>"
       "<line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#08519c\" stroke-width=\"2\"/></pattern></defs>\n";
  for (double tick = 0.0; tick <= 1.0001; tick += 0.25) {
    s += "<line x1=\"" + num(left, 0) + "\" x2=\"" + num(width, 0) + "\" y1=\"" + num(y(tick), 1) +
         "\" y2=\"" + num(y(tick), 1) + "\" stroke=\"#ddd\"/>";
    s += "<text x=\"" + num(left - 4, 0) + "\" y=\"" + num(y(tick) + 4, 1) +
         "\" text-anchor=\"end\" font-size=\"11\">" + num(tick) + "</text>\n";
  }
  for (std::size_t i = 0; i < t.pairs.size(); ++i) {
    const auto& p = t.pairs[i];
    const double x = left + gap + static_cast<double>(i) * (bar_w + gap);
    const double cx = x + bar_w / 2;
    const std::string fill = p.is_similar_language_pair ? "url(#hatch)" : "#6baed6";
    s += "<rect x=\"" + num(x, 1) + "\" y=\"" + num(y(p.mean), 1) + "\" width=\"" + num(bar_w, 0) +
         "\" height=\"" + num(top + plot_h - y(p.mean), 1) + "\" fill=\"" + fill +
         "\" stroke=\"#08519c\"><title>" + p.pair.label() + " mean " + num(p.mean, 3) + " &#177; " +
         num(p.ci95_half_width, 3) + " (n=" + std::to_string(p.n) + ")</title></rect>\n";
    if (p.ci95_half_width > 0) {
      const double lo = y(p.mean - p.ci95_half_width), hi = y(p.mean + p.ci95_half_width);
      s += "<line x1=\"" + num(cx, 1) + "\" x2=\"" + num(cx, 1) + "\" y1=\"" + num(lo, 1) +
           "\" y2=\"" + num(hi, 1) + "\" stroke=\"#000\"/>";
      for (double yy : {lo, hi})
        s += "<line x1=\"" + num(cx - 6, 1) + "\" x2=\"" + num(cx + 6, 1) + "\" y1=\"" + num(yy, 1) +
             "\" y2=\"" + num(yy, 1) + "\" stroke=\"#000\"/>";
      s += "\n";
    }
    s += "<text x=\"" + num(cx, 1) + "\" y=\"" + num(top + plot_h + 14, 1) +
         "\" text-anchor=\"end\" font-size=\"11\" transform=\"rotate(-45 " + num(cx, 1) + " " +
         num(top + plot_h + 14, 1) + ")\">" + p.pair.label() + "</text>\n";
  }
  const double my = y(t.overall_mean);
  s += "<line x1=\"" + num(left, 0) + "\" x2=\"" + num(width, 0) + "\" y1=\"" + num(my, 1) +
       "\" y2=\"" + num(my, 1) + "\" stroke=\"#fd8d3c\" stroke-width=\"2\" stroke-dasharray=\"6 3\">"
       "<title>overall mean " + num(t.overall_mean, 3) + "</title></line>\n";
  return s + "</svg>\n";
}

inline std::string strip_chart(const std::vector<PairDistribution>& d) {
  const double row_h = 36, left = 70, plot_w = 400, top = 10;
  const double height = top + row_h * static_cast<double>(d.size()) + 24;
  auto x = [&](double v) { return left + plot_w * std::clamp(v, 0.0, 1.0); };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(left + plot_w + 20, 0) +
                  "\" height=\"" + num(height, 0) + "\">\n";
  for (double tick = 0.0; tick <= 1.0001; tick += 0.25)
    s += "<line x1=\"" + num(x(tick), 1) + "\" x2=\"" + num(x(tick), 1) + "\" y1=\"" + num(top, 0) +
         "\" y2=\"" + num(height - 20, 0) + "\" stroke=\"#ddd\"/><text x=\"" + num(x(tick), 1) +
         "\" y=\"" + num(height - 6, 0) + "\" text-anchor=\"middle\" font-size=\"11\">" + num(tick) +
         "</text>\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double cy = top + row_h * (static_cast<double>(i) + 0.5);
    s += "<text x=\"" + num(left - 8, 0) + "\" y=\"" + num(cy + 4, 1) +
         "\" text-anchor=\"end\" font-size=\"12\">" + d[i].pair.label() + "</text>";
    for (std::size_t k = 0; k < d[i].values.size(); ++k)
      s += "<circle cx=\"" + num(x(d[i].values[k]), 1) + "\" cy=\"" + num(cy, 1) +
           "\" r=\"4\" fill=\"#3182bd\" fill-opacity=\"0.7\"><title>" + d[i].columns[k].str() + " " +
           num(d[i].values[k]) + "</title></circle>";
    s += "<line x1=\"" + num(x(d[i].mean), 1) + "\" x2=\"" + num(x(d[i].mean), 1) + "\" y1=\"" +
         num(cy - 10, 1) + "\" y2=\"" + num(cy + 10, 1) + "\" stroke=\"#fd8d3c\" stroke-width=\"2\"/>\n";
  }
  return s + "</svg>\n";
}

}  // namespace report_detail

inline std::string render_html_report(const ReportData& data) {
  using namespace report_detail;
  std::string s =
      "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>pathtrace report</title>\n"
      "<style>body{font-family:sans-serif;margin:2em;max-width:1100px}"
      "table.heat{border-collapse:collapse;font-size:12px}"
      "table.heat td,table.heat th{border:1px solid #ccc;padding:3px 6px;text-align:center}"
      "td.na{color:#999}pre{background:#f4f4f4;padding:1em;font-size:11px}"
      "footer{margin-top:2em;font-size:12px;color:#555}</style></head><body>\n"
      "<h1>Reasoning-path similarity report</h1>\n";

  for (const auto& sec : data.sections) {
    const bool fl = sec.matrix.mode == MatrixMode::FixedLanguage;
    s += std::string("<h2>") + (fl ? "Fixed question language, country pairs varied"
                                   : "Fixed culture, language pairs varied") + "</h2>\n";
    s += "<p>Mean similarity per pair with 95% confidence interval. Hatched bars are similar-language "
         "pairs; the dashed orange line is the overall mean (" + num(sec.stats.overall_mean, 3) + ").</p>\n";
    s += bar_chart(sec.stats);
    s += heatmap_table(sec.matrix);
  }

  if (data.korea) {
    const auto& k = *data.korea;
    s += "<h2>KR-KP across question languages</h2>\n<table class=\"heat\"><tr>";
    for (const auto& l : k.languages) s += "<th>" + l.str() + "</th>";
    s += "</tr><tr>";
    for (double v : k.values) s += "<td style=\"background:" + heat_color(v) + "\">" + num(v) + "</td>";
    s += "</tr></table>\n<p>Korean question languages: mean " + num(k.korean_mean) +
         ". Other languages: mean " + num(k.other_mean) + ".</p>\n";
  }

  if (data.similar_pairs) {
    s += "<h2>Similar-language pairs across cultures</h2>\n" + strip_chart(*data.similar_pairs);
    s += "<table class=\"heat\"><tr><th>pair</th><th>mean</th><th>sd</th></tr>";
    for (const auto& d : *data.similar_pairs)
      s += "<tr><th>" + d.pair.label() + "</th><td>" + num(d.mean, 3) + "</td><td>" + num(d.sd, 3) + "</td></tr>";
    s += "</table>\n";
  }

  for (const auto& m : data.per_question) {
    s += std::string("<h2>Per-question average (") + std::string(to_string(m.mode)) + ")</h2>\n";
    s += heatmap_table(m);
  }

  s += "<h2>Run manifest</h2>\n<pre>" + escape(data.manifest.dump(2)) + "</pre>\n";
  s += "<footer>Confidence intervals use Student-t with n - 1 degrees of freedom, where n is the number "
       "of populated cells in the pair's matrix row (one per held-fixed code). With few codes the "
       "intervals are wide and should be read as indicative only.</footer>\n</body></html>\n";
  return s;
}

}  // namespace pathtrace
