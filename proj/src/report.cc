#include "paskit/report.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "file_util.h"
#include "json.hpp"

namespace paskit {

namespace {

using internal::FormatDouble;

std::string CsvField(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) {
    return std::string(field);
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::vector<std::string> SplitCsvLine(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back().push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back().push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back().push_back(c);
    }
  }
  if (quoted) throw std::runtime_error("unterminated quote");
  return fields;
}

std::vector<std::string_view> Lines(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return lines;
}

Position ParsePosition(const std::string& field) {
  std::size_t used = 0;
  const unsigned long long value = std::stoull(field, &used);
  if (used != field.size() || value == 0) throw std::invalid_argument(field);
  return static_cast<Position>(value);
}

double ParseScore(const std::string& field) {
  std::size_t used = 0;
  const double value = std::stod(field, &used);
  if (used != field.size() || !std::isfinite(value)) {
    throw std::invalid_argument(field);
  }
  return value;
}

}  // namespace

std::string FormatScoreFile(std::span<const ScoreRecord> records) {
  std::string out(kScoreHeader);
  out += "\n";
  for (const ScoreRecord& r : records) {
    out += CsvField(r.trace_id) + "," + std::to_string(r.position) + "," +
           CsvField(r.class_name) + "," + std::string(LabelName(r.label)) +
           "," + CsvField(r.detector) + "," + FormatDouble(r.score) + "\n";
  }
  return out;
}

std::vector<ScoreRecord> ParseScoreFile(std::string_view text) {
  const std::vector<std::string_view> lines = Lines(text);
  if (lines.empty() || lines[0] != kScoreHeader) {
    throw std::runtime_error("score file must start with header '" +
                             std::string(kScoreHeader) + "'");
  }
  std::vector<ScoreRecord> records;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      const std::vector<std::string> f = SplitCsvLine(lines[i]);
      if (f.size() != 6) throw std::runtime_error("expected 6 fields");
      ScoreRecord r;
      r.trace_id = f[0];
      r.position = ParsePosition(f[1]);
      r.class_name = f[2];
      const auto label = ParseLabel(f[3]);
      if (!label) throw std::runtime_error("unknown label '" + f[3] + "'");
      r.label = *label;
      r.detector = f[4];
      r.score = ParseScore(f[5]);
      records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error("score file line " + std::to_string(i + 1) +
                               ": " + e.what());
    }
  }
  return records;
}

std::map<LabelKey, MentionLabel> ParseLabelManifest(std::string_view text) {
  const std::vector<std::string_view> lines = Lines(text);
  if (lines.empty() || lines[0] != "trace_id,k,label") {
    throw std::runtime_error("label manifest must start with 'trace_id,k,label'");
  }
  std::map<LabelKey, MentionLabel> labels;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    try {
      const std::vector<std::string> f = SplitCsvLine(lines[i]);
      if (f.size() != 3) throw std::runtime_error("expected 3 fields");
      const auto label = ParseLabel(f[2]);
      if (!label) throw std::runtime_error("unknown label '" + f[2] + "'");
      labels[{f[0], ParsePosition(f[1])}] = *label;
    } catch (const std::exception& e) {
      throw std::runtime_error("label manifest line " + std::to_string(i + 1) +
                               ": " + e.what());
    }
  }
  return labels;
}

std::map<std::string, DetectorScores> GroupByDetector(
    std::span<const ScoreRecord> records) {
  std::map<std::string, DetectorScores> groups;
  for (const ScoreRecord& r : records) {
    DetectorScores& g = groups[r.detector];
    if (r.label == MentionLabel::kUnlabeled) continue;
    g.scores.push_back(r.score);
    g.labels.push_back(r.label);
  }
  return groups;
}

std::string FormatCurveCsv(std::span<const CurvePoint> points,
                           std::string_view x_name, std::string_view y_name) {
  std::string out = std::string(x_name) + "," + std::string(y_name) + "\n";
  for (const CurvePoint& p : points) {
    out += FormatDouble(p.x) + "," + FormatDouble(p.y) + "\n";
  }
  return out;
}

std::string FormatCurveJson(std::span<const CurvePoint> points,
                            std::string_view x_name, std::string_view y_name) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const CurvePoint& p : points) {
    j.push_back({{std::string(x_name), p.x}, {std::string(y_name), p.y}});
  }
  return j.dump(2) + "\n";
}

std::string FormatReportJson(std::span<const EvalReport> reports) {
  using nlohmann::ordered_json;
  auto quartiles = [](const Quartiles& q) {
    return ordered_json{{"q1", q.q1}, {"median", q.median}, {"q3", q.q3}};
  };
  auto curve = [](std::span<const CurvePoint> points) {
    ordered_json arr = ordered_json::array();
    for (const CurvePoint& p : points) arr.push_back({p.x, p.y});
    return arr;
  };
  ordered_json doc;
  doc["detectors"] = ordered_json::array();
  for (const EvalReport& r : reports) {
    ordered_json item;
    item["detector"] = r.detector;
    item["auroc"] = r.auroc;
    item["n_real"] = r.n_real;
    item["n_hallucinated"] = r.n_hallucinated;
    item["quartiles"] = {{"real", quartiles(r.real_quartiles)},
                         {"hallucinated", quartiles(r.hallucinated_quartiles)}};
    item["roc"] = curve(r.roc);
    item["prc"] = curve(r.prc);
    doc["detectors"].push_back(std::move(item));
  }
  return doc.dump(2) + "\n";
}

namespace {

constexpr double kWidth = 480;
constexpr double kHeight = 400;
constexpr double kLeft = 60;
constexpr double kRight = 140;
constexpr double kTop = 40;
constexpr double kBottom = 50;

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                    "#ff7f0e", "#9467bd", "#8c564b",
                                    "#e377c2", "#7f7f7f"};

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string Escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out.push_back(c);
    }
  }
  return out;
}

std::string SvgOpen(double width, double height) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + Num(width) +
         "\" height=\"" + Num(height) + "\" viewBox=\"0 0 " + Num(width) +
         " " + Num(height) +
         "\" font-family=\"sans-serif\" font-size=\"12\">\n"
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string Text(double x, double y, std::string_view text,
                 std::string_view anchor = "middle") {
  return "<text x=\"" + Num(x) + "\" y=\"" + Num(y) + "\" text-anchor=\"" +
         std::string(anchor) + "\">" + Escape(text) + "</text>\n";
}

std::string Line(double x1, double y1, double x2, double y2,
                 std::string_view stroke, bool dashed = false) {
  std::string out = "<line x1=\"" + Num(x1) + "\" y1=\"" + Num(y1) +
                    "\" x2=\"" + Num(x2) + "\" y2=\"" + Num(y2) +
                    "\" stroke=\"" + std::string(stroke) + "\"";
  if (dashed) out += " stroke-dasharray=\"4 3\"";
  return out + "/>\n";
}

}  // namespace

std::string RenderCurveSvg(std::string_view title, std::string_view x_label,
                           std::string_view y_label,
                           std::span<const CurveSeries> series, bool diagonal,
                           double base_rate) {
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + x * plot_w; };
  auto py = [&](double y) { return kTop + (1.0 - y) * plot_h; };

  std::string svg = SvgOpen(kWidth, kHeight);
  svg += Text(kWidth / 2, 22, title);
  svg += "<rect x=\"" + Num(kLeft) + "\" y=\"" + Num(kTop) + "\" width=\"" +
         Num(plot_w) + "\" height=\"" + Num(plot_h) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double t = i / 4.0;
    svg += Text(px(t), py(0) + 16, Num(t));
    svg += Text(px(0) - 6, py(t) + 4, Num(t), "end");
  }
  svg += Text(px(0.5), kHeight - 12, x_label);
  svg += "<text x=\"16\" y=\"" + Num(py(0.5)) +
         "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         Num(py(0.5)) + ")\">" + Escape(y_label) + "</text>\n";
  if (diagonal) svg += Line(px(0), py(0), px(1), py(1), "gray", true);
  if (base_rate >= 0.0) {
    svg += Line(px(0), py(base_rate), px(1), py(base_rate), "gray", true);
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    std::string pts;
    for (const CurvePoint& p : series[s].points) {
      if (!pts.empty()) pts.push_back(' ');
      pts += Num(px(p.x)) + "," + Num(py(p.y));
    }
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(color) +
           "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
    const double ly = kTop + 14 + 18 * static_cast<double>(s);
    svg += Line(kWidth - kRight + 10, ly - 4, kWidth - kRight + 30, ly - 4,
                color);
    svg += Text(kWidth - kRight + 34, ly, series[s].name, "start");
  }
  return svg + "</svg>\n";
}

std::string RenderDistributionSvg(std::span<const DistributionPanel> panels) {
  constexpr double kPanelW = 220;
  constexpr double kPanelH = 300;
  constexpr int kBins = 24;
  const double width = std::max<double>(1, panels.size()) * kPanelW;
  std::string svg = SvgOpen(width, kPanelH + 60);

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const DistributionPanel& panel = panels[p];
    const double x0 = static_cast<double>(p) * kPanelW;
    svg += Text(x0 + kPanelW / 2, 22, panel.detector);

    double lo = 0.0;
    double hi = 0.0;
    bool any = false;
    for (const auto* group : {&panel.real, &panel.hallucinated}) {
      for (double v : *group) {
        lo = any ? std::min(lo, v) : v;
        hi = any ? std::max(hi, v) : v;
        any = true;
      }
    }
    if (!any) continue;
    if (hi == lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double top = 40;
    const double bottom = top + kPanelH - 40;
    auto py = [&](double v) { return bottom - (v - lo) / (hi - lo) * (bottom - top); };
    svg += Text(x0 + 30, py(hi) + 4, Num(hi), "end");
    svg += Text(x0 + 30, py(lo) + 4, Num(lo), "end");

    const std::pair<const std::vector<double>*, const char*> groups[] = {
        {&panel.real, "real"}, {&panel.hallucinated, "hallucinated"}};
    for (int g = 0; g < 2; ++g) {
      const std::vector<double>& values = *groups[g].first;
      const double cx = x0 + 80 + 90 * g;
      svg += Text(cx, bottom + 20, groups[g].second);
      if (values.empty()) continue;
      std::vector<double> counts(kBins, 0.0);
      for (double v : values) {
        int bin = static_cast<int>((v - lo) / (hi - lo) * kBins);
        counts[std::clamp(bin, 0, kBins - 1)] += 1.0;
      }
      const double peak = *std::max_element(counts.begin(), counts.end());
      std::string left;
      std::string right;
      for (int b = 0; b < kBins; ++b) {
        const double y = py(lo + (b + 0.5) / kBins * (hi - lo));
        const double half = 35.0 * counts[b] / peak;
        left += Num(cx - half) + "," + Num(y) + " ";
        right = Num(cx + half) + "," + Num(y) + " " + right;
      }
      svg += "<polygon fill=\"" + std::string(kPalette[g]) +
             "\" fill-opacity=\"0.4\" stroke=\"" + kPalette[g] +
             "\" points=\"" + left + right + "\"/>\n";
      const Quartiles q = ComputeQuartiles(values);
      for (double v : {q.q1, q.median, q.q3}) {
        svg += Line(cx - 35, py(v), cx + 35, py(v), "black", true);
      }
    }
  }
  return svg + "</svg>\n";
}

}  // namespace paskit
