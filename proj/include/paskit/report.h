#ifndef PASKIT_REPORT_H_
#define PASKIT_REPORT_H_

// Text and SVG renderings of scores and evaluation results.

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "paskit/evaluation.h"
#include "paskit/scoring.h"

namespace paskit {

inline constexpr std::string_view kScoreHeader =
    "trace_id,k,class,label,detector,score";

// One record per line under kScoreHeader.
std::string FormatScoreFile(std::span<const ScoreRecord> records);
// Throws std::runtime_error naming the offending line.
std::vector<ScoreRecord> ParseScoreFile(std::string_view text);

using LabelKey = std::pair<std::string, Position>;

// "trace_id,k,label" lines with a header row.
std::map<LabelKey, MentionLabel> ParseLabelManifest(std::string_view text);

// Scores and labels of one detector, in record order; unlabeled skipped.
struct DetectorScores {
  std::vector<double> scores;
  std::vector<MentionLabel> labels;
};
std::map<std::string, DetectorScores> GroupByDetector(
    std::span<const ScoreRecord> records);

std::string FormatCurveCsv(std::span<const CurvePoint> points,
                           std::string_view x_name, std::string_view y_name);
std::string FormatCurveJson(std::span<const CurvePoint> points,
                            std::string_view x_name, std::string_view y_name);

// Structured report (JSON) covering every evaluated detector.
std::string FormatReportJson(std::span<const EvalReport> reports);

struct CurveSeries {
  std::string name;
  std::vector<CurvePoint> points;
};

// Line chart on the unit square. `diagonal` draws the y = x reference line;
// a non-negative `base_rate` draws a horizontal line at that height.
std::string RenderCurveSvg(std::string_view title, std::string_view x_label,
                           std::string_view y_label,
                           std::span<const CurveSeries> series,
                           bool diagonal, double base_rate = -1.0);

struct DistributionPanel {
  std::string detector;
  std::vector<double> real;
  std::vector<double> hallucinated;
};

// Mirrored-histogram violins per label with dashed quartile lines.
std::string RenderDistributionSvg(std::span<const DistributionPanel> panels);

}  // namespace paskit

#endif  // PASKIT_REPORT_H_
