#include "paskit/report.h"

#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"

namespace paskit {
namespace {

constexpr MentionLabel kR = MentionLabel::kReal;
constexpr MentionLabel kH = MentionLabel::kHallucinated;

std::vector<ScoreRecord> SampleRecords() {
  return {
      {"sim_000000", 42, "dining table", kR, "pas", 0.1234567890123},
      {"sim_000000", 42, "dining table", kR, "kl", -1e-17},
      {"odd,id \"q\"", 7, "cup", kH, "pas", 0.5},
      {"sim_000001", 50, "cat", MentionLabel::kUnlabeled, "pas", 0.25},
  };
}

TEST(ScoreFileTest, RoundTripIsExact) {
  const std::vector<ScoreRecord> records = SampleRecords();
  const std::string text = FormatScoreFile(records);
  EXPECT_EQ(text.rfind(std::string(kScoreHeader) + "\n", 0), 0u);
  EXPECT_EQ(ParseScoreFile(text), records);
  EXPECT_EQ(FormatScoreFile(ParseScoreFile(text)), text);
}

TEST(ScoreFileTest, ErrorsNameTheLine) {
  const std::string text = std::string(kScoreHeader) +
                           "\nt,5,dog,real,pas,0.5\nt,6,dog,maybe,pas,0.1\n";
  try {
    ParseScoreFile(text);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos)
        << e.what();
  }
  EXPECT_THROW(ParseScoreFile("wrong,header\n"), std::runtime_error);
  EXPECT_THROW(ParseScoreFile(std::string(kScoreHeader) + "\nt,x,d,real,p,1\n"),
               std::runtime_error);
  EXPECT_THROW(
      ParseScoreFile(std::string(kScoreHeader) + "\nt,5,d,real,p,nan\n"),
      std::runtime_error);
}

TEST(ScoreFileTest, HeaderOnlyIsEmpty) {
  EXPECT_TRUE(ParseScoreFile(std::string(kScoreHeader) + "\n").empty());
}

TEST(LabelManifestTest, Parses) {
  const auto labels =
      ParseLabelManifest("trace_id,k,label\na,5,real\na,9,hallucinated\n");
  ASSERT_EQ(labels.size(), 2u);
  EXPECT_EQ(labels.at({"a", 9}), kH);
  EXPECT_THROW(ParseLabelManifest("a,5,real\n"), std::runtime_error);
}

TEST(GroupTest, SkipsUnlabeled) {
  const std::vector<ScoreRecord> records = SampleRecords();
  const auto groups = GroupByDetector(records);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups.at("pas").scores.size(), 2u);
  EXPECT_EQ(groups.at("pas").labels, (std::vector<MentionLabel>{kR, kH}));
}

TEST(CurveExportTest, CsvAndJson) {
  const std::vector<CurvePoint> points = {{0, 0}, {0.5, 0.75}, {1, 1}};
  EXPECT_EQ(FormatCurveCsv(points, "fpr", "tpr"),
            "fpr,tpr\n0,0\n0.5,0.75\n1,1\n");
  const auto j = nlohmann::json::parse(FormatCurveJson(points, "fpr", "tpr"));
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[1]["tpr"], 0.75);
}

TEST(ReportJsonTest, HasDetectorsArray) {
  const std::vector<double> scores = {0.9, 0.4, 0.1, 0.6};
  const std::vector<MentionLabel> labels = {kH, kH, kR, kR};
  const std::vector<EvalReport> reports = {Evaluate("pas", scores, labels)};
  const auto j = nlohmann::json::parse(FormatReportJson(reports));
  ASSERT_EQ(j["detectors"].size(), 1u);
  EXPECT_EQ(j["detectors"][0]["detector"], "pas");
  EXPECT_EQ(j["detectors"][0]["auroc"], 0.75);
}

TEST(SvgTest, CurveChart) {
  const std::vector<CurveSeries> series = {
      {"pas", {{0, 0}, {0.25, 0.8}, {1, 1}}},
      {"nll", {{0, 0}, {0.5, 0.5}, {1, 1}}}};
  const std::string svg =
      RenderCurveSvg("ROC", "false positive rate", "true positive rate",
                     series, true);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  std::size_t polylines = 0;
  for (std::size_t at = svg.find("<polyline"); at != std::string::npos;
       at = svg.find("<polyline", at + 1)) {
    ++polylines;
  }
  EXPECT_GE(polylines, 2u);
  EXPECT_NE(svg.find("pas"), std::string::npos);
  EXPECT_EQ(svg, RenderCurveSvg("ROC", "false positive rate",
                                "true positive rate", series, true));
}

TEST(SvgTest, DistributionChartEscapesText) {
  const std::vector<DistributionPanel> panels = {
      {"a<b", {0.1, 0.2, 0.3, 0.4}, {0.5, 0.6, 0.7}}};
  const std::string svg = RenderDistributionSvg(panels);
  EXPECT_NE(svg.find("a&lt;b"), std::string::npos);
  EXPECT_NE(svg.find("stroke-dasharray"), std::string::npos);
}

}  // namespace
}  // namespace paskit
