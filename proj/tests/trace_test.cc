#include "paskit/trace.h"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.h"

namespace paskit {
namespace {

using testing_support::MakeTrace;

// bos_len=1, image=[2,4), instruction=[4,5), n=7.
SpanLayout SmallLayout() { return SpanLayout::Create(1, {2, 4}, {4, 5}, 7); }

TEST(SpanLayoutTest, DerivedLengths) {
  const SpanLayout layout = SmallLayout();
  EXPECT_EQ(layout.input_length(), 4u);
  EXPECT_EQ(layout.output_start(), 5u);
  EXPECT_EQ(layout.output_length(), 3u);
  EXPECT_EQ(layout.total_length(), 7u);
  EXPECT_EQ(layout.output_span(), (PositionRange{5, 8}));
}

TEST(SpanLayoutTest, RejectsGapsAndOverlaps) {
  EXPECT_THROW(SpanLayout::Create(1, {3, 4}, {4, 5}, 7), std::invalid_argument);
  EXPECT_THROW(SpanLayout::Create(1, {2, 5}, {4, 5}, 7), std::invalid_argument);
  EXPECT_THROW(SpanLayout::Create(1, {2, 4}, {4, 9}, 7), std::invalid_argument);
}

TEST(SpanLayoutTest, FromLengthsMatchesCreate) {
  EXPECT_EQ(SpanLayout::FromLengths(1, 2, 1, 3), SmallLayout());
}

TEST(RoleOfTest, SmallLayoutRoles) {
  const SpanLayout layout = SmallLayout();
  EXPECT_EQ(RoleOf(layout, 1), TokenRole::kBos);
  EXPECT_EQ(RoleOf(layout, 3), TokenRole::kImage);
  EXPECT_EQ(RoleOf(layout, 6), TokenRole::kOutput);
  EXPECT_EQ(RoleOf(layout, 4), TokenRole::kInstruction);
}

TEST(RoleOfTest, OutOfRange) {
  const SpanLayout layout = SmallLayout();
  EXPECT_THROW(RoleOf(layout, 0), std::out_of_range);
  EXPECT_THROW(RoleOf(layout, 8), std::out_of_range);
}

TEST(RoleOfTest, PartitionCountsSumToN) {
  const SpanLayout layout = SpanLayout::FromLengths(2, 5, 3, 9);
  std::size_t counts[4] = {};
  for (Position j = 1; j <= layout.total_length(); ++j) {
    ++counts[static_cast<int>(RoleOf(layout, j))];
  }
  EXPECT_EQ(counts[0], 2u);
  EXPECT_EQ(counts[1], 5u);
  EXPECT_EQ(counts[2], 3u);
  EXPECT_EQ(counts[3], 9u);
}

TEST(SoftmaxTest, Symmetric) {
  const std::vector<double> p = Softmax(std::vector<double>{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(SoftmaxTest, LogThree) {
  const std::vector<double> p =
      Softmax(std::vector<double>{std::log(1.0), std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-12);
  EXPECT_NEAR(p[1], 0.75, 1e-12);
}

TEST(SoftmaxTest, LargeLogitsDoNotOverflow) {
  const std::vector<double> p =
      Softmax(std::vector<double>{1000.0, 1000.0, 1000.0});
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(SoftmaxTest, ShiftInvariant) {
  std::vector<double> logits = {0.3, -1.2, 2.5, 0.0, 7.1};
  const std::vector<double> base = Softmax(logits);
  for (double& v : logits) v += 123.456;
  const std::vector<double> shifted = Softmax(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    EXPECT_NEAR(base[i], shifted[i], 1e-9);
    EXPECT_GT(base[i], 0.0);
    total += base[i];
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(SoftmaxTest, EmptyThrows) {
  EXPECT_THROW(Softmax(std::vector<double>{}), std::invalid_argument);
}

TEST(InvariantTest, BuilderTraceIsValid) {
  const Trace t = MakeTrace("t", {"a", "dog"});
  EXPECT_EQ(FindInvariantViolation(t), std::nullopt);
}

TEST(InvariantTest, TokenCountMustMatchLayout) {
  Trace t = MakeTrace("t", {"a", "dog"});
  t.tokens.pop_back();
  EXPECT_TRUE(FindInvariantViolation(t).has_value());
}

TEST(InvariantTest, AttentionKeyInsideOutputSpan) {
  Trace t = MakeTrace("t", {"a", "dog"});
  t.attention[{0, 3}] = {0.5f, 0.5f};
  EXPECT_TRUE(FindInvariantViolation(t).has_value());
}

TEST(InvariantTest, AttentionLayerMustBeStored) {
  Trace t = MakeTrace("t", {"a", "dog"});
  t.attention[{3, 5}] = {0.25f, 0.25f, 0.25f, 0.25f};
  const auto v = FindInvariantViolation(t);
  ASSERT_TRUE(v.has_value());
  EXPECT_NE(v->find("layer 3"), std::string::npos) << *v;
}

TEST(InvariantTest, RowSumTolerance) {
  Trace t = MakeTrace("t", {"a", "dog"});
  auto& row = t.attention.at({0, 5});
  row[0] += 5e-5f;
  EXPECT_EQ(FindInvariantViolation(t), std::nullopt);
  row[0] += 1e-3f;
  const auto v = FindInvariantViolation(t);
  ASSERT_TRUE(v.has_value());
  EXPECT_NE(v->find("row sum"), std::string::npos) << *v;
}

TEST(InvariantTest, NegativeWeight) {
  Trace t = MakeTrace("t", {"a", "dog"});
  auto& row = t.attention.at({0, 5});
  row[0] = -0.1f;
  row[1] = 0.25f + 0.1f;
  EXPECT_TRUE(FindInvariantViolation(t).has_value());
}

TEST(InvariantTest, LogitLengthAndFiniteness) {
  Trace t = MakeTrace("t", {"a", "dog"});
  t.logit_slices.at(5).push_back(0.0f);
  EXPECT_TRUE(FindInvariantViolation(t).has_value());
  t = MakeTrace("t", {"a", "dog"});
  t.logit_slices.at(5)[2] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_TRUE(FindInvariantViolation(t).has_value());
}

TEST(InvariantTest, MarginalShape) {
  Trace t = MakeTrace("t", {"a", "dog"});
  t.marginals[6] = MarginalLogits(2, 8, std::vector<float>(16, 0.0f));
  EXPECT_EQ(FindInvariantViolation(t), std::nullopt);
  t.marginals[6] = MarginalLogits(2, 4, std::vector<float>(8, 0.0f));
  EXPECT_TRUE(FindInvariantViolation(t).has_value());
}

TEST(InvariantTest, TokenIdBelowVocab) {
  Trace t = MakeTrace("t", {"a", "dog"});
  t.tokens.back().id = 8;
  EXPECT_TRUE(FindInvariantViolation(t).has_value());
}

TEST(TraceTest, Lookups) {
  const Trace t = MakeTrace("t", {"a", "dog"}, 2, 1, {0, 3});
  EXPECT_NE(t.FindAttention(3, 6), nullptr);
  EXPECT_EQ(t.FindAttention(1, 6), nullptr);
  EXPECT_NE(t.FindLogits(5), nullptr);
  EXPECT_EQ(t.FindMarginal(5), nullptr);
  EXPECT_TRUE(t.HasLayer(3));
  EXPECT_FALSE(t.HasLayer(2));
  EXPECT_EQ(t.TokenAt(6).surface, "dog");
}

TEST(LabelTest, RoundTripNames) {
  for (MentionLabel l : {MentionLabel::kReal, MentionLabel::kHallucinated,
                         MentionLabel::kUnlabeled}) {
    EXPECT_EQ(ParseLabel(LabelName(l)), l);
  }
  EXPECT_EQ(ParseLabel("maybe"), std::nullopt);
}

}  // namespace
}  // namespace paskit
