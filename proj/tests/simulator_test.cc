#include "paskit/simulator.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "file_util.h"
#include "paskit/object_matching.h"
#include "paskit/scoring.h"
#include "paskit/trace_io.h"
#include "test_support.h"

namespace paskit {
namespace {

namespace fs = std::filesystem;
using testing_support::ScratchDir;

TEST(SimConfigTest, DefaultsAreValid) {
  EXPECT_NO_THROW(ValidateSimConfig(SimConfig{}));
}

TEST(SimConfigTest, RejectsInvalidFields) {
  SimConfig c;
  c.mode_shift = 0.9;
  EXPECT_THROW(ValidateSimConfig(c), std::invalid_argument);
  c = SimConfig{};
  c.image_len = 0;
  EXPECT_THROW(ValidateSimConfig(c), std::invalid_argument);
  c = SimConfig{};
  c.hallucination_rate = 1.0;
  EXPECT_THROW(ValidateSimConfig(c), std::invalid_argument);
  c = SimConfig{};
  c.signal_layer = 2;
  EXPECT_THROW(ValidateSimConfig(c), std::invalid_argument);
  c = SimConfig{};
  c.baseline.prelim = 0.5;
  EXPECT_THROW(ValidateSimConfig(c), std::invalid_argument);
  c = SimConfig{};
  c.concentration = 0.0;
  EXPECT_THROW(GenerateTrace(c, 0), std::invalid_argument);
}

TEST(SimConfigTest, JsonRoundTrip) {
  SimConfig c;
  c.seed = 0xfeedfacecafebeefull;
  c.mode_shift = 0.125;
  c.baseline.bos = 0.3;
  c.baseline.image = 0.4;
  c.mode_dependent_logits = false;
  const SimConfig back = SimConfigFromJson(SimConfigToJson(c));
  EXPECT_EQ(SimConfigToJson(back), SimConfigToJson(c));
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.baseline.bos, 0.3);
  EXPECT_FALSE(back.mode_dependent_logits);
}

TEST(SimConfigTest, PartialJsonKeepsDefaults) {
  const SimConfig c = SimConfigFromJson(R"({"n_traces": 7})");
  EXPECT_EQ(c.n_traces, 7u);
  EXPECT_EQ(c.vocab_size, SimConfig{}.vocab_size);
  EXPECT_THROW(SimConfigFromJson("[1, 2]"), std::runtime_error);
  EXPECT_THROW(SimConfigFromJson(R"({"seed": "x"})"), std::runtime_error);
}

TEST(GenerateTraceTest, DeterministicPerIndex) {
  SimConfig c;
  const SimulatedTrace a = GenerateTrace(c, 4);
  const SimulatedTrace b = GenerateTrace(c, 4);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(EncodeTrace(a.trace), EncodeTrace(b.trace));
  c.n_traces = 5000;
  EXPECT_EQ(GenerateTrace(c, 4).trace, a.trace);
  EXPECT_NE(GenerateTrace(c, 5).trace.tokens, a.trace.tokens);
  c.seed += 1;
  EXPECT_NE(GenerateTrace(c, 4).trace.tokens, a.trace.tokens);
}

TEST(GenerateTraceTest, SatisfiesModelInvariants) {
  SimConfig c;
  for (std::size_t i = 0; i < 30; ++i) {
    const Trace t = GenerateTrace(c, i).trace;
    EXPECT_EQ(FindInvariantViolation(t), std::nullopt) << i;
    EXPECT_EQ(t.header.layers, (std::vector<int>{0, 1}));
    EXPECT_EQ(t.layout.total_length(), 1u + 24 + 10 + 40);
  }
}

TEST(GenerateTraceTest, RowsSumToOneTightly) {
  SimConfig c;
  c.concentration = 5.0;
  for (std::size_t i = 0; i < 20; ++i) {
    const Trace t = GenerateTrace(c, i).trace;
    for (const auto& [key, row] : t.attention) {
      double sum = 0.0;
      for (float w : row) sum += w;
      // The float cast adds at most ~k * 2^-24 on top of the 1e-6 check.
      EXPECT_NEAR(sum, 1.0, 1e-5);
    }
  }
}

TEST(GenerateTraceTest, DiscoveredMentionsMatchGroundTruth) {
  SimConfig c;
  c.plural_rate = 0.5;
  c.subword_rate = 0.5;
  const ClassVocabulary vocab = SimVocabulary(c);
  for (std::size_t i = 0; i < 100; ++i) {
    const SimulatedTrace sim = GenerateTrace(c, i);
    const std::vector<ObjectMention> found = LabeledMentions(sim.trace, vocab);
    ASSERT_EQ(found.size(), sim.mentions.size()) << sim.trace.header.trace_id;
    for (std::size_t m = 0; m < found.size(); ++m) {
      EXPECT_EQ(found[m].position, sim.mentions[m].position);
      EXPECT_EQ(found[m].class_name, sim.mentions[m].class_name);
      EXPECT_EQ(found[m].label, sim.mentions[m].label);
    }
  }
}

TEST(GenerateTraceTest, MentionsCarryAllTensors) {
  SimConfig c;
  const SimulatedTrace sim = GenerateTrace(c, 1);
  const std::vector<std::string> classes = SimClasses(c);
  for (const SimulatedMention& m : sim.mentions) {
    ASSERT_NE(sim.trace.FindMarginal(m.position), nullptr);
    EXPECT_EQ(sim.trace.FindMarginal(m.position)->rows(), c.class_count);
    EXPECT_NE(sim.trace.FindLogits(m.position), nullptr);
    EXPECT_NE(sim.trace.FindAttention(0, m.position), nullptr);
    EXPECT_NE(sim.trace.FindAttention(1, m.position), nullptr);
    // A class's first word carries the class index as its token id.
    const auto index =
        std::find(classes.begin(), classes.end(), m.class_name) -
        classes.begin();
    EXPECT_EQ(sim.trace.TokenAt(m.position).id,
              static_cast<std::int32_t>(index));
  }
}

TEST(GenerateTraceTest, HallucinationFractionWithinThreeSigma) {
  SimConfig c;
  std::size_t total = 0;
  std::size_t halluc = 0;
  for (std::size_t i = 0; i < 400; ++i) {
    for (const SimulatedMention& m : GenerateTrace(c, i).mentions) {
      ++total;
      halluc += m.label == MentionLabel::kHallucinated;
    }
  }
  ASSERT_GE(total, 1000u);
  const double rate = c.hallucination_rate;
  const double se = std::sqrt(rate * (1 - rate) / static_cast<double>(total));
  EXPECT_NEAR(static_cast<double>(halluc) / static_cast<double>(total), rate,
              3 * se);
}

double MeanPasGap(double mode_shift) {
  SimConfig c;
  c.mode_shift = mode_shift;
  double sum[2] = {0.0, 0.0};
  double count[2] = {0.0, 0.0};
  for (std::size_t i = 0; i < 200; ++i) {
    const SimulatedTrace sim = GenerateTrace(c, i);
    for (const SimulatedMention& m : sim.mentions) {
      const int h = m.label == MentionLabel::kHallucinated;
      sum[h] += PrelimAttentionScore(sim.trace, m.position);
      count[h] += 1;
    }
  }
  return sum[1] / count[1] - sum[0] / count[0];
}

TEST(GenerateTraceTest, PasGapGrowsWithModeShift) {
  const double g0 = MeanPasGap(0.0);
  const double g1 = MeanPasGap(0.1);
  const double g3 = MeanPasGap(0.3);
  EXPECT_LT(g0, g1);
  EXPECT_LT(g1, g3);
  EXPECT_NEAR(g3 - g0, 0.3, 0.05);
}

TEST(GenerateTraceTest, SignalLayerIsConfigurable) {
  SimConfig c;
  c.layers = 3;
  c.signal_layer = 2;
  double gap[3] = {};
  for (int layer = 0; layer < 3; ++layer) {
    double sum[2] = {};
    double n[2] = {};
    for (std::size_t i = 0; i < 100; ++i) {
      const SimulatedTrace sim = GenerateTrace(c, i);
      for (const SimulatedMention& m : sim.mentions) {
        const int h = m.label == MentionLabel::kHallucinated;
        sum[h] += PrelimAttentionScore(sim.trace, m.position, layer);
        n[h] += 1;
      }
    }
    gap[layer] = sum[1] / n[1] - sum[0] / n[0];
  }
  EXPECT_GT(gap[2], 0.2);
  EXPECT_LT(std::abs(gap[0]), 0.05);
  EXPECT_LT(std::abs(gap[1]), 0.05);
}

TEST(GenerateCorpusTest, WritesValidFilesAndManifest) {
  const fs::path dir = ScratchDir("sim_corpus");
  SimConfig c;
  c.n_traces = 10;
  const CorpusSummary summary = GenerateCorpus(c, dir);
  EXPECT_EQ(summary.trace_files.size(), 10u);
  const ValidationReport report = ValidateCorpus(dir);
  EXPECT_EQ(report.files.size(), 10u);
  EXPECT_TRUE(report.ok());

  const std::string labels = internal::ReadFileText(summary.label_manifest);
  EXPECT_EQ(labels.rfind("trace_id,k,label\n", 0), 0u);
  std::size_t lines = 0;
  for (char ch : labels) lines += ch == '\n';
  EXPECT_EQ(lines, 1 + 10 * c.mentions_per_trace);
  const ClassVocabulary vocab = ClassVocabulary::Load(summary.vocabulary);
  EXPECT_EQ(vocab.classes(), SimClasses(c));
  fs::remove_all(dir);
}

TEST(GenerateCorpusTest, RegenerationIsByteIdentical) {
  const fs::path a = ScratchDir("sim_regen_a");
  const fs::path b = ScratchDir("sim_regen_b");
  SimConfig c;
  c.n_traces = 6;
  GenerateCorpus(c, a);
  GenerateCorpus(c, b);
  for (const auto& entry : fs::directory_iterator(a)) {
    const fs::path other = b / entry.path().filename();
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(internal::ReadFileBytes(entry.path()),
              internal::ReadFileBytes(other))
        << entry.path();
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

}  // namespace
}  // namespace paskit
