#include "paskit/trace_io.h"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "json.hpp"
#include "paskit/simulator.h"
#include "test_support.h"

namespace paskit {
namespace {

namespace fs = std::filesystem;
using testing_support::MakeTrace;
using testing_support::ScratchDir;

std::uint32_t ReadU32(const std::vector<std::byte>& bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= std::to_integer<std::uint32_t>(bytes[at + i]) << (8 * i);
  }
  return v;
}

nlohmann::json ManifestOf(const std::vector<std::byte>& bytes) {
  const std::uint32_t len = ReadU32(bytes, 8);
  return nlohmann::json::parse(
      std::string(reinterpret_cast<const char*>(bytes.data() + 12), len));
}

std::size_t BlobStart(const std::vector<std::byte>& bytes) {
  const std::size_t end = 12 + ReadU32(bytes, 8);
  return (end + kBlobAlignment - 1) / kBlobAlignment * kBlobAlignment;
}

FormatErrorCode DecodeError(const std::vector<std::byte>& bytes,
                            std::size_t* offset = nullptr,
                            std::string* detail = nullptr) {
  try {
    DecodeTrace(bytes);
  } catch (const TraceFormatError& e) {
    if (offset) *offset = e.offset();
    if (detail) *detail = e.detail();
    return e.code();
  }
  ADD_FAILURE() << "decode unexpectedly succeeded";
  return FormatErrorCode::kIo;
}

// Smallest useful trace: BOS, one image token, one output token (n = 3).
Trace MinimalTrace() {
  Trace t;
  t.header.trace_id = "minimal";
  t.header.model_tag = "unit";
  t.header.vocab_size = 4;
  t.header.head_count = 1;
  t.header.layers = {0};
  t.layout = SpanLayout::FromLengths(1, 1, 0, 1);
  t.tokens = {{0, "<s>"}, {1, "<img>"}, {2, "dog"}};
  t.attention[{0, 3}] = {0.25f, 0.75f};
  return t;
}

TEST(TraceIoTest, MinimalRoundTrip) {
  const Trace t = MinimalTrace();
  ASSERT_EQ(FindInvariantViolation(t), std::nullopt);
  const std::vector<std::byte> bytes = EncodeTrace(t);
  EXPECT_EQ(DecodeTrace(bytes), t);
}

TEST(TraceIoTest, MarginalRoundTripPreservesShape) {
  Trace t = MinimalTrace();
  t.logit_slices[3] = {0.5f, -1.0f, 2.0f, 0.0f};
  t.marginals[3] = MarginalLogits(2, 4, {1, 2, 3, 4, -1, -2, -3, -4});
  const Trace back = DecodeTrace(EncodeTrace(t));
  EXPECT_EQ(back, t);
  ASSERT_NE(back.FindMarginal(3), nullptr);
  EXPECT_EQ(back.FindMarginal(3)->rows(), 2u);
  EXPECT_EQ(back.FindMarginal(3)->vocab_size(), 4u);
}

TEST(TraceIoTest, HeaderLayout) {
  const std::vector<std::byte> bytes = EncodeTrace(MinimalTrace());
  EXPECT_EQ(std::memcmp(bytes.data(), "PAST", 4), 0);
  EXPECT_EQ(ReadU32(bytes, 4), kContainerVersion);
  EXPECT_EQ(BlobStart(bytes) % kBlobAlignment, 0u);
  for (std::size_t i = 12 + ReadU32(bytes, 8); i < BlobStart(bytes); ++i) {
    EXPECT_EQ(bytes[i], std::byte{0});
  }
  const nlohmann::json m = ManifestOf(bytes);
  EXPECT_EQ(m["blob_length"].get<std::size_t>(),
            bytes.size() - BlobStart(bytes));
  EXPECT_EQ(m["trace_id"], "minimal");
  EXPECT_EQ(m["spans"]["bos"], nlohmann::json::array({0, 1}));
  EXPECT_EQ(m["spans"]["output"], nlohmann::json::array({2, 3}));
  ASSERT_EQ(m["tensors"].size(), 1u);
  const auto& entry = m["tensors"][0];
  EXPECT_EQ(entry["dtype"], "f32");
  EXPECT_EQ(entry["shape"], nlohmann::json::array({2}));
  EXPECT_EQ(entry["length"], 8);
}

TEST(TraceIoTest, BlobIsLittleEndianF32) {
  const std::vector<std::byte> bytes = EncodeTrace(MinimalTrace());
  const std::size_t at = BlobStart(bytes);
  const float second = std::bit_cast<float>(ReadU32(bytes, at + 4));
  EXPECT_EQ(second, 0.75f);
}

TEST(TraceIoTest, WriteRefusesNaNLogit) {
  Trace t = MinimalTrace();
  t.logit_slices[3] = {0.0f, std::numeric_limits<float>::quiet_NaN(), 0.0f,
                       0.0f};
  std::ostringstream sink;
  try {
    WriteTrace(t, sink);
    FAIL() << "write accepted a NaN logit";
  } catch (const TraceFormatError& e) {
    EXPECT_EQ(e.code(), FormatErrorCode::kInvariant);
  }
  EXPECT_TRUE(sink.str().empty());
}

TEST(TraceIoTest, WriteReturnsByteCount) {
  std::ostringstream sink;
  const std::size_t n = WriteTrace(MinimalTrace(), sink);
  EXPECT_EQ(n, sink.str().size());
  EXPECT_EQ(n, EncodeTrace(MinimalTrace()).size());
}

TEST(TraceIoTest, CorruptedMagicAtOffsetZero) {
  std::vector<std::byte> bytes = EncodeTrace(MinimalTrace());
  bytes[1] = std::byte{'X'};
  std::size_t offset = 99;
  std::string detail;
  EXPECT_EQ(DecodeError(bytes, &offset), FormatErrorCode::kBadMagic);
  EXPECT_EQ(offset, 0u);
  try {
    DecodeTrace(bytes);
  } catch (const TraceFormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos)
        << e.what();
  }
}

TEST(TraceIoTest, VersionMismatch) {
  std::vector<std::byte> bytes = EncodeTrace(MinimalTrace());
  bytes[4] = std::byte{2};
  EXPECT_EQ(DecodeError(bytes), FormatErrorCode::kVersionMismatch);
}

TEST(TraceIoTest, TruncationAtEveryLength) {
  const std::vector<std::byte> bytes = EncodeTrace(MinimalTrace());
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    const std::vector<std::byte> cut(bytes.begin(), bytes.begin() + len);
    EXPECT_THROW(DecodeTrace(cut), TraceFormatError) << "length " << len;
  }
}

TEST(TraceIoTest, TruncatedBlob) {
  std::vector<std::byte> bytes = EncodeTrace(MinimalTrace());
  bytes.pop_back();
  EXPECT_EQ(DecodeError(bytes), FormatErrorCode::kTruncated);
}

TEST(TraceIoTest, DoubledRowReportsRowSum) {
  Trace t = MakeTrace("t", {"a", "dog"});
  std::vector<std::byte> bytes = EncodeTrace(t);
  const nlohmann::json m = ManifestOf(bytes);
  const std::size_t blob = BlobStart(bytes);
  std::size_t target = 0;
  std::size_t length = 0;
  for (const auto& e : m["tensors"]) {
    if (e["name"] == "attention.l0.t5") {
      target = blob + e["offset"].get<std::size_t>();
      length = e["length"].get<std::size_t>();
    }
  }
  ASSERT_GT(length, 0u);
  for (std::size_t at = target; at < target + length; at += 4) {
    const float doubled = 2.0f * std::bit_cast<float>(ReadU32(bytes, at));
    const auto raw = std::bit_cast<std::uint32_t>(doubled);
    for (int i = 0; i < 4; ++i) {
      bytes[at + i] = static_cast<std::byte>((raw >> (8 * i)) & 0xffu);
    }
  }
  std::size_t offset = 0;
  std::string detail;
  EXPECT_EQ(DecodeError(bytes, &offset, &detail),
            FormatErrorCode::kNotNormalized);
  // Offset 5 in the file is position 6 in the model.
  EXPECT_NE(detail.find("row sum 2.0"), std::string::npos) << detail;
  EXPECT_NE(detail.find("at position 6"), std::string::npos) << detail;
  EXPECT_EQ(offset, target);
}

TEST(TraceIoTest, TensorOutsideBlobIsShapeError) {
  Trace t = MinimalTrace();
  std::vector<std::byte> bytes = EncodeTrace(t);
  nlohmann::json m = ManifestOf(bytes);
  m["tensors"][0]["offset"] = 4096;
  const std::string text = m.dump();
  std::vector<std::byte> rebuilt(bytes.begin(), bytes.begin() + 8);
  const auto len = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) {
    rebuilt.push_back(static_cast<std::byte>((len >> (8 * i)) & 0xffu));
  }
  for (char c : text) rebuilt.push_back(static_cast<std::byte>(c));
  while (rebuilt.size() % kBlobAlignment != 0) rebuilt.push_back(std::byte{0});
  rebuilt.insert(rebuilt.end(), bytes.begin() + BlobStart(bytes), bytes.end());
  const FormatErrorCode code = DecodeError(rebuilt);
  EXPECT_TRUE(code == FormatErrorCode::kShapeMismatch ||
              code == FormatErrorCode::kTruncated)
      << FormatErrorName(code);
}

TEST(TraceIoTest, GarbageManifest) {
  std::vector<std::byte> bytes = EncodeTrace(MinimalTrace());
  bytes[12] = std::byte{'#'};
  EXPECT_EQ(DecodeError(bytes), FormatErrorCode::kBadManifest);
}

TEST(TraceIoTest, SimulatorTracesRoundTrip) {
  SimConfig config;
  config.n_traces = 20;
  for (std::size_t i = 0; i < config.n_traces; ++i) {
    const Trace t = GenerateTrace(config, i).trace;
    EXPECT_EQ(DecodeTrace(EncodeTrace(t)), t) << i;
  }
}

TEST(TraceIoTest, EncodingIsDeterministic) {
  SimConfig config;
  const Trace t = GenerateTrace(config, 7).trace;
  EXPECT_EQ(EncodeTrace(t), EncodeTrace(DecodeTrace(EncodeTrace(t))));
}

TEST(TraceIoTest, RandomBytesNeverCrash) {
  std::mt19937_64 rng(11);
  const std::vector<std::byte> valid = EncodeTrace(MakeTrace("t", {"a"}));
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<std::byte> bytes = valid;
    const int flips = 1 + static_cast<int>(rng() % 8);
    for (int f = 0; f < flips; ++f) {
      bytes[rng() % bytes.size()] = static_cast<std::byte>(rng() & 0xff);
    }
    try {
      DecodeTrace(bytes);
    } catch (const TraceFormatError&) {
    }
  }
}

TEST(TraceIoTest, FileRoundTrip) {
  const fs::path dir = ScratchDir("io_file");
  const Trace t = MakeTrace("t", {"a", "dog"});
  const std::size_t n = WriteTraceFile(t, dir / "t.past");
  EXPECT_EQ(fs::file_size(dir / "t.past"), n);
  EXPECT_EQ(ReadTraceFile(dir / "t.past"), t);
  EXPECT_THROW(ReadTraceFile(dir / "missing.past"), TraceFormatError);
  fs::remove_all(dir);
}

TEST(ValidateCorpusTest, ThreeValidTraces) {
  const fs::path dir = ScratchDir("corpus_valid");
  SimConfig config;
  for (std::size_t i = 0; i < 3; ++i) {
    WriteTraceFile(GenerateTrace(config, i).trace,
                   dir / (SimTraceId(i) + ".past"));
  }
  const ValidationReport report = ValidateCorpus(dir);
  EXPECT_EQ(report.files.size(), 3u);
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(report.failures(), 0u);
  fs::remove_all(dir);
}

TEST(ValidateCorpusTest, TruncatedFileIsListed) {
  const fs::path dir = ScratchDir("corpus_trunc");
  const Trace t = MakeTrace("t", {"a", "dog"});
  WriteTraceFile(t, dir / "a.past");
  std::vector<std::byte> bytes = EncodeTrace(t);
  bytes.resize(bytes.size() - 10);
  std::ofstream(dir / "b.past", std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  const ValidationReport report = ValidateCorpus(dir);
  ASSERT_EQ(report.files.size(), 2u);
  EXPECT_FALSE(report.ok());
  EXPECT_EQ(report.failures(), 1u);
  EXPECT_TRUE(report.files[0].ok);
  EXPECT_FALSE(report.files[1].ok);
  EXPECT_EQ(report.files[1].path.filename(), "b.past");
  ASSERT_FALSE(report.files[1].violations.empty());
  EXPECT_NE(report.files[1].violations[0].find("truncated"),
            std::string::npos)
      << report.files[1].violations[0];
  fs::remove_all(dir);
}

TEST(ValidateCorpusTest, EmptyDirectory) {
  const fs::path dir = ScratchDir("corpus_empty");
  const ValidationReport report = ValidateCorpus(dir);
  EXPECT_TRUE(report.files.empty());
  EXPECT_TRUE(report.ok());
  fs::remove_all(dir);
}

TEST(ValidateCorpusTest, MissingDirectoryThrows) {
  EXPECT_THROW(ValidateCorpus("/nonexistent/paskit/corpus"),
               std::runtime_error);
}

}  // namespace
}  // namespace paskit
