#ifndef PASKIT_TRACE_H_
#define PASKIT_TRACE_H_

// In-memory model of one recorded generation.
//
// Token positions are 1-based throughout: position 1 is the first token of
// the sequence (BOS), positions m+1 .. n are the generated output tokens, and
// the object token at position k is predicted from everything before it.
// The container format (trace_io.h) stores 0-based offsets and converts.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace paskit {

using Position = std::size_t;

inline constexpr std::uint32_t kSchemaVersion = 1;

// Tolerance on the sum of a head-averaged attention row.
inline constexpr double kRowSumTolerance = 1e-4;

enum class TokenRole { kBos, kImage, kInstruction, kOutput };

std::string_view RoleName(TokenRole role);

enum class MentionLabel { kReal, kHallucinated, kUnlabeled };

std::string_view LabelName(MentionLabel label);
std::optional<MentionLabel> ParseLabel(std::string_view name);

// Half-open range of 1-based positions [begin, end).
struct PositionRange {
  Position begin = 1;
  Position end = 1;

  std::size_t size() const { return end - begin; }
  bool contains(Position j) const { return j >= begin && j < end; }
  bool operator==(const PositionRange&) const = default;
};

// BOS, image, instruction and output spans tiling [1, n].
class SpanLayout {
 public:
  SpanLayout() = default;

  // Throws std::invalid_argument unless the spans are contiguous, ordered
  // BOS < image < instruction < output, and tile [1, n].
  static SpanLayout Create(std::size_t bos_len, PositionRange image,
                           PositionRange instruction, std::size_t n);
  static SpanLayout FromLengths(std::size_t bos_len, std::size_t image_len,
                                std::size_t instruction_len,
                                std::size_t output_len);

  std::size_t bos_len() const { return bos_len_; }
  PositionRange bos_span() const { return {1, 1 + bos_len_}; }
  PositionRange image_span() const { return image_; }
  PositionRange instruction_span() const { return instruction_; }
  PositionRange output_span() const { return {input_length() + 1, n_ + 1}; }

  // m: number of input tokens (BOS + image + instruction).
  std::size_t input_length() const {
    return bos_len_ + image_.size() + instruction_.size();
  }
  // First output position, m + 1.
  Position output_start() const { return input_length() + 1; }
  std::size_t output_length() const { return n_ - input_length(); }
  // n: total token count.
  std::size_t total_length() const { return n_; }

  bool operator==(const SpanLayout&) const = default;

 private:
  std::size_t bos_len_ = 0;
  PositionRange image_;
  PositionRange instruction_;
  std::size_t n_ = 0;
};

// Throws std::out_of_range unless 1 <= j <= n.
TokenRole RoleOf(const SpanLayout& layout, Position j);

struct Token {
  std::int32_t id = 0;
  std::string surface;

  bool operator==(const Token&) const = default;
};

struct AttentionKey {
  int layer = 0;
  Position position = 0;

  auto operator<=>(const AttentionKey&) const = default;
};

// Logits of the same step under each of L reference images; row-major L x V.
class MarginalLogits {
 public:
  MarginalLogits() = default;
  MarginalLogits(std::size_t rows, std::size_t vocab_size,
                 std::vector<float> values);

  std::size_t rows() const { return rows_; }
  std::size_t vocab_size() const { return vocab_size_; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values_).subspan(i * vocab_size_,
                                                   vocab_size_);
  }
  const std::vector<float>& values() const { return values_; }

  bool operator==(const MarginalLogits&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t vocab_size_ = 0;
  std::vector<float> values_;
};

struct TraceHeader {
  std::string trace_id;
  std::string model_tag;
  std::size_t vocab_size = 0;
  std::size_t head_count = 0;
  // Stored layer indices, strictly ascending.
  std::vector<int> layers;
  std::uint32_t schema_version = kSchemaVersion;
  // Set by the producer when every marginal pass reused the exact prelim
  // token ids of the original generation.
  bool marginal_prelim_identical = true;

  bool operator==(const TraceHeader&) const = default;
};

struct Trace {
  TraceHeader header;
  SpanLayout layout;
  std::vector<Token> tokens;
  // Head-averaged attention onto the token at `position`: k-1 weights for
  // prior positions 1 .. k-1.
  std::map<AttentionKey, std::vector<float>> attention;
  // Pre-softmax logits (length V) of the step that produced `position`.
  std::map<Position, std::vector<float>> logit_slices;
  std::map<Position, MarginalLogits> marginals;
  // Output positions at which a word begins; tensors are recorded there.
  std::vector<Position> object_candidates;
  std::vector<std::string> ground_truth_objects;

  const std::vector<float>* FindAttention(int layer, Position k) const;
  const std::vector<float>* FindLogits(Position k) const;
  const MarginalLogits* FindMarginal(Position k) const;
  bool HasLayer(int layer) const;
  const Token& TokenAt(Position k) const { return tokens.at(k - 1); }

  bool operator==(const Trace&) const = default;
};

// Returns a description of the first violated model invariant, or nullopt.
std::optional<std::string> FindInvariantViolation(const Trace& trace);

// Numerically stable softmax in double precision. Throws on empty input.
std::vector<double> Softmax(std::span<const double> logits);
std::vector<double> Softmax(std::span<const float> logits);

}  // namespace paskit

#endif  // PASKIT_TRACE_H_
