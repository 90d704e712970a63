#include "paskit/trace.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace paskit {

std::string_view RoleName(TokenRole role) {
  switch (role) {
    case TokenRole::kBos:
      return "bos";
    case TokenRole::kImage:
      return "image";
    case TokenRole::kInstruction:
      return "instruction";
    case TokenRole::kOutput:
      return "output";
  }
  return "unknown";
}

std::string_view LabelName(MentionLabel label) {
  switch (label) {
    case MentionLabel::kReal:
      return "real";
    case MentionLabel::kHallucinated:
      return "hallucinated";
    case MentionLabel::kUnlabeled:
      return "unlabeled";
  }
  return "unknown";
}

std::optional<MentionLabel> ParseLabel(std::string_view name) {
  if (name == "real") return MentionLabel::kReal;
  if (name == "hallucinated") return MentionLabel::kHallucinated;
  if (name == "unlabeled") return MentionLabel::kUnlabeled;
  return std::nullopt;
}

SpanLayout SpanLayout::Create(std::size_t bos_len, PositionRange image,
                              PositionRange instruction, std::size_t n) {
  if (image.begin != 1 + bos_len || image.end < image.begin) {
    throw std::invalid_argument("image span must start right after BOS");
  }
  if (instruction.begin != image.end || instruction.end < instruction.begin) {
    throw std::invalid_argument(
        "instruction span must start right after the image span");
  }
  if (n < instruction.end - 1) {
    throw std::invalid_argument("total length shorter than the input spans");
  }
  SpanLayout layout;
  layout.bos_len_ = bos_len;
  layout.image_ = image;
  layout.instruction_ = instruction;
  layout.n_ = n;
  return layout;
}

SpanLayout SpanLayout::FromLengths(std::size_t bos_len, std::size_t image_len,
                                   std::size_t instruction_len,
                                   std::size_t output_len) {
  const Position image_begin = 1 + bos_len;
  const Position instruction_begin = image_begin + image_len;
  const Position output_begin = instruction_begin + instruction_len;
  return Create(bos_len, {image_begin, instruction_begin},
                {instruction_begin, output_begin},
                output_begin - 1 + output_len);
}

TokenRole RoleOf(const SpanLayout& layout, Position j) {
  if (j < 1 || j > layout.total_length()) {
    std::ostringstream msg;
    msg << "position " << j << " outside [1, " << layout.total_length()
        << "]";
    throw std::out_of_range(msg.str());
  }
  if (j <= layout.bos_len()) return TokenRole::kBos;
  if (layout.image_span().contains(j)) return TokenRole::kImage;
  if (layout.instruction_span().contains(j)) return TokenRole::kInstruction;
  return TokenRole::kOutput;
}

MarginalLogits::MarginalLogits(std::size_t rows, std::size_t vocab_size,
                               std::vector<float> values)
    : rows_(rows), vocab_size_(vocab_size), values_(std::move(values)) {
  if (values_.size() != rows_ * vocab_size_) {
    throw std::invalid_argument("marginal matrix size does not match L x V");
  }
}

const std::vector<float>* Trace::FindAttention(int layer, Position k) const {
  auto it = attention.find({layer, k});
  return it == attention.end() ? nullptr : &it->second;
}

const std::vector<float>* Trace::FindLogits(Position k) const {
  auto it = logit_slices.find(k);
  return it == logit_slices.end() ? nullptr : &it->second;
}

const MarginalLogits* Trace::FindMarginal(Position k) const {
  auto it = marginals.find(k);
  return it == marginals.end() ? nullptr : &it->second;
}

bool Trace::HasLayer(int layer) const {
  return std::binary_search(header.layers.begin(), header.layers.end(), layer);
}

namespace {

bool AllFinite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(),
                     [](float v) { return std::isfinite(v); });
}

std::string At(std::string_view what, Position k) {
  std::ostringstream out;
  out << what << " at position " << k;
  return out.str();
}

}  // namespace

std::optional<std::string> FindInvariantViolation(const Trace& trace) {
  const TraceHeader& h = trace.header;
  const SpanLayout& layout = trace.layout;
  const std::size_t n = layout.total_length();
  const std::size_t m = layout.input_length();

  if (h.schema_version != kSchemaVersion) return "unsupported schema version";
  if (h.vocab_size == 0) return "vocab_size must be positive";
  if (!std::is_sorted(h.layers.begin(), h.layers.end()) ||
      std::adjacent_find(h.layers.begin(), h.layers.end()) != h.layers.end()) {
    return "stored layers must be strictly ascending";
  }
  if (trace.tokens.size() != n) {
    std::ostringstream msg;
    msg << "token count " << trace.tokens.size() << " != layout length " << n;
    return msg.str();
  }
  for (std::size_t i = 0; i < trace.tokens.size(); ++i) {
    const auto id = trace.tokens[i].id;
    if (id < 0 || static_cast<std::size_t>(id) >= h.vocab_size) {
      return At("token id out of vocabulary", i + 1);
    }
  }
  for (const auto& [key, row] : trace.attention) {
    if (key.position <= m || key.position > n) {
      return At("attention row outside the output span", key.position);
    }
    if (!trace.HasLayer(key.layer)) {
      return At("attention row for unstored layer " +
                    std::to_string(key.layer),
                key.position);
    }
    if (row.size() != key.position - 1) {
      return At("attention row length != k-1", key.position);
    }
    double sum = 0.0;
    for (float w : row) {
      if (!std::isfinite(w) || w < 0.0f) {
        return At("negative or non-finite attention weight", key.position);
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      std::ostringstream msg;
      msg << "row sum " << sum << " at position " << key.position
          << " (layer " << key.layer << ")";
      return msg.str();
    }
  }
  for (const auto& [k, logits] : trace.logit_slices) {
    if (k <= m || k > n) return At("logit slice outside the output span", k);
    if (logits.size() != h.vocab_size) return At("logit slice length != V", k);
    if (!AllFinite(logits)) return At("non-finite logit", k);
  }
  for (const auto& [k, marginal] : trace.marginals) {
    if (k <= m || k > n) return At("marginal outside the output span", k);
    if (marginal.rows() == 0) return At("marginal with zero reference rows", k);
    if (marginal.vocab_size() != h.vocab_size) {
      return At("marginal width != V", k);
    }
    if (!AllFinite(marginal.values())) return At("non-finite marginal logit", k);
  }
  for (Position k : trace.object_candidates) {
    if (k <= m || k > n) return At("object candidate outside output span", k);
  }
  if (!std::is_sorted(trace.object_candidates.begin(),
                      trace.object_candidates.end())) {
    return "object candidates must be ascending";
  }
  return std::nullopt;
}

std::vector<double> Softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of empty vector");
  const double max = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - max);
    sum += probs[i];
  }
  for (double& p : probs) p /= sum;
  return probs;
}

std::vector<double> Softmax(std::span<const float> logits) {
  std::vector<double> wide(logits.begin(), logits.end());
  return Softmax(std::span<const double>(wide));
}

}  // namespace paskit
