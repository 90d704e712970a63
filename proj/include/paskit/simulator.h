#ifndef PASKIT_SIMULATOR_H_
#define PASKIT_SIMULATOR_H_

// Synthetic two-mode trace generator.
//
// Every object mention is drawn either in image-reliant mode (real) or in
// prelim-reliant mode (hallucinated). In the hallucinated mode `mode_shift`
// of the expected attention mass moves from the image span to the prelim at
// `signal_layer`; all other layers are mode-independent. Conditional logits
// are sharp around the object token when the image supports it and flat
// otherwise, and each reference-image row of the marginal matrix boosts the
// object token only when that reference image shows the object's class.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "paskit/object_matching.h"
#include "paskit/trace.h"

namespace paskit {

struct RoleMasses {
  double bos = 0.25;
  double image = 0.45;
  double instruction = 0.10;
  double prelim = 0.20;

  double total() const { return bos + image + instruction + prelim; }
};

struct SimConfig {
  std::uint64_t seed = 20240601;
  std::size_t n_traces = 100;
  std::size_t vocab_size = 128;
  // Metadata only; rows are generated head-averaged.
  std::size_t head_count = 32;
  std::size_t layers = 2;
  std::size_t bos_len = 1;
  std::size_t image_len = 24;
  std::size_t instruction_len = 10;
  std::size_t output_len = 40;
  // Classes are the first `class_count` MSCOCO classes.
  std::size_t class_count = 20;
  std::size_t mentions_per_trace = 3;
  // Expected attention mass moved from image to prelim in the hallucinated
  // mode.
  double mode_shift = 0.3;
  double hallucination_rate = 0.3;
  // Total Dirichlet concentration of an attention row; higher is sharper.
  double concentration = 100.0;
  // Number of reference images; 0 means one per class.
  std::size_t reference_count = 0;
  int signal_layer = 0;
  RoleMasses baseline;
  // When false, conditional logits ignore the mode, so the logit-based
  // detectors carry no signal.
  bool mode_dependent_logits = true;
  // Probability that a mention uses the plural surface form.
  double plural_rate = 0.25;
  // Probability that a filler word is split into two subword tokens.
  double subword_rate = 0.2;

  std::size_t references() const {
    return reference_count == 0 ? class_count : reference_count;
  }
};

// Throws std::invalid_argument describing the first invalid field.
void ValidateSimConfig(const SimConfig& config);

std::string SimConfigToJson(const SimConfig& config);
// Missing keys keep their defaults. Throws std::runtime_error.
SimConfig SimConfigFromJson(std::string_view text);

struct SimulatedMention {
  Position position = 0;
  std::string class_name;
  MentionLabel label = MentionLabel::kUnlabeled;
};

struct SimulatedTrace {
  Trace trace;
  // Ground-truth generation modes, in position order.
  std::vector<SimulatedMention> mentions;
};

std::vector<std::string> SimClasses(const SimConfig& config);
// Identity + regular plurals over the simulator's classes.
ClassVocabulary SimVocabulary(const SimConfig& config);

std::string SimTraceId(std::size_t index);

// Deterministic in (config, index); independent of other indices.
SimulatedTrace GenerateTrace(const SimConfig& config, std::size_t index);

struct CorpusSummary {
  std::vector<std::filesystem::path> trace_files;
  std::filesystem::path label_manifest;
  std::filesystem::path vocabulary;
};

// Writes n_traces "<trace_id>.past" files, "labels.csv" (trace_id,k,label)
// and "vocab.json" into `directory` (created if needed).
CorpusSummary GenerateCorpus(const SimConfig& config,
                             const std::filesystem::path& directory);

inline constexpr std::string_view kLabelManifestName = "labels.csv";
inline constexpr std::string_view kVocabularyName = "vocab.json";

}  // namespace paskit

#endif  // PASKIT_SIMULATOR_H_
