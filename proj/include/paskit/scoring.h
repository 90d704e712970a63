#ifndef PASKIT_SCORING_H_
#define PASKIT_SCORING_H_

// Hallucination detectors. Every score is oriented so that a higher value
// means the mention is more likely hallucinated. Logarithms are natural.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "paskit/object_matching.h"
#include "paskit/trace.h"

namespace paskit {

class MissingTensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Attention mass an object token receives from each token role at one layer.
struct RoleAttentionSums {
  double bos = 0.0;
  double image = 0.0;
  double instruction = 0.0;
  double prelim = 0.0;
  int layer = 0;
  Position position = 0;

  double total() const { return bos + image + instruction + prelim; }
  double of(TokenRole role) const;
};

// Sums the head-averaged row for (layer, k) per role; the prelim is
// positions m+1 .. k-1. Throws MissingTensorError when the row is absent.
RoleAttentionSums ComputeRoleAttentionSums(const Trace& trace, Position k,
                                           int layer);
RoleAttentionSums ComputeRoleAttentionSums(const SpanLayout& layout,
                                           Position k,
                                           std::span<const float> row);

// Prelim attention score: the prelim component of the role sums.
double PrelimAttentionScore(const Trace& trace, Position k, int layer = 0);

// Mean of the per-image softmax distributions. Throws on L = 0.
std::vector<double> MarginalDistribution(const MarginalLogits& marginal);

// Shannon entropy in nats; 0 ln 0 = 0. Throws std::invalid_argument unless
// entries are >= 0 and sum to 1 within 1e-6.
double Entropy(std::span<const double> probs);

// H(conditional) - H(marginal), i.e. the negated entropy-difference mutual
// information.
double EntropyDiffScore(std::span<const double> marginal_probs,
                        std::span<const double> conditional_probs);
double EntropyDiffScore(const MarginalLogits& marginal,
                        std::span<const float> conditional_logits);

inline constexpr double kKlProbabilityFloor = 1e-12;

struct KlScore {
  // -KL(marginal || conditional).
  double score = 0.0;
  // Number of terms where the conditional probability was floored.
  std::size_t floored_terms = 0;
};

KlScore KlDivergenceScore(std::span<const double> marginal_probs,
                          std::span<const double> conditional_probs);
KlScore KlDivergenceScore(const MarginalLogits& marginal,
                          std::span<const float> conditional_logits);

// Mean raw reference-image logit of `token` minus its conditional logit.
double LogitDiffScore(const MarginalLogits& marginal,
                      std::span<const float> conditional_logits,
                      std::int32_t token);

// -ln softmax(conditional)[token].
double NllScore(std::span<const float> conditional_logits, std::int32_t token);

// Entropy of softmax(conditional).
double EntropyScore(std::span<const float> conditional_logits);

enum class Detector { kPas, kNll, kEntropy, kMiEntropy, kKl, kLogitDiff };

std::string_view DetectorName(Detector detector);
std::optional<Detector> ParseDetector(std::string_view name);
std::span<const Detector> AllDetectors();
// Comma-joined registry, for error messages.
std::string DetectorRegistry();
bool NeedsMarginal(Detector detector);
bool NeedsLogits(Detector detector);

struct ScoreRecord {
  std::string trace_id;
  Position position = 0;
  std::string class_name;
  MentionLabel label = MentionLabel::kUnlabeled;
  std::string detector;
  double score = 0.0;

  bool operator==(const ScoreRecord&) const = default;
};

// Deterministic record order: (trace id, k, detector).
bool RecordOrder(const ScoreRecord& a, const ScoreRecord& b);

struct ScoredCorpus {
  std::vector<ScoreRecord> records;
  std::vector<std::string> warnings;
};

// One trace with its (labeled) mentions.
struct TraceMentions {
  const Trace* trace = nullptr;
  std::vector<ObjectMention> mentions;
};

// Scores every mention with every detector at `layer`. Mentions missing a
// required tensor are skipped with a warning. Throws std::invalid_argument on
// an empty detector set and std::runtime_error when a detector ends up with
// no scored mention. Work fans out per trace (see ThreadCount()).
ScoredCorpus ScoreCorpus(std::span<const TraceMentions> corpus,
                         std::span<const Detector> detectors, int layer = 0);

// Worker count from PASKIT_THREADS (default: hardware concurrency).
unsigned ThreadCount();

}  // namespace paskit

#endif  // PASKIT_SCORING_H_
