#include "paskit/scoring.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

#include "parallel.h"

namespace paskit {

double RoleAttentionSums::of(TokenRole role) const {
  switch (role) {
    case TokenRole::kBos:
      return bos;
    case TokenRole::kImage:
      return image;
    case TokenRole::kInstruction:
      return instruction;
    case TokenRole::kOutput:
      return prelim;
  }
  return 0.0;
}

RoleAttentionSums ComputeRoleAttentionSums(const SpanLayout& layout,
                                           Position k,
                                           std::span<const float> row) {
  if (k <= layout.input_length() || k > layout.total_length()) {
    throw std::out_of_range("position " + std::to_string(k) +
                            " is not an output token");
  }
  if (row.size() != k - 1) {
    throw std::invalid_argument("attention row length " +
                                std::to_string(row.size()) + " != k-1");
  }
  RoleAttentionSums sums;
  sums.position = k;
  auto range_sum = [&](PositionRange r) {
    double total = 0.0;
    for (Position j = r.begin; j < r.end && j < k; ++j) total += row[j - 1];
    return total;
  };
  sums.bos = range_sum(layout.bos_span());
  sums.image = range_sum(layout.image_span());
  sums.instruction = range_sum(layout.instruction_span());
  sums.prelim = range_sum({layout.output_start(), k});
  return sums;
}

RoleAttentionSums ComputeRoleAttentionSums(const Trace& trace, Position k,
                                           int layer) {
  const std::vector<float>* row = trace.FindAttention(layer, k);
  if (row == nullptr) {
    throw MissingTensorError("trace " + trace.header.trace_id +
                             " has no attention row for layer " +
                             std::to_string(layer) + " at position " +
                             std::to_string(k));
  }
  RoleAttentionSums sums = ComputeRoleAttentionSums(trace.layout, k, *row);
  sums.layer = layer;
  return sums;
}

double PrelimAttentionScore(const Trace& trace, Position k, int layer) {
  return ComputeRoleAttentionSums(trace, k, layer).prelim;
}

std::vector<double> MarginalDistribution(const MarginalLogits& marginal) {
  if (marginal.rows() == 0) {
    throw std::invalid_argument("marginal needs at least one reference image");
  }
  std::vector<double> mean(marginal.vocab_size(), 0.0);
  for (std::size_t i = 0; i < marginal.rows(); ++i) {
    const std::vector<double> p = Softmax(marginal.row(i));
    for (std::size_t v = 0; v < p.size(); ++v) mean[v] += p[v];
  }
  const double scale = 1.0 / static_cast<double>(marginal.rows());
  for (double& p : mean) p *= scale;
  return mean;
}

double Entropy(std::span<const double> probs) {
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) {
      throw std::invalid_argument("probabilities must be non-negative");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("probabilities sum to " + std::to_string(sum));
  }
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

namespace {

void CheckSameWidth(std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument("vocabulary width mismatch: " +
                                std::to_string(a) + " vs " +
                                std::to_string(b));
  }
}

void CheckToken(std::int32_t token, std::size_t vocab_size) {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_size) {
    throw std::out_of_range("token id " + std::to_string(token) +
                            " outside vocabulary of " +
                            std::to_string(vocab_size));
  }
}

}  // namespace

double EntropyDiffScore(std::span<const double> marginal_probs,
                        std::span<const double> conditional_probs) {
  CheckSameWidth(marginal_probs.size(), conditional_probs.size());
  return Entropy(conditional_probs) - Entropy(marginal_probs);
}

double EntropyDiffScore(const MarginalLogits& marginal,
                        std::span<const float> conditional_logits) {
  CheckSameWidth(marginal.vocab_size(), conditional_logits.size());
  return EntropyDiffScore(MarginalDistribution(marginal),
                          Softmax(conditional_logits));
}

KlScore KlDivergenceScore(std::span<const double> marginal_probs,
                          std::span<const double> conditional_probs) {
  CheckSameWidth(marginal_probs.size(), conditional_probs.size());
  KlScore result;
  double kl = 0.0;
  for (std::size_t v = 0; v < marginal_probs.size(); ++v) {
    const double p = marginal_probs[v];
    if (p <= 0.0) continue;
    double q = conditional_probs[v];
    if (q < kKlProbabilityFloor) {
      q = kKlProbabilityFloor;
      ++result.floored_terms;
    }
    kl += p * (std::log(p) - std::log(q));
  }
  result.score = -kl;
  return result;
}

KlScore KlDivergenceScore(const MarginalLogits& marginal,
                          std::span<const float> conditional_logits) {
  CheckSameWidth(marginal.vocab_size(), conditional_logits.size());
  return KlDivergenceScore(MarginalDistribution(marginal),
                           Softmax(conditional_logits));
}

double LogitDiffScore(const MarginalLogits& marginal,
                      std::span<const float> conditional_logits,
                      std::int32_t token) {
  CheckSameWidth(marginal.vocab_size(), conditional_logits.size());
  CheckToken(token, conditional_logits.size());
  if (marginal.rows() == 0) {
    throw std::invalid_argument("marginal needs at least one reference image");
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < marginal.rows(); ++i) {
    mean += marginal.row(i)[static_cast<std::size_t>(token)];
  }
  mean /= static_cast<double>(marginal.rows());
  return mean - conditional_logits[static_cast<std::size_t>(token)];
}

double NllScore(std::span<const float> conditional_logits,
                std::int32_t token) {
  if (conditional_logits.empty()) {
    throw std::invalid_argument("empty logit slice");
  }
  CheckToken(token, conditional_logits.size());
  // log-sum-exp keeps the score finite where the probability underflows.
  const double max =
      *std::max_element(conditional_logits.begin(), conditional_logits.end());
  double sum = 0.0;
  for (float l : conditional_logits) sum += std::exp(l - max);
  return max + std::log(sum) -
         conditional_logits[static_cast<std::size_t>(token)];
}

double EntropyScore(std::span<const float> conditional_logits) {
  return Entropy(Softmax(conditional_logits));
}

namespace {

constexpr std::array<Detector, 6> kDetectors = {
    Detector::kPas,       Detector::kNll, Detector::kEntropy,
    Detector::kMiEntropy, Detector::kKl,  Detector::kLogitDiff,
};

}  // namespace

std::string_view DetectorName(Detector detector) {
  switch (detector) {
    case Detector::kPas:
      return "pas";
    case Detector::kNll:
      return "nll";
    case Detector::kEntropy:
      return "entropy";
    case Detector::kMiEntropy:
      return "mi_ent";
    case Detector::kKl:
      return "kl";
    case Detector::kLogitDiff:
      return "logit_diff";
  }
  return "unknown";
}

std::optional<Detector> ParseDetector(std::string_view name) {
  for (Detector d : kDetectors) {
    if (DetectorName(d) == name) return d;
  }
  return std::nullopt;
}

std::span<const Detector> AllDetectors() { return kDetectors; }

std::string DetectorRegistry() {
  std::string out;
  for (Detector d : kDetectors) {
    if (!out.empty()) out += ", ";
    out += DetectorName(d);
  }
  return out;
}

bool NeedsMarginal(Detector detector) {
  return detector == Detector::kMiEntropy || detector == Detector::kKl ||
         detector == Detector::kLogitDiff;
}

bool NeedsLogits(Detector detector) { return detector != Detector::kPas; }

bool RecordOrder(const ScoreRecord& a, const ScoreRecord& b) {
  return std::tie(a.trace_id, a.position, a.detector) <
         std::tie(b.trace_id, b.position, b.detector);
}

unsigned ThreadCount() {
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("PASKIT_THREADS")) {
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (end != env && value > 0) threads = static_cast<unsigned>(value);
  }
  return threads;
}

namespace {

struct TraceScores {
  std::vector<ScoreRecord> records;
  std::vector<std::string> warnings;
};

TraceScores ScoreTrace(const TraceMentions& item,
                       std::span<const Detector> detectors, int layer) {
  TraceScores out;
  const Trace& trace = *item.trace;
  for (const ObjectMention& mention : item.mentions) {
    const Position k = mention.position;
    const std::vector<float>* logits = trace.FindLogits(k);
    const MarginalLogits* marginal = trace.FindMarginal(k);
    const std::int32_t token = trace.TokenAt(k).id;
    for (Detector d : detectors) {
      auto skip = [&](std::string_view missing) {
        std::ostringstream msg;
        msg << "trace " << trace.header.trace_id << " k=" << k << " ("
            << mention.class_name << "): " << DetectorName(d)
            << " skipped, no " << missing;
        out.warnings.push_back(msg.str());
      };
      double score = 0.0;
      if (d == Detector::kPas) {
        if (trace.FindAttention(layer, k) == nullptr) {
          skip("attention row for layer " + std::to_string(layer));
          continue;
        }
        score = PrelimAttentionScore(trace, k, layer);
      } else if (logits == nullptr) {
        skip("logit slice");
        continue;
      } else if (NeedsMarginal(d) && marginal == nullptr) {
        skip("marginal matrix");
        continue;
      } else {
        switch (d) {
          case Detector::kNll:
            score = NllScore(*logits, token);
            break;
          case Detector::kEntropy:
            score = EntropyScore(*logits);
            break;
          case Detector::kMiEntropy:
            score = EntropyDiffScore(*marginal, *logits);
            break;
          case Detector::kKl: {
            const KlScore kl = KlDivergenceScore(*marginal, *logits);
            if (kl.floored_terms > 0) {
              std::ostringstream msg;
              msg << "trace " << trace.header.trace_id << " k=" << k
                  << ": kl floored " << kl.floored_terms
                  << " conditional probabilities at " << kKlProbabilityFloor;
              out.warnings.push_back(msg.str());
            }
            score = kl.score;
            break;
          }
          case Detector::kLogitDiff:
            score = LogitDiffScore(*marginal, *logits, token);
            break;
          case Detector::kPas:
            break;
        }
      }
      out.records.push_back({trace.header.trace_id, k, mention.class_name,
                             mention.label, std::string(DetectorName(d)),
                             score});
    }
  }
  return out;
}

}  // namespace

ScoredCorpus ScoreCorpus(std::span<const TraceMentions> corpus,
                         std::span<const Detector> detectors, int layer) {
  if (detectors.empty()) throw std::invalid_argument("no detectors");
  std::vector<TraceScores> per_trace(corpus.size());
  internal::ParallelFor(corpus.size(), ThreadCount(), [&](std::size_t i) {
    per_trace[i] = ScoreTrace(corpus[i], detectors, layer);
  });

  ScoredCorpus result;
  for (TraceScores& t : per_trace) {
    result.records.insert(result.records.end(),
                          std::make_move_iterator(t.records.begin()),
                          std::make_move_iterator(t.records.end()));
    result.warnings.insert(result.warnings.end(),
                           std::make_move_iterator(t.warnings.begin()),
                           std::make_move_iterator(t.warnings.end()));
  }
  std::stable_sort(result.records.begin(), result.records.end(), RecordOrder);

  std::map<std::string, std::size_t> scored;
  for (const ScoreRecord& r : result.records) ++scored[r.detector];
  for (Detector d : detectors) {
    if (scored[std::string(DetectorName(d))] == 0) {
      throw std::runtime_error("detector " + std::string(DetectorName(d)) +
                               " scored no mentions");
    }
  }
  return result;
}

}  // namespace paskit
