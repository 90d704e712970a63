#ifndef PASKIT_EVALUATION_H_
#define PASKIT_EVALUATION_H_

// Threshold-free evaluation of hallucination scores. The positive class is
// kHallucinated; higher scores flag hallucination.

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "paskit/object_matching.h"
#include "paskit/scoring.h"
#include "paskit/trace.h"

namespace paskit {

// Rank-based (Mann-Whitney) AUROC with midrank ties: the probability that a
// hallucinated mention outscores a real one, ties counting one half.
// Throws std::invalid_argument on length mismatch, unlabeled entries or a
// missing class.
double Auroc(std::span<const double> scores,
             std::span<const MentionLabel> labels);

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  bool operator==(const ConfusionCounts&) const = default;
};

// Flags every mention with score >= threshold as hallucinated.
ConfusionCounts ThresholdDetector(std::span<const double> scores,
                                  std::span<const MentionLabel> labels,
                                  double threshold);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

struct Curves {
  std::vector<CurvePoint> roc;  // (FPR, TPR), from (0,0) to (1,1)
  std::vector<CurvePoint> prc;  // (recall, precision), starting at (0,1)
};

// Sweeps every distinct score as a threshold, in descending order.
Curves RocPrcCurves(std::span<const double> scores,
                    std::span<const MentionLabel> labels);

// Trapezoid area under a polyline.
double TrapezoidArea(std::span<const CurvePoint> points);

struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;

  bool operator==(const Quartiles&) const = default;
};

// Midpoint interpolation: a quantile that falls between two order statistics
// is their average. Throws on an empty input.
Quartiles ComputeQuartiles(std::vector<double> values);

struct DistributionSummary {
  Quartiles real;
  Quartiles hallucinated;
};

DistributionSummary SummarizeDistribution(std::span<const double> scores,
                                          std::span<const MentionLabel> labels);

struct EvalReport {
  std::string detector;
  double auroc = 0.0;
  std::vector<CurvePoint> roc;
  std::vector<CurvePoint> prc;
  Quartiles real_quartiles;
  Quartiles hallucinated_quartiles;
  std::size_t n_real = 0;
  std::size_t n_hallucinated = 0;
};

EvalReport Evaluate(std::string detector, std::span<const double> scores,
                    std::span<const MentionLabel> labels);

struct ScoreColumn {
  std::string name;
  std::vector<double> values;
};

struct CorrelationMatrix {
  std::vector<std::string> names;
  // Row-major names.size() x names.size() Pearson coefficients.
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const {
    return values[i * names.size() + j];
  }
};

// Pearson correlation between every pair of columns. Throws
// std::invalid_argument naming any zero-variance column.
CorrelationMatrix PearsonMatrix(std::span<const ScoreColumn> columns);

// Per-mention role sums across a corpus, for ablations.
struct RoleScoreTable {
  std::vector<double> bos;
  std::vector<double> image;
  std::vector<double> instruction;
  std::vector<double> prelim;
  std::vector<MentionLabel> labels;
};

enum class LayerPooling {
  kSingleLayer,
  // Mean over all stored layers of the per-layer role sums.
  kMeanOfLayerSums,
};

// Collects role sums for every labeled mention. With kSingleLayer, `layer`
// is used; otherwise every stored layer of each trace is averaged.
// Throws MissingTensorError when a row is absent.
RoleScoreTable CollectRoleScores(std::span<const TraceMentions> corpus,
                                 int layer, LayerPooling pooling);

// Correlation of role scores with every non-prelim role negated so that all
// columns share the "higher = hallucination" orientation.
CorrelationMatrix AttentionCorrelation(const RoleScoreTable& table);

struct LayerAuroc {
  int layer = 0;
  double auroc = 0.0;
};

// PAS AUROC per requested layer. Throws std::invalid_argument naming the
// first requested layer that some trace does not store.
std::vector<LayerAuroc> LayerAblation(std::span<const TraceMentions> corpus,
                                      std::span<const int> layers);

struct RoleAuroc {
  TokenRole role;
  double auroc = 0.0;
};

// AUROC of each role's attention sum (non-prelim roles negated), in the
// order prelim, instruction, image, BOS.
std::vector<RoleAuroc> RoleAblation(const RoleScoreTable& table);

}  // namespace paskit

#endif  // PASKIT_EVALUATION_H_
