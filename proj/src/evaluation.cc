#include "paskit/evaluation.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace paskit {

namespace {

struct ClassCounts {
  std::size_t real = 0;
  std::size_t hallucinated = 0;
};

ClassCounts CheckLabels(std::span<const double> scores,
                        std::span<const MentionLabel> labels,
                        bool require_both) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("scores and labels differ in length");
  }
  ClassCounts counts;
  for (MentionLabel l : labels) {
    if (l == MentionLabel::kReal) {
      ++counts.real;
    } else if (l == MentionLabel::kHallucinated) {
      ++counts.hallucinated;
    } else {
      throw std::invalid_argument("unlabeled mention in evaluation input");
    }
  }
  if (require_both && (counts.real == 0 || counts.hallucinated == 0)) {
    throw std::invalid_argument(
        "AUROC undefined: both real and hallucinated mentions are required");
  }
  return counts;
}

// Indices sorted by descending score; ties keep input order.
std::vector<std::size_t> DescendingOrder(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a,
                                                   std::size_t b) {
    return scores[a] > scores[b];
  });
  return order;
}

}  // namespace

double Auroc(std::span<const double> scores,
             std::span<const MentionLabel> labels) {
  const ClassCounts counts = CheckLabels(scores, labels, true);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the hallucinated mentions.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == MentionLabel::kHallucinated) rank_sum += midrank;
    }
    i = j;
  }
  const double nh = static_cast<double>(counts.hallucinated);
  const double nr = static_cast<double>(counts.real);
  const double u = rank_sum - nh * (nh + 1.0) / 2.0;
  return u / (nh * nr);
}

ConfusionCounts ThresholdDetector(std::span<const double> scores,
                                  std::span<const MentionLabel> labels,
                                  double threshold) {
  CheckLabels(scores, labels, false);
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = scores[i] >= threshold;
    const bool hallucinated = labels[i] == MentionLabel::kHallucinated;
    if (flagged && hallucinated) ++c.tp;
    if (flagged && !hallucinated) ++c.fp;
    if (!flagged && hallucinated) ++c.fn;
    if (!flagged && !hallucinated) ++c.tn;
  }
  return c;
}

Curves RocPrcCurves(std::span<const double> scores,
                    std::span<const MentionLabel> labels) {
  const ClassCounts counts = CheckLabels(scores, labels, true);
  const double nh = static_cast<double>(counts.hallucinated);
  const double nr = static_cast<double>(counts.real);
  const std::vector<std::size_t> order = DescendingOrder(scores);

  Curves curves;
  curves.roc.push_back({0.0, 0.0});
  curves.prc.push_back({0.0, 1.0});
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == MentionLabel::kHallucinated) {
        ++tp;
      } else {
        ++fp;
      }
      ++j;
    }
    curves.roc.push_back({static_cast<double>(fp) / nr,
                          static_cast<double>(tp) / nh});
    curves.prc.push_back({static_cast<double>(tp) / nh,
                          static_cast<double>(tp) /
                              static_cast<double>(tp + fp)});
    i = j;
  }
  return curves;
}

double TrapezoidArea(std::span<const CurvePoint> points) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].x - points[i - 1].x) *
            (points[i].y + points[i - 1].y) / 2.0;
  }
  return area;
}

Quartiles ComputeQuartiles(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("quartiles of empty group");
  std::sort(values.begin(), values.end());
  auto quantile = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return (values[lo] + values[hi]) / 2.0;
  };
  return {quantile(0.25), quantile(0.5), quantile(0.75)};
}

DistributionSummary SummarizeDistribution(
    std::span<const double> scores, std::span<const MentionLabel> labels) {
  CheckLabels(scores, labels, false);
  std::vector<double> real;
  std::vector<double> hallucinated;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (labels[i] == MentionLabel::kReal ? real : hallucinated)
        .push_back(scores[i]);
  }
  if (real.empty()) throw std::invalid_argument("no real mentions");
  if (hallucinated.empty()) {
    throw std::invalid_argument("no hallucinated mentions");
  }
  return {ComputeQuartiles(std::move(real)),
          ComputeQuartiles(std::move(hallucinated))};
}

EvalReport Evaluate(std::string detector, std::span<const double> scores,
                    std::span<const MentionLabel> labels) {
  EvalReport report;
  report.detector = std::move(detector);
  report.auroc = Auroc(scores, labels);
  Curves curves = RocPrcCurves(scores, labels);
  report.roc = std::move(curves.roc);
  report.prc = std::move(curves.prc);
  const DistributionSummary summary = SummarizeDistribution(scores, labels);
  report.real_quartiles = summary.real;
  report.hallucinated_quartiles = summary.hallucinated;
  const ClassCounts counts = CheckLabels(scores, labels, true);
  report.n_real = counts.real;
  report.n_hallucinated = counts.hallucinated;
  return report;
}

CorrelationMatrix PearsonMatrix(std::span<const ScoreColumn> columns) {
  const std::size_t d = columns.size();
  if (d == 0) throw std::invalid_argument("no score columns");
  const std::size_t n = columns[0].values.size();
  if (n < 2) throw std::invalid_argument("correlation needs >= 2 samples");

  std::vector<std::vector<double>> centered(d);
  std::vector<double> norms(d);
  for (std::size_t c = 0; c < d; ++c) {
    const std::vector<double>& v = columns[c].values;
    if (v.size() != n) {
      throw std::invalid_argument("column " + columns[c].name +
                                  " has a different length");
    }
    const double mean =
        std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
    centered[c].resize(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      centered[c][i] = v[i] - mean;
      ss += centered[c][i] * centered[c][i];
    }
    if (ss == 0.0) {
      throw std::invalid_argument("column " + columns[c].name +
                                  " has zero variance");
    }
    norms[c] = std::sqrt(ss);
  }

  CorrelationMatrix m;
  for (const ScoreColumn& c : columns) m.names.push_back(c.name);
  m.values.assign(d * d, 0.0);
  for (std::size_t a = 0; a < d; ++a) {
    m.values[a * d + a] = 1.0;
    for (std::size_t b = a + 1; b < d; ++b) {
      double sxy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sxy += centered[a][i] * centered[b][i];
      }
      const double r = std::clamp(sxy / (norms[a] * norms[b]), -1.0, 1.0);
      m.values[a * d + b] = r;
      m.values[b * d + a] = r;
    }
  }
  return m;
}

RoleScoreTable CollectRoleScores(std::span<const TraceMentions> corpus,
                                 int layer, LayerPooling pooling) {
  RoleScoreTable table;
  for (const TraceMentions& item : corpus) {
    const Trace& trace = *item.trace;
    for (const ObjectMention& mention : item.mentions) {
      if (mention.label == MentionLabel::kUnlabeled) continue;
      RoleAttentionSums sums;
      if (pooling == LayerPooling::kSingleLayer) {
        sums = ComputeRoleAttentionSums(trace, mention.position, layer);
      } else {
        const auto& layers = trace.header.layers;
        if (layers.empty()) {
          throw MissingTensorError("trace " + trace.header.trace_id +
                                   " stores no layers");
        }
        for (int l : layers) {
          const RoleAttentionSums s =
              ComputeRoleAttentionSums(trace, mention.position, l);
          sums.bos += s.bos;
          sums.image += s.image;
          sums.instruction += s.instruction;
          sums.prelim += s.prelim;
        }
        const double scale = 1.0 / static_cast<double>(layers.size());
        sums.bos *= scale;
        sums.image *= scale;
        sums.instruction *= scale;
        sums.prelim *= scale;
      }
      table.bos.push_back(sums.bos);
      table.image.push_back(sums.image);
      table.instruction.push_back(sums.instruction);
      table.prelim.push_back(sums.prelim);
      table.labels.push_back(mention.label);
    }
  }
  return table;
}

namespace {

std::vector<double> Negated(std::vector<double> v) {
  for (double& x : v) x = -x;
  return v;
}

}  // namespace

CorrelationMatrix AttentionCorrelation(const RoleScoreTable& table) {
  const std::vector<ScoreColumn> columns = {
      {"prelim", table.prelim},
      {"instruction", Negated(table.instruction)},
      {"image", Negated(table.image)},
      {"bos", Negated(table.bos)},
  };
  return PearsonMatrix(columns);
}

std::vector<LayerAuroc> LayerAblation(std::span<const TraceMentions> corpus,
                                      std::span<const int> layers) {
  for (int layer : layers) {
    for (const TraceMentions& item : corpus) {
      if (!item.trace->HasLayer(layer)) {
        throw std::invalid_argument("layer " + std::to_string(layer) +
                                    " is not stored in trace " +
                                    item.trace->header.trace_id);
      }
    }
  }
  std::vector<LayerAuroc> table;
  for (int layer : layers) {
    const RoleScoreTable scores =
        CollectRoleScores(corpus, layer, LayerPooling::kSingleLayer);
    table.push_back({layer, Auroc(scores.prelim, scores.labels)});
  }
  return table;
}

std::vector<RoleAuroc> RoleAblation(const RoleScoreTable& table) {
  return {
      {TokenRole::kOutput, Auroc(table.prelim, table.labels)},
      {TokenRole::kInstruction,
       Auroc(Negated(table.instruction), table.labels)},
      {TokenRole::kImage, Auroc(Negated(table.image), table.labels)},
      {TokenRole::kBos, Auroc(Negated(table.bos), table.labels)},
  };
}

}  // namespace paskit
