#ifndef PASKIT_TESTS_TEST_SUPPORT_H_
#define PASKIT_TESTS_TEST_SUPPORT_H_

// Trace builders and independent high-precision reference implementations
// shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "paskit/evaluation.h"
#include "paskit/trace.h"

namespace paskit::testing_support {

// A trace whose output tokens are `output_surfaces`; every output position
// is a candidate and carries a uniform attention row per layer and a logit
// slice. Input tokens are "<bos>", "<img>" and "ins".
inline Trace MakeTrace(const std::string& id,
                       const std::vector<std::string>& output_surfaces,
                       std::size_t image_len = 2,
                       std::size_t instruction_len = 1,
                       std::vector<int> layers = {0},
                       std::size_t vocab_size = 8) {
  Trace t;
  t.header.trace_id = id;
  t.header.model_tag = "unit";
  t.header.vocab_size = vocab_size;
  t.header.head_count = 4;
  t.header.layers = layers;
  t.layout = SpanLayout::FromLengths(1, image_len, instruction_len,
                                     output_surfaces.size());
  t.tokens.push_back({0, "<bos>"});
  for (std::size_t i = 0; i < image_len; ++i) t.tokens.push_back({1, "<img>"});
  for (std::size_t i = 0; i < instruction_len; ++i) {
    t.tokens.push_back({2, "ins"});
  }
  for (std::size_t i = 0; i < output_surfaces.size(); ++i) {
    t.tokens.push_back(
        {static_cast<std::int32_t>((3 + i) % vocab_size), output_surfaces[i]});
  }
  for (Position k = t.layout.output_start(); k <= t.layout.total_length();
       ++k) {
    t.object_candidates.push_back(k);
    for (int layer : layers) {
      t.attention[{layer, k}] =
          std::vector<float>(k - 1, 1.0f / static_cast<float>(k - 1));
    }
    std::vector<float> logits(vocab_size, 0.0f);
    logits[k % vocab_size] = 1.0f;
    t.logit_slices[k] = logits;
  }
  return t;
}

// ---------------------------------------------------------------- oracles
// Straightforward long-double evaluations of the definitions, written
// without the numerical shortcuts used in the library.

using Real = long double;

inline std::vector<Real> OracleSoftmax(const std::vector<Real>& logits) {
  std::vector<Real> e(logits.size());
  Real total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(logits[i]);
    total += e[i];
  }
  for (Real& v : e) v /= total;
  return e;
}

inline std::vector<Real> OracleMarginal(
    const std::vector<std::vector<Real>>& rows) {
  std::vector<Real> out(rows.front().size(), 0);
  for (const auto& row : rows) {
    const auto p = OracleSoftmax(row);
    for (std::size_t i = 0; i < p.size(); ++i) out[i] += p[i];
  }
  for (Real& v : out) v /= static_cast<Real>(rows.size());
  return out;
}

inline Real OracleEntropy(const std::vector<Real>& p) {
  Real h = 0;
  for (Real v : p) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

inline Real OracleKl(const std::vector<Real>& p, const std::vector<Real>& q) {
  Real kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) kl += p[i] * std::log(p[i] / std::max<Real>(q[i], 1e-12L));
  }
  return kl;
}

inline Real OracleLogitDiff(const std::vector<std::vector<Real>>& rows,
                            const std::vector<Real>& cond, std::size_t token) {
  Real sum = 0;
  for (const auto& row : rows) sum += row[token];
  return sum / static_cast<Real>(rows.size()) - cond[token];
}

// O(n^2) pairwise AUROC: P(halluc > real) + P(halluc == real) / 2.
inline double BruteForceAuroc(const std::vector<double>& scores,
                              const std::vector<MentionLabel>& labels) {
  Real wins = 0;
  Real pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != MentionLabel::kHallucinated) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != MentionLabel::kReal) continue;
      pairs += 1;
      if (scores[i] > scores[j]) {
        wins += 1;
      } else if (scores[i] == scores[j]) {
        wins += 0.5L;
      }
    }
  }
  return static_cast<double>(wins / pairs);
}

inline std::vector<Real> Widen(std::span<const float> v) {
  return std::vector<Real>(v.begin(), v.end());
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path ScratchDir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("paskit_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace paskit::testing_support

#endif  // PASKIT_TESTS_TEST_SUPPORT_H_
