#include "paskit/simulator.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "file_util.h"
#include "json.hpp"
#include "paskit/scoring.h"
#include "paskit/trace_io.h"
#include "parallel.h"

namespace paskit {

namespace {

constexpr std::size_t kMinPrelim = 3;
constexpr std::size_t kMaxMentionTokens = 3;

// Mean logit boosts. The prior boost comes from the prelim alone, the image
// boost only from an image that shows the object.
constexpr double kPriorBoost = 2.0;
constexpr double kImageBoost = 4.0;
constexpr double kFillerBoost = 3.0;
constexpr double kBaseLogitSd = 1.0;
constexpr double kImageNoiseSd = 0.3;

constexpr std::array<std::string_view, 24> kFillerWords = {
    "the",   "with",  "and",    "there",   "near",   "shows",
    "scene", "left",  "right",  "next",    "some",   "large",
    "small", "front", "behind", "standing", "sitting", "white",
    "green", "wooden", "several", "visible", "picture", "around",
};

constexpr std::string_view kPrompt =
    "Please help me describe the image in detail.";

std::uint64_t Fnv1a(std::string_view text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<std::string> SplitWords(std::string_view phrase) {
  std::vector<std::string> words;
  std::istringstream in{std::string(phrase)};
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

class TraceBuilder {
 public:
  TraceBuilder(const SimConfig& config, std::size_t index)
      : config_(config), classes_(SimClasses(config)) {
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                      static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    rng_.seed(seq);
    result_.trace.header.trace_id = SimTraceId(index);
  }

  SimulatedTrace Build() {
    Trace& trace = result_.trace;
    trace.header.model_tag = "simulator";
    trace.header.vocab_size = config_.vocab_size;
    trace.header.head_count = config_.head_count;
    trace.header.layers.resize(config_.layers);
    std::iota(trace.header.layers.begin(), trace.header.layers.end(), 0);
    trace.layout =
        SpanLayout::FromLengths(config_.bos_len, config_.image_len,
                                config_.instruction_len, config_.output_len);

    BuildInputTokens();
    ChooseGroundTruth();
    BuildOutputTokens();
    for (Position k : trace.object_candidates) EmitTensors(k);
    return std::move(result_);
  }

 private:
  std::int32_t TokenId(std::string_view surface) const {
    const std::size_t c = classes_.size();
    return static_cast<std::int32_t>(c + Fnv1a(surface) %
                                             (config_.vocab_size - c));
  }

  void Push(std::string surface, std::int32_t id) {
    result_.trace.tokens.push_back({id, std::move(surface)});
  }

  void BuildInputTokens() {
    for (std::size_t i = 0; i < config_.bos_len; ++i) Push("<s>", TokenId("<s>"));
    for (std::size_t i = 0; i < config_.image_len; ++i) {
      Push("<image>", TokenId("<image>"));
    }
    const std::vector<std::string> prompt = SplitWords(kPrompt);
    for (std::size_t i = 0; i < config_.instruction_len; ++i) {
      const std::string surface = " " + prompt[i % prompt.size()];
      Push(surface, TokenId(surface));
    }
  }

  void ChooseGroundTruth() {
    std::vector<std::size_t> order(classes_.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::uniform_int_distribution<std::size_t> size_dist(
        1, classes_.size() - 1);
    const std::size_t present = size_dist(rng_);
    present_.assign(order.begin(), order.begin() + present);
    absent_.assign(order.begin() + present, order.end());
    std::sort(present_.begin(), present_.end());
    std::sort(absent_.begin(), absent_.end());
    for (std::size_t c : present_) {
      result_.trace.ground_truth_objects.push_back(classes_[c]);
    }
  }

  struct Placed {
    std::size_t offset = 0;  // 0-based offset into the output span
    std::size_t class_index = 0;
    MentionLabel label = MentionLabel::kUnlabeled;
    std::vector<std::string> pieces;
  };

  std::vector<std::string> MentionPieces(std::size_t class_index) {
    std::vector<std::string> words = SplitWords(classes_[class_index]);
    std::vector<std::string> pieces;
    std::bernoulli_distribution plural(config_.plural_rate);
    const bool use_plural = plural(rng_);
    for (std::size_t w = 0; w < words.size(); ++w) {
      const bool last = w + 1 == words.size();
      if (!last || !use_plural) {
        pieces.push_back(" " + words[w]);
        continue;
      }
      const std::string p = RegularPlural(words[w]);
      if (p.compare(0, words[w].size(), words[w]) == 0) {
        pieces.push_back(" " + words[w]);
        pieces.push_back(p.substr(words[w].size()));
      } else {
        pieces.push_back(" " + p);
      }
    }
    return pieces;
  }

  void BuildOutputTokens() {
    const std::size_t mentions = config_.mentions_per_trace;
    const std::size_t segment = (config_.output_len - kMinPrelim) / mentions;
    std::bernoulli_distribution hallucinate(config_.hallucination_rate);

    std::vector<Placed> placed;
    for (std::size_t s = 0; s < mentions; ++s) {
      Placed p;
      p.label = hallucinate(rng_) ? MentionLabel::kHallucinated
                                  : MentionLabel::kReal;
      const std::vector<std::size_t>& pool =
          p.label == MentionLabel::kReal ? present_ : absent_;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      p.class_index = pool[pick(rng_)];
      p.pieces = MentionPieces(p.class_index);
      // At least one filler token follows every mention inside its segment.
      std::uniform_int_distribution<std::size_t> start(
          0, segment - p.pieces.size() - 1);
      p.offset = kMinPrelim + s * segment + start(rng_);
      placed.push_back(std::move(p));
    }

    const Position first = result_.trace.layout.output_start();
    std::uniform_int_distribution<std::size_t> filler(0,
                                                      kFillerWords.size() - 1);
    std::bernoulli_distribution split(config_.subword_rate);
    std::size_t next = 0;
    auto fill_until = [&](std::size_t end) {
      while (next < end) {
        const std::string word(kFillerWords[filler(rng_)]);
        result_.trace.object_candidates.push_back(first + next);
        if (next + 1 < end && word.size() >= 4 && split(rng_)) {
          const std::size_t half = word.size() / 2;
          const std::string head = " " + word.substr(0, half);
          const std::string tail = word.substr(half);
          Push(head, TokenId(head));
          Push(tail, TokenId(tail));
          next += 2;
        } else {
          Push(" " + word, TokenId(" " + word));
          next += 1;
        }
      }
    };
    for (const Placed& p : placed) {
      fill_until(p.offset);
      const Position k = first + next;
      result_.trace.object_candidates.push_back(k);
      for (std::size_t i = 0; i < p.pieces.size(); ++i) {
        // The first word of a class always gets the class's own token id.
        const auto id = i == 0 ? static_cast<std::int32_t>(p.class_index)
                               : TokenId(p.pieces[i]);
        Push(p.pieces[i], id);
        if (i > 0 && p.pieces[i][0] == ' ') {
          result_.trace.object_candidates.push_back(first + next + i);
        }
      }
      next += p.pieces.size();
      result_.mentions.push_back({k, classes_[p.class_index], p.label});
      mention_at_[k] = &result_.mentions.back() - result_.mentions.data();
      mention_class_[k] = p.class_index;
    }
    fill_until(config_.output_len);
  }

  std::vector<float> DrawAttentionRow(Position k, RoleMasses masses) {
    const SpanLayout& layout = result_.trace.layout;
    const std::size_t prelim = k - layout.output_start();
    if (prelim == 0) {
      // No prelim yet: its mass is spread over the input roles.
      const double rest = masses.bos + masses.image + masses.instruction;
      masses.bos += masses.prelim * masses.bos / rest;
      masses.image += masses.prelim * masses.image / rest;
      masses.instruction += masses.prelim * masses.instruction / rest;
      masses.prelim = 0.0;
    }
    std::vector<double> w(k - 1, 0.0);
    auto fill = [&](PositionRange r, double mass) {
      if (r.size() == 0 || mass <= 0.0) return;
      const double shape =
          config_.concentration * mass / static_cast<double>(r.size());
      std::gamma_distribution<double> gamma(shape, 1.0);
      for (Position j = r.begin; j < r.end; ++j) w[j - 1] = gamma(rng_);
    };
    fill(layout.bos_span(), masses.bos);
    fill(layout.image_span(), masses.image);
    fill(layout.instruction_span(), masses.instruction);
    fill({layout.output_start(), k}, masses.prelim);
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (!(total > 0.0)) {
      std::fill(w.begin(), w.end(), 1.0);
      total = static_cast<double>(w.size());
    }
    std::vector<float> row(w.size());
    double check = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double v = w[j] / total;
      check += v;
      row[j] = static_cast<float>(v);
    }
    if (std::abs(check - 1.0) > 1e-6) {
      throw std::logic_error("simulated attention row not normalized");
    }
    return row;
  }

  void EmitTensors(Position k) {
    Trace& trace = result_.trace;
    const auto mention_it = mention_at_.find(k);
    const SimulatedMention* mention =
        mention_it == mention_at_.end()
            ? nullptr
            : &result_.mentions[mention_it->second];
    const bool hallucinated =
        mention != nullptr && mention->label == MentionLabel::kHallucinated;

    for (int layer : trace.header.layers) {
      RoleMasses masses = config_.baseline;
      if (hallucinated && layer == config_.signal_layer) {
        masses.image -= config_.mode_shift;
        masses.prelim += config_.mode_shift;
      }
      trace.attention.emplace(AttentionKey{layer, k},
                              DrawAttentionRow(k, masses));
    }

    const std::size_t v = config_.vocab_size;
    const auto token = static_cast<std::size_t>(trace.TokenAt(k).id);
    std::normal_distribution<double> base_noise(0.0, kBaseLogitSd);
    std::vector<double> base(v);
    for (double& b : base) b = base_noise(rng_);

    std::normal_distribution<double> image_noise(0.0, kImageNoiseSd);
    std::vector<float> conditional(v);
    if (mention == nullptr) {
      for (std::size_t i = 0; i < v; ++i) {
        conditional[i] = static_cast<float>(base[i] + image_noise(rng_));
      }
      conditional[token] += static_cast<float>(kFillerBoost);
      trace.logit_slices.emplace(k, std::move(conditional));
      return;
    }

    std::normal_distribution<double> prior_dist(kPriorBoost, 0.5);
    std::normal_distribution<double> image_dist(kImageBoost, 1.0);
    const double prior = prior_dist(rng_);
    const double image_boost = std::max(0.0, image_dist(rng_));
    const bool image_supported =
        !config_.mode_dependent_logits || !hallucinated;
    for (std::size_t i = 0; i < v; ++i) {
      conditional[i] = static_cast<float>(base[i] + image_noise(rng_));
    }
    conditional[token] +=
        static_cast<float>(prior + (image_supported ? image_boost : 0.0));

    // Reference image i shows class i mod C.
    const std::size_t refs = config_.references();
    const std::size_t class_index = mention_class_.at(k);
    std::vector<float> matrix(refs * v);
    for (std::size_t r = 0; r < refs; ++r) {
      for (std::size_t i = 0; i < v; ++i) {
        matrix[r * v + i] = static_cast<float>(base[i] + image_noise(rng_));
      }
      const bool shows = r % classes_.size() == class_index;
      matrix[r * v + token] +=
          static_cast<float>(prior + (shows ? image_boost : 0.0));
    }
    trace.logit_slices.emplace(k, std::move(conditional));
    trace.marginals.emplace(k, MarginalLogits(refs, v, std::move(matrix)));
  }

  const SimConfig& config_;
  std::vector<std::string> classes_;
  std::mt19937_64 rng_;
  SimulatedTrace result_;
  std::vector<std::size_t> present_;
  std::vector<std::size_t> absent_;
  std::map<Position, std::size_t> mention_at_;
  std::map<Position, std::size_t> mention_class_;
};

}  // namespace

void ValidateSimConfig(const SimConfig& c) {
  auto fail = [](const std::string& what) {
    throw std::invalid_argument("invalid simulator config: " + what);
  };
  if (c.bos_len < 1 || c.image_len < 1 || c.instruction_len < 1) {
    fail("span lengths must be >= 1");
  }
  if (c.layers < 1) fail("layers must be >= 1");
  if (c.signal_layer < 0 || static_cast<std::size_t>(c.signal_layer) >= c.layers) {
    fail("signal_layer outside [0, layers)");
  }
  if (c.class_count < 2 || c.class_count > CocoClasses().size()) {
    fail("class_count must be in [2, 80]");
  }
  if (c.vocab_size < c.class_count + 16) {
    fail("vocab_size must exceed class_count by at least 16");
  }
  if (c.mentions_per_trace < 1) fail("mentions_per_trace must be >= 1");
  if (c.output_len < kMinPrelim ||
      (c.output_len - kMinPrelim) / c.mentions_per_trace <
          kMaxMentionTokens + 2) {
    fail("output_len too short for mentions_per_trace");
  }
  const RoleMasses& b = c.baseline;
  if (b.bos < 0 || b.image < 0 || b.instruction < 0 || b.prelim < 0 ||
      std::abs(b.total() - 1.0) > 1e-9) {
    fail("baseline role masses must be >= 0 and sum to 1");
  }
  if (b.bos + b.image + b.instruction <= 0.0) {
    fail("baseline input-role mass must be positive");
  }
  if (!(c.mode_shift >= 0.0 && c.mode_shift <= 1.0)) {
    fail("mode_shift must be in [0, 1]");
  }
  if (c.mode_shift > b.image) fail("mode_shift exceeds baseline image mass");
  if (c.mode_shift + b.prelim > 1.0) fail("mode_shift + prelim mass > 1");
  if (!(c.hallucination_rate > 0.0 && c.hallucination_rate < 1.0)) {
    fail("hallucination_rate must be in (0, 1)");
  }
  if (!(c.concentration > 0.0)) fail("concentration must be positive");
  if (!(c.plural_rate >= 0.0 && c.plural_rate <= 1.0) ||
      !(c.subword_rate >= 0.0 && c.subword_rate <= 1.0)) {
    fail("plural_rate and subword_rate must be in [0, 1]");
  }
}

std::string SimConfigToJson(const SimConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["n_traces"] = c.n_traces;
  j["vocab_size"] = c.vocab_size;
  j["head_count"] = c.head_count;
  j["layers"] = c.layers;
  j["bos_len"] = c.bos_len;
  j["image_len"] = c.image_len;
  j["instruction_len"] = c.instruction_len;
  j["output_len"] = c.output_len;
  j["class_count"] = c.class_count;
  j["mentions_per_trace"] = c.mentions_per_trace;
  j["mode_shift"] = c.mode_shift;
  j["hallucination_rate"] = c.hallucination_rate;
  j["concentration"] = c.concentration;
  j["reference_count"] = c.reference_count;
  j["signal_layer"] = c.signal_layer;
  j["baseline"] = {{"bos", c.baseline.bos},
                   {"image", c.baseline.image},
                   {"instruction", c.baseline.instruction},
                   {"prelim", c.baseline.prelim}};
  j["mode_dependent_logits"] = c.mode_dependent_logits;
  j["plural_rate"] = c.plural_rate;
  j["subword_rate"] = c.subword_rate;
  return j.dump(2) + "\n";
}

SimConfig SimConfigFromJson(std::string_view text) {
  using nlohmann::json;
  const json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) {
    throw std::runtime_error("simulator config is not a JSON object");
  }
  SimConfig c;
  try {
    auto get = [&](const char* key, auto& field) {
      if (auto it = j.find(key); it != j.end()) {
        field = it->get<std::remove_reference_t<decltype(field)>>();
      }
    };
    get("seed", c.seed);
    get("n_traces", c.n_traces);
    get("vocab_size", c.vocab_size);
    get("head_count", c.head_count);
    get("layers", c.layers);
    get("bos_len", c.bos_len);
    get("image_len", c.image_len);
    get("instruction_len", c.instruction_len);
    get("output_len", c.output_len);
    get("class_count", c.class_count);
    get("mentions_per_trace", c.mentions_per_trace);
    get("mode_shift", c.mode_shift);
    get("hallucination_rate", c.hallucination_rate);
    get("concentration", c.concentration);
    get("reference_count", c.reference_count);
    get("signal_layer", c.signal_layer);
    get("mode_dependent_logits", c.mode_dependent_logits);
    get("plural_rate", c.plural_rate);
    get("subword_rate", c.subword_rate);
    if (auto it = j.find("baseline"); it != j.end()) {
      const json& b = *it;
      if (b.contains("bos")) c.baseline.bos = b.at("bos").get<double>();
      if (b.contains("image")) c.baseline.image = b.at("image").get<double>();
      if (b.contains("instruction")) {
        c.baseline.instruction = b.at("instruction").get<double>();
      }
      if (b.contains("prelim")) {
        c.baseline.prelim = b.at("prelim").get<double>();
      }
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("bad simulator config: ") + e.what());
  }
  return c;
}

std::vector<std::string> SimClasses(const SimConfig& config) {
  const auto& coco = CocoClasses();
  const std::size_t n = std::min(config.class_count, coco.size());
  return {coco.begin(), coco.begin() + static_cast<std::ptrdiff_t>(n)};
}

ClassVocabulary SimVocabulary(const SimConfig& config) {
  return ClassVocabulary::WithDefaultSynonyms(SimClasses(config));
}

std::string SimTraceId(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sim_%06zu", index);
  return buf;
}

SimulatedTrace GenerateTrace(const SimConfig& config, std::size_t index) {
  ValidateSimConfig(config);
  return TraceBuilder(config, index).Build();
}

CorpusSummary GenerateCorpus(const SimConfig& config,
                             const std::filesystem::path& directory) {
  ValidateSimConfig(config);
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) {
    throw std::runtime_error("cannot create " + directory.string() + ": " +
                             ec.message());
  }
  CorpusSummary summary;
  summary.trace_files.resize(config.n_traces);
  std::vector<std::vector<SimulatedMention>> labels(config.n_traces);
  internal::ParallelFor(config.n_traces, ThreadCount(), [&](std::size_t i) {
    SimulatedTrace sim = GenerateTrace(config, i);
    const auto path = directory / (sim.trace.header.trace_id +
                                   std::string(kTraceExtension));
    WriteTraceFile(sim.trace, path);
    summary.trace_files[i] = path;
    labels[i] = std::move(sim.mentions);
  });

  std::string manifest = "trace_id,k,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (const SimulatedMention& m : labels[i]) {
      manifest += SimTraceId(i) + "," + std::to_string(m.position) + "," +
                  std::string(LabelName(m.label)) + "\n";
    }
  }
  summary.label_manifest = directory / kLabelManifestName;
  internal::AtomicWriteFile(summary.label_manifest, manifest);
  summary.vocabulary = directory / kVocabularyName;
  internal::AtomicWriteFile(summary.vocabulary, SimVocabulary(config).ToJson());
  return summary;
}

}  // namespace paskit
