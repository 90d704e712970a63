#include "paskit/object_matching.h"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "file_util.h"
#include "json.hpp"

namespace paskit {

namespace {

std::string Lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c);
  });
  return out;
}

// Collapses runs of whitespace to one space and trims.
std::string NormalizePhrase(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : Lower(text)) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::size_t WordCount(std::string_view phrase) {
  if (phrase.empty()) return 0;
  return 1 + static_cast<std::size_t>(
                 std::count(phrase.begin(), phrase.end(), ' '));
}

bool IsWordByte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80;
}

bool IsVowel(char c) {
  return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

}  // namespace

std::string RegularPlural(std::string_view phrase) {
  std::string out(phrase);
  if (out.empty()) return out;
  auto ends_with = [&](std::string_view suffix) {
    return out.size() >= suffix.size() &&
           out.compare(out.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with("s") || ends_with("x") || ends_with("z") || ends_with("ch") ||
      ends_with("sh")) {
    return out + "es";
  }
  if (out.size() >= 2 && out.back() == 'y' && !IsVowel(out[out.size() - 2])) {
    out.pop_back();
    return out + "ies";
  }
  return out + "s";
}

ClassVocabulary ClassVocabulary::WithDefaultSynonyms(
    std::vector<std::string> classes) {
  ClassVocabulary vocab;
  vocab.classes_ = std::move(classes);
  for (const std::string& c : vocab.classes_) vocab.AddSynonym(c, c);
  // Plurals never displace an identity entry.
  for (const std::string& c : vocab.classes_) {
    const std::string plural = RegularPlural(NormalizePhrase(c));
    if (!vocab.synonyms_.contains(plural)) vocab.AddSynonym(plural, c);
  }
  return vocab;
}

void ClassVocabulary::AddSynonym(std::string_view surface,
                                 std::string_view class_name) {
  if (!HasClass(class_name)) {
    throw std::invalid_argument("synonym '" + std::string(surface) +
                                "' maps to unknown class '" +
                                std::string(class_name) + "'");
  }
  std::string key = NormalizePhrase(surface);
  if (key.empty()) throw std::invalid_argument("empty synonym");
  max_words_ = std::max(max_words_, WordCount(key));
  synonyms_[std::move(key)] = std::string(class_name);
}

bool ClassVocabulary::HasClass(std::string_view class_name) const {
  return std::find(classes_.begin(), classes_.end(), class_name) !=
         classes_.end();
}

const std::string* ClassVocabulary::Lookup(std::string_view surface) const {
  auto it = synonyms_.find(NormalizePhrase(surface));
  return it == synonyms_.end() ? nullptr : &it->second;
}

ClassVocabulary ClassVocabulary::FromJson(std::string_view text) {
  using nlohmann::json;
  const json doc = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw std::runtime_error("vocabulary is not a JSON object");
  }
  auto classes_it = doc.find("classes");
  if (classes_it == doc.end() || !classes_it->is_array()) {
    throw std::runtime_error("vocabulary needs a 'classes' array");
  }
  std::vector<std::string> classes;
  for (const json& c : *classes_it) {
    if (!c.is_string()) throw std::runtime_error("class names must be strings");
    classes.push_back(c.get<std::string>());
  }
  bool plurals = true;
  if (auto it = doc.find("regular_plurals"); it != doc.end()) {
    if (!it->is_boolean()) {
      throw std::runtime_error("'regular_plurals' must be a boolean");
    }
    plurals = it->get<bool>();
  }
  ClassVocabulary vocab;
  if (plurals) {
    vocab = WithDefaultSynonyms(std::move(classes));
  } else {
    vocab.classes_ = std::move(classes);
    for (const std::string& c : vocab.classes_) vocab.AddSynonym(c, c);
  }
  if (auto it = doc.find("synonyms"); it != doc.end()) {
    if (!it->is_object()) throw std::runtime_error("'synonyms' must be an object");
    for (const auto& [surface, target] : it->items()) {
      if (!target.is_string()) {
        throw std::runtime_error("synonym targets must be strings");
      }
      try {
        vocab.AddSynonym(surface, target.get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw std::runtime_error(e.what());
      }
    }
  }
  return vocab;
}

ClassVocabulary ClassVocabulary::Load(const std::filesystem::path& path) {
  return FromJson(internal::ReadFileText(path));
}

std::string ClassVocabulary::ToJson() const {
  nlohmann::json doc;
  doc["classes"] = classes_;
  doc["synonyms"] = synonyms_;
  doc["regular_plurals"] = false;
  return doc.dump(2) + "\n";
}

const std::vector<std::string>& CocoClasses() {
  static const std::vector<std::string> kClasses = {
      "person",        "bicycle",      "car",           "motorcycle",
      "airplane",      "bus",          "train",         "truck",
      "boat",          "traffic light", "fire hydrant", "stop sign",
      "parking meter", "bench",        "bird",          "cat",
      "dog",           "horse",        "sheep",         "cow",
      "elephant",      "bear",         "zebra",         "giraffe",
      "backpack",      "umbrella",     "handbag",       "tie",
      "suitcase",      "frisbee",      "skis",          "snowboard",
      "sports ball",   "kite",         "baseball bat",  "baseball glove",
      "skateboard",    "surfboard",    "tennis racket", "bottle",
      "wine glass",    "cup",          "fork",          "knife",
      "spoon",         "bowl",         "banana",        "apple",
      "sandwich",      "orange",       "broccoli",      "carrot",
      "hot dog",       "pizza",        "donut",         "cake",
      "chair",         "couch",        "potted plant",  "bed",
      "dining table",  "toilet",       "tv",            "laptop",
      "mouse",         "remote",       "keyboard",      "cell phone",
      "microwave",     "oven",         "toaster",       "sink",
      "refrigerator",  "book",         "clock",         "vase",
      "scissors",      "teddy bear",   "hair drier",    "toothbrush",
  };
  return kClasses;
}

const std::vector<std::string>& VocClasses() {
  static const std::vector<std::string> kClasses = {
      "aeroplane", "bicycle", "bird",         "boat",   "bottle",
      "bus",       "car",     "cat",          "chair",  "cow",
      "dining table", "dog",  "horse",        "motorbike", "person",
      "potted plant", "sheep", "sofa",        "train",  "tv monitor",
  };
  return kClasses;
}

ClassVocabulary ResolveVocabulary(std::string_view name_or_path) {
  if (name_or_path == "coco") {
    return ClassVocabulary::WithDefaultSynonyms(CocoClasses());
  }
  if (name_or_path == "voc") {
    return ClassVocabulary::WithDefaultSynonyms(VocClasses());
  }
  return ClassVocabulary::Load(std::filesystem::path(name_or_path));
}

namespace {

struct Word {
  std::size_t begin = 0;  // byte offset in the output text
  std::size_t end = 0;
};

// Replaces the SentencePiece "▁" and byte-level BPE "Ġ" markers by spaces.
std::string DecodeSurface(std::string_view surface) {
  std::string out;
  for (std::size_t i = 0; i < surface.size(); ++i) {
    if (surface.compare(i, 3, "\xE2\x96\x81") == 0) {
      out.push_back(' ');
      i += 2;
    } else if (surface.compare(i, 2, "\xC4\xA0") == 0) {
      out.push_back(' ');
      i += 1;
    } else {
      out.push_back(surface[i]);
    }
  }
  return out;
}

// Multi-word phrases may be separated by spaces or hyphens only.
bool JoinableGap(std::string_view text, std::size_t from, std::size_t to) {
  if (from == to) return false;
  for (std::size_t i = from; i < to; ++i) {
    const char c = text[i];
    if (c != ' ' && c != '-' && c != '\t' && c != '\n') return false;
  }
  return true;
}

}  // namespace

std::vector<ObjectMention> DiscoverMentions(const Trace& trace,
                                            const ClassVocabulary& vocab) {
  const SpanLayout& layout = trace.layout;
  std::string text;
  std::vector<Position> owner;  // token position owning each byte of `text`
  for (Position k = layout.output_start(); k <= layout.total_length(); ++k) {
    const std::string piece = Lower(DecodeSurface(trace.TokenAt(k).surface));
    text += piece;
    owner.insert(owner.end(), piece.size(), k);
  }

  std::vector<Word> words;
  for (std::size_t i = 0; i < text.size();) {
    if (!IsWordByte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    Word w{i, i};
    while (w.end < text.size() &&
           IsWordByte(static_cast<unsigned char>(text[w.end]))) {
      ++w.end;
    }
    words.push_back(w);
    i = w.end;
  }

  std::vector<ObjectMention> mentions;
  for (std::size_t i = 0; i < words.size();) {
    std::size_t matched = 0;
    const std::string* class_name = nullptr;
    std::string phrase;
    const std::size_t longest = std::min(vocab.max_words(), words.size() - i);
    for (std::size_t w = longest; w >= 1 && matched == 0; --w) {
      std::string candidate;
      bool joinable = true;
      for (std::size_t j = i; j < i + w; ++j) {
        if (j > i) {
          if (!JoinableGap(text, words[j - 1].end, words[j].begin)) {
            joinable = false;
            break;
          }
          candidate.push_back(' ');
        }
        candidate.append(text, words[j].begin, words[j].end - words[j].begin);
      }
      if (!joinable) continue;
      if (const std::string* c = vocab.Lookup(candidate)) {
        matched = w;
        class_name = c;
        phrase = std::move(candidate);
      }
    }
    if (matched == 0) {
      ++i;
      continue;
    }
    ObjectMention mention;
    mention.trace_id = trace.header.trace_id;
    mention.position = owner[words[i].begin];
    mention.class_name = *class_name;
    mention.surface = std::move(phrase);
    mentions.push_back(std::move(mention));
    i += matched;
  }
  return mentions;
}

std::vector<ObjectMention> LabelMentions(
    std::vector<ObjectMention> mentions,
    std::span<const std::string> ground_truth) {
  std::set<std::string> present;
  for (const std::string& g : ground_truth) present.insert(NormalizePhrase(g));
  for (ObjectMention& m : mentions) {
    m.label = present.contains(NormalizePhrase(m.class_name))
                  ? MentionLabel::kReal
                  : MentionLabel::kHallucinated;
  }
  return mentions;
}

std::vector<ObjectMention> LabeledMentions(const Trace& trace,
                                           const ClassVocabulary& vocab) {
  // Ground-truth entries given as synonyms resolve to their class.
  std::vector<std::string> ground_truth;
  for (const std::string& g : trace.ground_truth_objects) {
    const std::string* c = vocab.Lookup(g);
    ground_truth.push_back(c ? *c : g);
  }
  return LabelMentions(DiscoverMentions(trace, vocab), ground_truth);
}

}  // namespace paskit
