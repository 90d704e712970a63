#ifndef PASKIT_OBJECT_MATCHING_H_
#define PASKIT_OBJECT_MATCHING_H_

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paskit/trace.h"

namespace paskit {

// An object-token occurrence in a generated output.
struct ObjectMention {
  std::string trace_id;
  // First subword token of the matched phrase.
  Position position = 0;
  std::string class_name;
  // Matched surface text, lower-cased.
  std::string surface;
  MentionLabel label = MentionLabel::kUnlabeled;

  std::string id() const { return trace_id + "#" + std::to_string(position); }
  bool operator==(const ObjectMention&) const = default;
};

// Object classes plus a case-insensitive surface -> class map.
class ClassVocabulary {
 public:
  ClassVocabulary() = default;

  // Identity entries plus regular plurals of every class.
  static ClassVocabulary WithDefaultSynonyms(std::vector<std::string> classes);

  // Loads {"classes": [...], "synonyms": {"surface": "class"},
  // "regular_plurals": bool (default true)}. Throws std::runtime_error.
  static ClassVocabulary FromJson(std::string_view text);
  static ClassVocabulary Load(const std::filesystem::path& path);
  std::string ToJson() const;

  // Throws std::invalid_argument if `class_name` is not a class.
  void AddSynonym(std::string_view surface, std::string_view class_name);

  const std::vector<std::string>& classes() const { return classes_; }
  const std::map<std::string, std::string>& synonyms() const {
    return synonyms_;
  }
  bool HasClass(std::string_view class_name) const;
  // Class for a (multi-word, single-space separated) surface, or nullptr.
  const std::string* Lookup(std::string_view surface) const;
  // Longest synonym measured in words.
  std::size_t max_words() const { return max_words_; }

 private:
  std::vector<std::string> classes_;
  std::map<std::string, std::string> synonyms_;
  std::size_t max_words_ = 0;
};

// The 80 MSCOCO detection classes and the 20 Pascal VOC classes.
const std::vector<std::string>& CocoClasses();
const std::vector<std::string>& VocClasses();

// "coco" / "voc" select a built-in vocabulary; anything else is a path.
ClassVocabulary ResolveVocabulary(std::string_view name_or_path);

// Regular English plural of the last word ("bus" -> "buses").
std::string RegularPlural(std::string_view phrase);

// Finds class mentions in the output span. Matching is case-insensitive,
// word-boundary delimited and longest-match-first; each mention points at the
// token holding the first character of the matched phrase. Labels are
// kUnlabeled.
std::vector<ObjectMention> DiscoverMentions(const Trace& trace,
                                            const ClassVocabulary& vocab);

// Real iff the mention's class is in `ground_truth`; order preserved.
std::vector<ObjectMention> LabelMentions(
    std::vector<ObjectMention> mentions,
    std::span<const std::string> ground_truth);

// Discover + label against the trace's own ground-truth list.
std::vector<ObjectMention> LabeledMentions(const Trace& trace,
                                           const ClassVocabulary& vocab);

}  // namespace paskit

#endif  // PASKIT_OBJECT_MATCHING_H_
