// Domain data model: sentences, event mentions, ontologies, BIO tags.
// All types are immutable value objects once constructed and safe to share
// across threads.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "edet/util.hpp"

namespace edet {

struct Sentence {
  std::string id;
  std::vector<std::string> tokens;  // word-level, never empty
  std::optional<std::string> doc_id;
};

/// A typed trigger span; indices are word-level and inclusive on both ends.
struct EventMention {
  std::string event_type;
  int trigger_start = 0;
  int trigger_end = 0;

  friend bool operator==(const EventMention& a, const EventMention& b) {
    return a.event_type == b.event_type && a.trigger_start == b.trigger_start &&
           a.trigger_end == b.trigger_end;
  }
  friend bool operator<(const EventMention& a, const EventMention& b) {
    return std::tie(a.event_type, a.trigger_start, a.trigger_end) <
           std::tie(b.event_type, b.trigger_start, b.trigger_end);
  }
};

/// A sentence plus its gold or predicted mentions. An empty mention list
/// denotes a NULL instance.
struct AnnotatedSentence {
  Sentence sentence;
  std::vector<EventMention> mentions;

  bool is_null_instance() const { return mentions.empty(); }
};

struct EventTypeSpec {
  std::string name;
  std::vector<std::string> verbalizers;  // non-empty, ordered; first is primary
  std::optional<std::string> definition;
  std::vector<std::string> keywords;
};

struct Ontology {
  std::vector<EventTypeSpec> types;
  std::string null_verbalizer = "none";

  bool has_type(const std::string& name) const {
    return std::any_of(types.begin(), types.end(),
                       [&](const EventTypeSpec& t) { return t.name == name; });
  }

  const EventTypeSpec& type(const std::string& name) const {
    for (const auto& t : types)
      if (t.name == name) return t;
    throw ValidationError("unknown event type: " + name);
  }

  std::vector<std::string> type_names() const {
    std::vector<std::string> names;
    names.reserve(types.size());
    for (const auto& t : types) names.push_back(t.name);
    return names;
  }

  /// Enforces unique type names, non-empty verbalizer lists and a NULL
  /// verbalizer that is not claimed by any real type.
  void validate() const {
    std::set<std::string> seen;
    for (const auto& t : types) {
      if (!seen.insert(t.name).second)
        throw ValidationError("duplicate event type name: " + t.name);
      if (t.verbalizers.empty())
        throw ValidationError("event type has no verbalizers: " + t.name);
      for (const auto& v : t.verbalizers)
        if (v == null_verbalizer)
          throw ValidationError("type " + t.name + " uses the NULL verbalizer '" +
                                null_verbalizer + "'");
    }
  }
};

// ---------------------------------------------------------------------------
// BIO tags. Numeric order O < B < I matches the decoder's tie-break.

enum class BioTag : int { O = 0, B = 1, I = 2 };

constexpr int kNumTags = 3;

inline char bio_char(BioTag t) {
  switch (t) {
    case BioTag::O: return 'O';
    case BioTag::B: return 'B';
    case BioTag::I: return 'I';
  }
  return '?';
}

inline BioTag bio_from_char(char c) {
  switch (c) {
    case 'O': return BioTag::O;
    case 'B': return BioTag::B;
    case 'I': return BioTag::I;
  }
  throw ValidationError(std::string("invalid BIO tag character: ") + c);
}

using Span = std::pair<int, int>;  // inclusive (start, end) word indices

/// Extracts maximal spans from a tag sequence. A span opens at B and extends
/// through consecutive I tags; a stray I (not preceded by B or I) opens a new
/// span, so every sequence is repairable.
inline std::vector<Span> bio_to_spans(const std::vector<BioTag>& tags) {
  if (tags.empty()) throw ValidationError("bio_to_spans: empty tag sequence");
  std::vector<Span> spans;
  int open = -1;  // start of the span currently being built, -1 if none
  for (int i = 0; i < int(tags.size()); ++i) {
    switch (tags[i]) {
      case BioTag::O:
        if (open >= 0) spans.emplace_back(open, i - 1);
        open = -1;
        break;
      case BioTag::B:
        if (open >= 0) spans.emplace_back(open, i - 1);
        open = i;
        break;
      case BioTag::I:
        if (open < 0) open = i;  // lenient repair: stray I starts a span
        break;
    }
  }
  if (open >= 0) spans.emplace_back(open, int(tags.size()) - 1);
  return spans;
}

/// Inverse of bio_to_spans for training-target construction. Spans must be
/// disjoint and inside [0, length).
inline std::vector<BioTag> spans_to_bio(std::vector<Span> spans, int length) {
  std::sort(spans.begin(), spans.end());
  std::vector<BioTag> tags(std::size_t(length), BioTag::O);
  int prev_end = -1;
  for (const auto& [start, end] : spans) {
    if (start < 0 || end < start || end >= length)
      throw ValidationError("span (" + std::to_string(start) + "," + std::to_string(end) +
                            ") out of range for length " + std::to_string(length));
    if (start <= prev_end)
      throw ValidationError("overlapping spans at " + std::to_string(start));
    prev_end = end;
    tags[std::size_t(start)] = BioTag::B;
    for (int i = start + 1; i <= end; ++i) tags[std::size_t(i)] = BioTag::I;
  }
  return tags;
}

// ---------------------------------------------------------------------------

/// Per-sentence identification logits over event types plus NULL; the
/// interface between the two stages.
struct TypeScores {
  std::map<std::string, double> scores;
  double null_score = 0.0;
};

/// Validates one mention against its sentence and ontology.
inline void validate_mention(const EventMention& m, const Sentence& s, const Ontology& onto) {
  if (m.trigger_start < 0 || m.trigger_start > m.trigger_end ||
      m.trigger_end >= int(s.tokens.size()))
    throw ValidationError("mention span (" + std::to_string(m.trigger_start) + "," +
                          std::to_string(m.trigger_end) + ") out of bounds in sentence '" +
                          s.id + "' of length " + std::to_string(s.tokens.size()));
  if (!onto.has_type(m.event_type))
    throw ValidationError("mention type '" + m.event_type + "' not in ontology (sentence '" +
                          s.id + "')");
}

inline void validate_sentence(const Sentence& s) {
  if (s.tokens.empty()) throw ValidationError("sentence '" + s.id + "' has no tokens");
  for (const auto& tok : s.tokens)
    if (tok.empty() || tok.find_first_of(" \t\n\r") != std::string::npos)
      throw ValidationError("sentence '" + s.id + "' has an empty or whitespace-bearing token");
}

/// Removes duplicate (type, start, end) triples, preserving first occurrence.
inline std::vector<EventMention> dedup_mentions(const std::vector<EventMention>& mentions) {
  std::vector<EventMention> out;
  std::set<EventMention> seen;
  for (const auto& m : mentions)
    if (seen.insert(m).second) out.push_back(m);
  return out;
}

/// The set of event types mentioned in a sentence.
inline std::set<std::string> gold_type_set(const AnnotatedSentence& s) {
  std::set<std::string> types;
  for (const auto& m : s.mentions) types.insert(m.event_type);
  return types;
}

}  // namespace edet
