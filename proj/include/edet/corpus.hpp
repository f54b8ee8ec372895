// Corpus and ontology I/O, K-per-type few-shot splits, NULL-instance injection.
//
// Canonical corpus format: JSONL, one sentence per line,
//   {"id": "...", "tokens": [...], "mentions": [{"type": ..., "start": ..., "end": ...}]}
// Ontology format: JSON,
//   {"types": [{"name", "verbalizers"?, "definition"?, "keywords"?}], "null_verbalizer"?}
// Converters from dataset-native formats live outside the core.
#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edet/core.hpp"
#include "edet/util.hpp"

namespace edet {

using json = nlohmann::ordered_json;

struct Corpus {
  std::vector<AnnotatedSentence> sentences;
  Ontology ontology;
};

struct FewShotSplit {
  std::vector<AnnotatedSentence> train;
  std::vector<AnnotatedSentence> test;
  int k = 0;
  std::uint64_t seed = 0;
};

enum class UnknownTypePolicy { Fail, Skip };

// ---------------------------------------------------------------------------
// Ontology JSON

/// Splits a type name like "End-Position" or "Business:Lay_off" into
/// lowercased word tokens; used as the default verbalizer source.
inline std::vector<std::string> name_tokens(const std::string& name) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : name) {
    if (c == '-' || c == '_' || c == ':' || c == '.' || c == ' ' || c == '/') {
      if (!cur.empty()) words.push_back(lowercase(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(lowercase(cur));
  if (words.empty()) throw ValidationError("type name '" + name + "' has no word content");
  return words;
}

/// Joins name tokens with '_' — the surface form used for composite tokens.
inline std::string composite_surface(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += '_';
    out += w;
  }
  return out;
}

inline Ontology parse_ontology_json(const json& j) {
  Ontology onto;
  if (j.contains("null_verbalizer")) onto.null_verbalizer = j.at("null_verbalizer").get<std::string>();
  if (!j.contains("types") || !j.at("types").is_array())
    throw ValidationError("ontology: missing 'types' array");
  for (const auto& tj : j.at("types")) {
    EventTypeSpec spec;
    spec.name = tj.at("name").get<std::string>();
    if (tj.contains("verbalizers") && !tj.at("verbalizers").empty()) {
      for (const auto& v : tj.at("verbalizers")) spec.verbalizers.push_back(v.get<std::string>());
    } else {
      // No verbalizer given: the type name itself serves, as a composite
      // token when multi-word.
      spec.verbalizers.push_back(composite_surface(name_tokens(spec.name)));
    }
    if (tj.contains("definition") && !tj.at("definition").is_null())
      spec.definition = tj.at("definition").get<std::string>();
    if (tj.contains("keywords"))
      for (const auto& k : tj.at("keywords")) spec.keywords.push_back(k.get<std::string>());
    onto.types.push_back(std::move(spec));
  }
  onto.validate();
  return onto;
}

inline Ontology load_ontology(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open ontology file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("ontology parse error in " + path + ": " + e.what());
  }
  return parse_ontology_json(j);
}

inline json ontology_to_json(const Ontology& onto) {
  json j;
  j["null_verbalizer"] = onto.null_verbalizer;
  j["types"] = json::array();
  for (const auto& t : onto.types) {
    json tj;
    tj["name"] = t.name;
    tj["verbalizers"] = t.verbalizers;
    if (t.definition) tj["definition"] = *t.definition;
    if (!t.keywords.empty()) tj["keywords"] = t.keywords;
    j["types"].push_back(tj);
  }
  return j;
}

inline void save_ontology(const std::string& path, const Ontology& onto) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write ontology file: " + path);
  out << ontology_to_json(onto).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Corpus JSONL

inline AnnotatedSentence parse_sentence_json(const json& j, const Ontology& onto,
                                             UnknownTypePolicy policy, const std::string& where) {
  AnnotatedSentence as;
  as.sentence.id = j.at("id").get<std::string>();
  as.sentence.tokens = j.at("tokens").get<std::vector<std::string>>();
  if (j.contains("doc_id") && !j.at("doc_id").is_null())
    as.sentence.doc_id = j.at("doc_id").get<std::string>();
  validate_sentence(as.sentence);
  if (j.contains("mentions")) {
    for (const auto& mj : j.at("mentions")) {
      EventMention m;
      m.event_type = mj.at("type").get<std::string>();
      m.trigger_start = mj.at("start").get<int>();
      m.trigger_end = mj.at("end").get<int>();
      if (!onto.has_type(m.event_type)) {
        if (policy == UnknownTypePolicy::Skip) {
          warn(where + ": skipping mention with unknown type '" + m.event_type + "'");
          continue;
        }
        throw ValidationError(where + ": unknown event type '" + m.event_type + "'");
      }
      validate_mention(m, as.sentence, onto);
      as.mentions.push_back(m);
    }
  }
  as.mentions = dedup_mentions(as.mentions);
  return as;
}

inline Corpus load_corpus(const std::string& path, const Ontology& onto,
                          UnknownTypePolicy policy = UnknownTypePolicy::Fail) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open corpus file: " + path);
  Corpus corpus;
  corpus.ontology = onto;
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(where + ": parse error: " + e.what());
    }
    AnnotatedSentence as;
    try {
      as = parse_sentence_json(j, onto, policy, where);
    } catch (const json::exception& e) {
      throw ValidationError(where + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (!ids.insert(as.sentence.id).second)
      throw ValidationError(where + ": duplicate sentence id '" + as.sentence.id + "'");
    corpus.sentences.push_back(std::move(as));
  }
  return corpus;
}

inline json sentence_to_json(const AnnotatedSentence& as) {
  json j;
  j["id"] = as.sentence.id;
  j["tokens"] = as.sentence.tokens;
  if (as.sentence.doc_id) j["doc_id"] = *as.sentence.doc_id;
  j["mentions"] = json::array();
  for (const auto& m : as.mentions) {
    j["mentions"].push_back({{"type", m.event_type}, {"start", m.trigger_start}, {"end", m.trigger_end}});
  }
  return j;
}

/// Writes the same JSONL schema load_corpus reads; load(save(x)) == x.
inline void save_predictions(const std::string& path, const std::vector<AnnotatedSentence>& sentences) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write file: " + path);
  for (const auto& as : sentences) out << sentence_to_json(as).dump() << "\n";
  if (!out) throw ValidationError("I/O failure while writing: " + path);
}

// ---------------------------------------------------------------------------
// Few-shot sampling

/// Samples min(K, available) supporting sentences per type into train; the
/// remainder becomes test. Multi-type sentences count toward every type they
/// bear; a greedy pass fills the least-supported type first to minimize quota
/// overshoot. Deterministic under (corpus, K, seed).
inline FewShotSplit sample_few_shot(const Corpus& corpus, int k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("sample_few_shot: K must be >= 1");
  const auto type_names = corpus.ontology.type_names();

  std::vector<std::size_t> order(corpus.sentences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);

  std::map<std::string, int> available;
  for (const auto& name : type_names) available[name] = 0;
  for (const auto& s : corpus.sentences)
    for (const auto& t : gold_type_set(s)) available[t] += 1;
  for (const auto& name : type_names)
    if (available[name] == 0)
      warn("sample_few_shot: type '" + name + "' has no instances; retained with empty support");

  std::map<std::string, int> support;
  for (const auto& name : type_names) support[name] = 0;
  std::vector<bool> in_train(corpus.sentences.size(), false);
  // next unused shuffled sentence bearing each type
  std::map<std::string, std::size_t> cursor;
  for (const auto& name : type_names) cursor[name] = 0;

  auto target = [&](const std::string& t) { return std::min(k, available[t]); };

  while (true) {
    // pick the least-supported type still under quota (ontology order breaks ties)
    const std::string* pick = nullptr;
    for (const auto& name : type_names) {
      if (support[name] >= target(name)) continue;
      if (!pick || support[name] < support[*pick]) pick = &name;
    }
    if (!pick) break;
    // advance that type's cursor to the next unused supporting sentence
    std::size_t& cur = cursor[*pick];
    bool placed = false;
    while (cur < order.size()) {
      const std::size_t idx = order[cur++];
      if (in_train[idx]) continue;
      const auto types = gold_type_set(corpus.sentences[idx]);
      if (!types.count(*pick)) continue;
      in_train[idx] = true;
      for (const auto& t : types) support[t] += 1;
      placed = true;
      break;
    }
    if (!placed) {
      // exhausted: every remaining supporting sentence is already in train
      support[*pick] = target(*pick);
    }
  }

  FewShotSplit split;
  split.k = k;
  split.seed = seed;
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    (in_train[i] ? split.train : split.test).push_back(corpus.sentences[i]);
  }
  return split;
}

// ---------------------------------------------------------------------------
// NULL injection

inline std::size_t count_event_bearing(const std::vector<AnnotatedSentence>& xs) {
  std::size_t n = 0;
  for (const auto& s : xs)
    if (!s.mentions.empty()) ++n;
  return n;
}

/// Adds round(ratio * |event-bearing train|) NULL sentences from the pool to
/// train and, unless mirror_test is false, the same ratio of test additions
/// from the held-out remainder of the pool. Existing annotations are never
/// touched.
inline FewShotSplit inject_null_instances(const FewShotSplit& split, double ratio,
                                          const std::vector<AnnotatedSentence>& pool,
                                          std::uint64_t seed, bool mirror_test = true) {
  if (ratio < 0) throw ValidationError("inject_null_instances: ratio must be >= 0");
  std::set<std::string> split_ids;
  for (const auto& s : split.train) split_ids.insert(s.sentence.id);
  for (const auto& s : split.test) split_ids.insert(s.sentence.id);
  for (const auto& p : pool) {
    if (!p.mentions.empty())
      throw ValidationError("inject_null_instances: pool sentence '" + p.sentence.id +
                            "' has mentions");
    if (split_ids.count(p.sentence.id))
      throw ValidationError("inject_null_instances: pool sentence '" + p.sentence.id +
                            "' already in split");
  }

  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  shuffle(order, rng);

  const auto want_train = std::size_t(std::llround(ratio * double(count_event_bearing(split.train))));
  const auto want_test =
      mirror_test ? std::size_t(std::llround(ratio * double(count_event_bearing(split.test)))) : 0;

  FewShotSplit out = split;
  std::size_t cursor = 0;
  const std::size_t take_train = std::min(want_train, pool.size());
  for (std::size_t i = 0; i < take_train; ++i) out.train.push_back(pool[order[cursor++]]);
  const std::size_t take_test = std::min(want_test, pool.size() - cursor);
  for (std::size_t i = 0; i < take_test; ++i) out.test.push_back(pool[order[cursor++]]);
  if (take_train < want_train || take_test < want_test)
    warn("inject_null_instances: pool too small (wanted " +
         std::to_string(want_train + want_test) + ", had " + std::to_string(pool.size()) + ")");
  return out;
}

}  // namespace edet
