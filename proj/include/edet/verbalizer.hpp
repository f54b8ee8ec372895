// Automatic verbalizer choice: candidates are trigger words from the training
// set, a frozen encoder ranks them at the mask slot, and each type takes the
// candidates with the best reciprocal-rank score.
#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "edet/core.hpp"
#include "edet/corpus.hpp"
#include "edet/encoder.hpp"
#include "edet/identification.hpp"
#include "edet/util.hpp"

namespace edet {

/// (sentence id, event type) pairs; one labeled instance per gold type of a
/// sentence. Multi-type sentences yield several instances.
using LabeledInstances = std::vector<std::pair<std::string, std::string>>;

inline LabeledInstances labeled_instances(const std::vector<AnnotatedSentence>& train) {
  LabeledInstances out;
  for (const auto& s : train)
    for (const auto& t : gold_type_set(s)) out.emplace_back(s.sentence.id, t);
  return out;
}

/// Candidate ranks per training instance; ranks are 1-based and form a
/// permutation of 1..|candidates| within each instance.
struct CandidateTable {
  std::set<std::string> candidates;
  std::map<std::string, std::map<std::string, int>> per_instance_ranks;  // sentence id -> cand -> rank
};

/// Lowercased single words from every gold trigger; a multi-word trigger
/// contributes each of its words.
inline std::set<std::string> collect_candidates(const std::vector<AnnotatedSentence>& train) {
  if (train.empty()) throw ValidationError("collect_candidates: empty training set");
  std::set<std::string> out;
  for (const auto& s : train)
    for (const auto& m : s.mentions)
      for (int i = m.trigger_start; i <= m.trigger_end; ++i)
        out.insert(lowercase(s.sentence.tokens[std::size_t(i)]));
  if (out.empty()) warn("collect_candidates: no triggers in training set, candidate set is empty");
  return out;
}

/// Ranks candidates by their mask logit on one sentence (rank 1 = highest);
/// ties break lexicographically. Candidates that are not single in-vocabulary
/// tokens are excluded with a warning.
inline std::map<std::string, int> rank_candidates(const Sentence& sentence,
                                                  const ClozePrompt& prompt,
                                                  const std::set<std::string>& candidates,
                                                  const Encoder& frozen_encoder) {
  const EncodedInput input = build_cloze_input(sentence, prompt, frozen_encoder);
  const EncoderOutput out = frozen_encoder.encode(input);
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& cand : candidates) {
    const auto id = frozen_encoder.token_id(cand);
    if (!id) {
      warn("rank_candidates: candidate '" + cand + "' not in vocabulary, excluded");
      continue;
    }
    scored.emplace_back((*out.vocab_logits_at_mask)(*id), cand);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::map<std::string, int> ranks;
  for (std::size_t i = 0; i < scored.size(); ++i) ranks[scored[i].second] = int(i) + 1;
  return ranks;
}

inline CandidateTable build_candidate_table(const std::vector<AnnotatedSentence>& train,
                                            const ClozePrompt& prompt,
                                            const std::set<std::string>& candidates,
                                            const Encoder& frozen_encoder) {
  CandidateTable table;
  for (const auto& cand : candidates)
    if (frozen_encoder.token_id(cand)) table.candidates.insert(cand);
  for (const auto& s : train) {
    if (s.mentions.empty()) continue;  // only labeled instances get ranked
    table.per_instance_ranks[s.sentence.id] =
        rank_candidates(s.sentence, prompt, table.candidates, frozen_encoder);
  }
  return table;
}

/// Reciprocal-rank score: sum over instances of 1/rank, counting only the
/// instances labeled with the queried type.
inline double score_candidate(const std::string& candidate, const std::string& type,
                              const CandidateTable& table, const LabeledInstances& labels) {
  double score = 0.0;
  for (const auto& [sid, label] : labels) {
    if (label != type) continue;
    auto it = table.per_instance_ranks.find(sid);
    if (it == table.per_instance_ranks.end())
      throw ValidationError("score_candidate: instance '" + sid + "' missing from table");
    auto rit = it->second.find(candidate);
    if (rit == it->second.end()) continue;  // candidate excluded from this ranking
    score += 1.0 / double(rit->second);
  }
  return score;
}

/// Per type, the top_n candidates by reciprocal-rank score (ties broken
/// lexicographically). A type with no positively scoring candidate falls back
/// to its name tokens, as a composite token when the name is multi-word.
inline std::map<std::string, std::vector<std::string>> select_verbalizers(
    const std::vector<AnnotatedSentence>& train, const Ontology& onto, Encoder& frozen_encoder,
    int top_n, const ClozePrompt& prompt = ClozePrompt()) {
  if (top_n < 1) throw ValidationError("select_verbalizers: top_n must be >= 1");
  const auto candidates = collect_candidates(train);
  const auto table = build_candidate_table(train, prompt, candidates, frozen_encoder);
  const auto labels = labeled_instances(train);

  std::map<std::string, std::vector<std::string>> selected;
  for (const auto& t : onto.types) {
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& cand : table.candidates) {
      const double s = score_candidate(cand, t.name, table, labels);
      if (s > 0.0) scored.emplace_back(s, cand);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    std::vector<std::string> verbs;
    for (std::size_t i = 0; i < scored.size() && int(i) < top_n; ++i)
      verbs.push_back(scored[i].second);
    if (verbs.empty()) {
      const auto words = name_tokens(t.name);
      const std::string surface = composite_surface(words);
      VerbalizerIndex::resolve_verbalizer(surface, frozen_encoder);
      verbs.push_back(surface);
      warn("select_verbalizers: no scoring candidate for '" + t.name +
           "', falling back to name token '" + surface + "'");
    }
    selected[t.name] = std::move(verbs);
  }
  return selected;
}

/// Copies a selection back into an ontology (for export to JSON).
inline Ontology apply_verbalizers(Ontology onto,
                                  const std::map<std::string, std::vector<std::string>>& selected) {
  for (auto& t : onto.types) {
    auto it = selected.find(t.name);
    if (it != selected.end()) t.verbalizers = it->second;
  }
  onto.validate();
  return onto;
}

}  // namespace edet
