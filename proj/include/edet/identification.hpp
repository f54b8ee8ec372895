// Stage 1: cloze-prompted multi-label event type identification with the
// NULL verbalizer as adaptive threshold. A type is predicted iff its
// aggregated verbalizer logit at the mask strictly exceeds the NULL logit.
#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "edet/aggregation.hpp"
#include "edet/core.hpp"
#include "edet/corpus.hpp"
#include "edet/encoder.hpp"
#include "edet/util.hpp"

namespace edet {

constexpr const char* kMaskPlaceholder = "[MASK]";
constexpr const char* kDefaultPromptTemplate = "This text describes a [MASK] event.";

/// A natural-language template with exactly one standalone [MASK] word,
/// appended after the context.
class ClozePrompt {
 public:
  ClozePrompt() : ClozePrompt(kDefaultPromptTemplate) {}

  explicit ClozePrompt(const std::string& template_text) : template_text_(template_text) {
    std::istringstream iss(template_text);
    std::string word;
    int masks = 0;
    while (iss >> word) {
      if (word.find(kMaskPlaceholder) != std::string::npos) {
        if (word != kMaskPlaceholder)
          throw ValidationError("prompt template: [MASK] must be a standalone word");
        ++masks;
      }
      words_.push_back(word);
    }
    if (masks != 1)
      throw ValidationError("prompt template must contain exactly one [MASK], got " +
                            std::to_string(masks));
  }

  const std::string& text() const { return template_text_; }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::string template_text_;
  std::vector<std::string> words_;
};

struct IdentificationLossConfig {
  enum class Kind { ThresholdCE, Margin };
  Kind kind = Kind::ThresholdCE;
  double margin = 1.0;

  static Kind kind_from_string(const std::string& s) {
    if (s == "threshold_ce") return Kind::ThresholdCE;
    if (s == "margin") return Kind::Margin;
    throw ValidationError("unknown identification loss kind: " + s);
  }
};

/// Context followed by the cloze prompt; mask position set.
inline EncodedInput build_cloze_input(const Sentence& sentence, const ClozePrompt& prompt,
                                      const Encoder& enc) {
  validate_sentence(sentence);
  std::vector<int> prompt_ids;
  std::optional<int> mask_offset;
  for (const auto& w : prompt.words()) {
    if (w == kMaskPlaceholder) {
      mask_offset = int(prompt_ids.size());
      prompt_ids.push_back(enc.mask_id());
    } else {
      for (int id : enc.tokenize_word(w)) prompt_ids.push_back(id);
    }
  }
  return assemble_input(enc, sentence.tokens, prompt_ids, mask_offset, {});
}

// ---------------------------------------------------------------------------
// Verbalizer -> vocabulary resolution, fixed at setup time.

/// Compiled map from each ontology type to its verbalizer token ids plus the
/// NULL token id. Construction fails loudly on unresolvable verbalizers so
/// scoring never has to.
struct VerbalizerIndex {
  std::vector<std::string> type_order;               // ontology order
  std::map<std::string, std::vector<int>> token_ids; // type -> verbalizer ids
  int null_id = -1;

  static VerbalizerIndex build(const Ontology& onto, Encoder& enc) {
    VerbalizerIndex idx;
    for (const auto& t : onto.types) {
      std::vector<int> ids;
      for (const auto& v : t.verbalizers) ids.push_back(resolve_verbalizer(v, enc));
      idx.type_order.push_back(t.name);
      idx.token_ids[t.name] = std::move(ids);
    }
    const auto nid = enc.token_id(onto.null_verbalizer);
    if (!nid)
      throw ValidationError("NULL verbalizer '" + onto.null_verbalizer + "' not in vocabulary");
    idx.null_id = *nid;
    return idx;
  }

  /// Words that are not whole vocabulary tokens become a token initialized
  /// from the mean of their subword pieces.
  static int resolve_single_word(const std::string& word, Encoder& enc) {
    if (auto id = enc.token_id(word)) return *id;
    std::vector<std::string> pieces;
    for (int id : enc.tokenize_word(word)) {
      if (id == enc.unk_id())
        throw ValidationError("verbalizer word '" + word + "' not in vocabulary");
      pieces.push_back(enc.token_surface(id));
    }
    return enc.add_token(word, pieces);
  }

  /// Single-token verbalizers resolve directly; multi-word surfaces become a
  /// composite token whose embedding is the mean of its word embeddings.
  static int resolve_verbalizer(const std::string& surface, Encoder& enc) {
    if (auto id = enc.token_id(surface)) return *id;
    const auto words = name_tokens(surface);
    std::vector<std::string> word_surfaces;
    for (const auto& w : words)
      word_surfaces.push_back(enc.token_surface(resolve_single_word(w, enc)));
    if (word_surfaces.size() == 1) return *enc.token_id(word_surfaces.front());
    return enc.add_token(composite_surface(words), word_surfaces);
  }
};

/// Aggregates mask logits into per-type scores plus the NULL score. Tokens
/// that map to no type are simply never read. wavg_theta holds the raw
/// learnable weight logits per type (required iff kind == wavg).
inline TypeScores score_event_types(const EncoderOutput& output, const VerbalizerIndex& idx,
                                    AggregationKind kind,
                                    const std::map<std::string, Eigen::VectorXd>* wavg_theta = nullptr) {
  if (!output.vocab_logits_at_mask)
    throw ValidationError("score_event_types: output has no mask logits");
  if ((kind == AggregationKind::WeightedAvg) != (wavg_theta != nullptr))
    throw ValidationError("score_event_types: wavg_theta required iff aggregation is wavg");
  const Eigen::VectorXd& logits = *output.vocab_logits_at_mask;
  TypeScores ts;
  for (const auto& type : idx.type_order) {
    const auto& ids = idx.token_ids.at(type);
    std::vector<double> vals;
    vals.reserve(ids.size());
    for (int id : ids) vals.push_back(logits(id));
    if (kind == AggregationKind::WeightedAvg) {
      auto it = wavg_theta->find(type);
      if (it == wavg_theta->end() || it->second.size() != Eigen::Index(vals.size()))
        throw ValidationError("score_event_types: missing/mismatched wavg weights for " + type);
      const Eigen::VectorXd w = softmax(it->second);
      std::vector<double> wv(w.data(), w.data() + w.size());
      ts.scores[type] = aggregate(vals, kind, &wv);
    } else {
      ts.scores[type] = aggregate(vals, kind);
    }
  }
  ts.null_score = logits(idx.null_id);
  return ts;
}

/// Scatters d(loss)/d(TypeScores) back onto the vocabulary logit vector,
/// and, for wavg, accumulates gradients on the raw weight logits.
inline void scatter_type_score_grads(const EncoderOutput& output, const VerbalizerIndex& idx,
                                     AggregationKind kind,
                                     const std::map<std::string, Eigen::VectorXd>* wavg_theta,
                                     const TypeScores& d_scores, Eigen::VectorXd& d_vocab_logits,
                                     std::map<std::string, Eigen::VectorXd>* d_theta = nullptr) {
  const Eigen::VectorXd& logits = *output.vocab_logits_at_mask;
  for (const auto& type : idx.type_order) {
    const double upstream = d_scores.scores.at(type);
    if (upstream == 0.0) continue;
    const auto& ids = idx.token_ids.at(type);
    std::vector<double> vals;
    vals.reserve(ids.size());
    for (int id : ids) vals.push_back(logits(id));
    std::vector<double> g;
    if (kind == AggregationKind::WeightedAvg) {
      const Eigen::VectorXd w = softmax(wavg_theta->at(type));
      std::vector<double> wv(w.data(), w.data() + w.size());
      g = aggregate_grad(vals, kind, &wv);
      if (d_theta) {
        auto [it, inserted] = d_theta->try_emplace(type, Eigen::VectorXd::Zero(w.size()));
        it->second += wavg_theta_grad(vals, w, upstream);
        (void)inserted;
      }
    } else {
      g = aggregate_grad(vals, kind);
    }
    for (std::size_t i = 0; i < ids.size(); ++i)
      d_vocab_logits(ids[i]) += upstream * g[i];
  }
  d_vocab_logits(idx.null_id) += d_scores.null_score;
}

// ---------------------------------------------------------------------------
// Decoding and losses

/// Predicted set: every type whose score strictly exceeds NULL. Ties decode
/// as negative.
inline std::set<std::string> decode_identification(const TypeScores& scores) {
  std::set<std::string> out;
  for (const auto& [type, s] : scores.scores)
    if (s > scores.null_score) out.insert(type);
  return out;
}

/// Single-label softmax probability over the real types (NULL excluded).
inline double classification_probability(const TypeScores& scores, const std::string& label) {
  if (!scores.scores.count(label))
    throw ValidationError("classification_probability: unknown label " + label);
  std::vector<double> all;
  all.reserve(scores.scores.size());
  for (const auto& [_, s] : scores.scores) all.push_back(s);
  const double lse = log_sum_exp(all);
  return std::exp(scores.scores.at(label) - lse);
}

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// ThresholdCE: each positive type competes with NULL pairwise (averaged),
/// all negative types pool with NULL in a single softmax. Returns the
/// negated log-likelihood form; grad, when given, receives d(loss)/d(logit).
inline double threshold_ce_loss(const TypeScores& scores, const std::set<std::string>& gold_types,
                                TypeScores* grad = nullptr) {
  for (const auto& t : gold_types)
    if (!scores.scores.count(t))
      throw ValidationError("threshold_ce_loss: gold type '" + t + "' not scored");
  if (grad) {
    grad->scores.clear();
    for (const auto& [t, _] : scores.scores) grad->scores[t] = 0.0;
    grad->null_score = 0.0;
  }
  const double s_null = scores.null_score;
  double loss = 0.0;

  // positives: -(1/|T|) sum_t log( e^{s_t} / (e^{s_t} + e^{s_null}) )
  if (!gold_types.empty()) {
    const double inv = 1.0 / double(gold_types.size());
    for (const auto& t : gold_types) {
      const double s_t = scores.scores.at(t);
      loss += inv * softplus(s_null - s_t);
      if (grad) {
        const double sig = sigmoid(s_null - s_t);
        grad->scores[t] -= inv * sig;
        grad->null_score += inv * sig;
      }
    }
  }

  // negatives: -log( e^{s_null} / (e^{s_null} + sum_{t'} e^{s_t'}) )
  std::vector<double> pool{s_null};
  std::vector<const std::string*> negatives;
  for (const auto& [t, s] : scores.scores)
    if (!gold_types.count(t)) {
      pool.push_back(s);
      negatives.push_back(&t);
    }
  const double lse = log_sum_exp(pool);
  loss += lse - s_null;
  if (grad) {
    grad->null_score += std::exp(s_null - lse) - 1.0;
    for (std::size_t i = 0; i < negatives.size(); ++i)
      grad->scores[*negatives[i]] += std::exp(pool[i + 1] - lse);
  }
  return loss;
}

/// Margin ranking loss: positives must beat NULL by the margin, negatives
/// must trail it by the margin; averaged over the ontology size.
inline double margin_loss(const TypeScores& scores, const std::set<std::string>& gold_types,
                          double margin, TypeScores* grad = nullptr) {
  if (margin <= 0) throw ValidationError("margin_loss: margin must be > 0");
  for (const auto& t : gold_types)
    if (!scores.scores.count(t))
      throw ValidationError("margin_loss: gold type '" + t + "' not scored");
  if (grad) {
    grad->scores.clear();
    for (const auto& [t, _] : scores.scores) grad->scores[t] = 0.0;
    grad->null_score = 0.0;
  }
  const double denom = double(scores.scores.size());
  if (denom == 0) return 0.0;
  const double inv = 1.0 / denom;
  double loss = 0.0;
  for (const auto& [t, s] : scores.scores) {
    const bool positive = gold_types.count(t) > 0;
    const double gap = positive ? (s - scores.null_score) : (scores.null_score - s);
    const double term = std::max(0.0, margin - gap);
    loss += inv * term;
    if (grad && term > 0.0) {
      const double sign = positive ? -1.0 : 1.0;
      grad->scores[t] += inv * sign;
      grad->null_score -= inv * sign;
    }
  }
  return loss;
}

}  // namespace edet
