// Stage 2: type-conditioned trigger localization. The input is the context,
// the filled identification prompt, and optional type knowledge (definition
// or keywords); the attention-enhanced BIO CRF tags the context words.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "edet/core.hpp"
#include "edet/crf.hpp"
#include "edet/encoder.hpp"
#include "edet/identification.hpp"
#include "edet/util.hpp"

namespace edet {

enum class PromptMode { VerbalizerOnly, VerbalizerPlusDefinition, VerbalizerPlusKeywords };

inline PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "verbalizer_only") return PromptMode::VerbalizerOnly;
  if (s == "verbalizer_plus_definition") return PromptMode::VerbalizerPlusDefinition;
  if (s == "verbalizer_plus_keywords") return PromptMode::VerbalizerPlusKeywords;
  throw ValidationError("unknown prompt mode: " + s);
}

inline std::string to_string(PromptMode m) {
  switch (m) {
    case PromptMode::VerbalizerOnly: return "verbalizer_only";
    case PromptMode::VerbalizerPlusDefinition: return "verbalizer_plus_definition";
    case PromptMode::VerbalizerPlusKeywords: return "verbalizer_plus_keywords";
  }
  return "?";
}

constexpr int kDefaultMaxKeywords = 3;

/// The rendered type-aware prompt: always the filled identification prompt
/// (mask replaced by the type's primary verbalizer), optionally followed by
/// the definition or by up to max_keywords keywords.
struct TypeAwarePrompt {
  PromptMode mode = PromptMode::VerbalizerOnly;
  std::vector<std::string> filled_prompt_words;
  std::vector<std::string> extra_words;
  std::string rendered;
};

inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

inline TypeAwarePrompt build_type_aware_prompt(const EventTypeSpec& type_spec,
                                               const ClozePrompt& prompt, PromptMode mode,
                                               int max_keywords = kDefaultMaxKeywords) {
  if (type_spec.verbalizers.empty())
    throw ValidationError("type '" + type_spec.name + "' has no verbalizer to fill the prompt");
  TypeAwarePrompt out;
  out.mode = mode;
  for (const auto& w : prompt.words())
    out.filled_prompt_words.push_back(w == kMaskPlaceholder ? type_spec.verbalizers.front() : w);
  switch (mode) {
    case PromptMode::VerbalizerOnly:
      break;
    case PromptMode::VerbalizerPlusDefinition:
      if (type_spec.definition) out.extra_words = split_words(*type_spec.definition);
      break;
    case PromptMode::VerbalizerPlusKeywords: {
      const int n = std::min<int>(max_keywords, int(type_spec.keywords.size()));
      for (int i = 0; i < n; ++i)
        for (const auto& w : split_words(type_spec.keywords[std::size_t(i)]))
          out.extra_words.push_back(w);
      break;
    }
  }
  for (const auto& w : out.filled_prompt_words) {
    if (!out.rendered.empty()) out.rendered += ' ';
    out.rendered += w;
  }
  for (const auto& w : out.extra_words) {
    out.rendered += ' ';
    out.rendered += w;
  }
  return out;
}

/// Segments ordered {context | filled prompt | type-aware content}; the
/// word-to-subtoken map covers context words only and no mask is set.
inline EncodedInput build_localization_input(const Sentence& sentence,
                                             const EventTypeSpec& type_spec,
                                             const ClozePrompt& prompt, PromptMode mode,
                                             const Encoder& enc,
                                             int max_keywords = kDefaultMaxKeywords) {
  validate_sentence(sentence);
  const TypeAwarePrompt tap = build_type_aware_prompt(type_spec, prompt, mode, max_keywords);
  std::vector<int> prompt_ids;
  for (const auto& w : tap.filled_prompt_words)
    for (int id : enc.tokenize_word(w)) prompt_ids.push_back(id);
  std::vector<int> tail_ids;
  for (const auto& w : tap.extra_words)
    for (int id : enc.tokenize_word(w)) tail_ids.push_back(id);
  return assemble_input(enc, sentence.tokens, prompt_ids, std::nullopt, tail_ids);
}

struct LocalizationOptions {
  PromptMode prompt_mode = PromptMode::VerbalizerPlusKeywords;
  bool constrained = true;
  bool prompt_attention_keys = true;  // prompt positions participate as keys
  int max_keywords = kDefaultMaxKeywords;
};

/// Rows of `hidden` at the first subtoken of each context word.
inline Eigen::MatrixXd gather_tagged_hidden(const Eigen::MatrixXd& hidden,
                                            const EncodedInput& input) {
  Eigen::MatrixXd h(Eigen::Index(input.word_to_subtoken.size()), hidden.cols());
  for (std::size_t w = 0; w < input.word_to_subtoken.size(); ++w)
    h.row(Eigen::Index(w)) = hidden.row(input.word_to_subtoken[w]);
  return h;
}

/// Full localization pass for one (sentence, type) pair:
/// build input -> encode -> emissions -> viterbi -> spans -> mentions.
inline std::vector<EventMention> localize(const Sentence& sentence, const EventTypeSpec& type_spec,
                                          const Encoder& enc, const CrfParameters& params,
                                          const ClozePrompt& prompt,
                                          const LocalizationOptions& opts = {}) {
  const EncodedInput input =
      build_localization_input(sentence, type_spec, prompt, opts.prompt_mode, enc, opts.max_keywords);
  if (input.word_to_subtoken.empty()) return {};
  const EncoderOutput out = enc.encode(input);
  const Eigen::MatrixXd h_tagged = gather_tagged_hidden(out.hidden, input);
  const Eigen::MatrixXd& h_keys = opts.prompt_attention_keys ? out.hidden : h_tagged;
  const Eigen::MatrixXd emissions = emission_scores(h_tagged, h_keys, params);
  const std::vector<BioTag> tags = viterbi_decode(emissions, params, opts.constrained);
  std::vector<EventMention> mentions;
  for (const auto& [s, e] : bio_to_spans(tags))
    mentions.push_back(EventMention{type_spec.name, s, e});
  return mentions;
}

}  // namespace edet
