// Contract over the trainable masked-language-model backbone shared by both
// stages, plus a deterministic toy encoder so the whole suite runs with no
// external downloads.
#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "edet/param.hpp"
#include "edet/util.hpp"

namespace edet {

/// Subtoken-level model input. Positions [0, context_end) hold the context,
/// [context_end, prompt_end) the (cloze or filled) prompt, and
/// [prompt_end, size) the type-aware content.
struct EncodedInput {
  std::vector<int> subtoken_ids;
  std::vector<int> word_to_subtoken;  // context word -> its first subtoken position
  std::optional<int> mask_position;   // set iff built by the cloze prompt builder
  int context_end = 0;
  int prompt_end = 0;

  int size() const { return int(subtoken_ids.size()); }
};

struct EncoderOutput {
  Eigen::MatrixXd hidden;  // one row per subtoken position, dim m
  std::optional<Eigen::VectorXd> vocab_logits_at_mask;
};

/// Opaque forward-pass cache handed back to the encoder for backprop.
struct EncodeTrace {
  virtual ~EncodeTrace() = default;
};

class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual EncoderOutput encode(const EncodedInput& input) const = 0;

  /// Appends a new vocabulary token whose input embedding and LM-head row are
  /// the arithmetic mean of the constituents' at call time. Returns the
  /// existing index if the surface is already present.
  virtual int add_token(const std::string& surface, const std::vector<std::string>& init_from) = 0;

  virtual int dim() const = 0;
  virtual int max_seq_len() const = 0;
  virtual int vocab_size() const = 0;
  virtual std::optional<int> token_id(const std::string& surface) const = 0;
  virtual const std::string& token_surface(int id) const = 0;
  /// Lookup-only word tokenization; unknown pieces map to [UNK].
  virtual std::vector<int> tokenize_word(const std::string& word) const = 0;
  virtual int mask_id() const = 0;
  virtual int unk_id() const = 0;
  /// Extends the vocabulary from a word (no-op for fixed-vocabulary adapters).
  virtual void register_word(const std::string& /*word*/) {}
};

/// Encoders that expose parameters and backprop for joint training.
class TrainableEncoder : public Encoder {
 public:
  virtual std::vector<Param*> parameters() = 0;
  virtual EncoderOutput encode_traced(const EncodedInput& input,
                                      std::unique_ptr<EncodeTrace>& trace) const = 0;
  /// Accumulates parameter gradients given upstream gradients w.r.t. hidden
  /// states (one row per position) and, if present, the mask vocab logits.
  virtual void backward(const EncodedInput& input, const EncodeTrace& trace,
                        const Eigen::MatrixXd& d_hidden,
                        const Eigen::VectorXd* d_vocab_logits) = 0;
  virtual nlohmann::ordered_json state_to_json() const = 0;
};

// ---------------------------------------------------------------------------
// Toy encoder.
//
// Subtoken embeddings (dimension 32) are a fixed hash of the surface string.
// Each position's feature vector concatenates its own embedding, the previous
// position's embedding, the mean over the whole sequence and the mean over
// the prompt segments; without the pooled blocks the mask position could not
// see the context at all and the cloze task would be unlearnable. Two affine
// + tanh layers and a linear LM head are the trainable part.

constexpr int kToyEmbedDim = 32;
constexpr int kToyChunkLen = 8;

/// Strength of the fixed context-echo term in the toy LM head: tokens present
/// in the context get a boost at the mask, mirroring how a pretrained MLM
/// prefers contextually present words. Without it a frozen hashed-embedding
/// encoder would rank cloze candidates independently of the sentence.
constexpr double kToyContextEchoGain = 12.0;

class ToyEncoder final : public TrainableEncoder {
 public:
  struct Trace final : EncodeTrace {
    Eigen::MatrixXd features;  // 4*edim x p
    Eigen::MatrixXd h1, h2;    // m x p
  };

  ToyEncoder(int dim, int max_seq_len, std::uint64_t seed)
      : dim_(dim), max_seq_len_(max_seq_len), seed_(seed) {
    if (dim < 1 || max_seq_len < 4) throw ValidationError("ToyEncoder: bad dim/max_seq_len");
    const int fdim = 4 * kToyEmbedDim;
    Rng rng(seed ^ 0x7065726d757465ULL);
    a1_ = Param("encoder.a1", dim_, fdim);
    fill_uniform(a1_.value, rng, 1.0 / std::sqrt(double(fdim)));
    b1_ = Param("encoder.b1", dim_, 1);
    a2_ = Param("encoder.a2", dim_, dim_);
    fill_uniform(a2_.value, rng, 1.0 / std::sqrt(double(dim_)));
    b2_ = Param("encoder.b2", dim_, 1);
    lm_w_ = Param("encoder.lm_w", 0, dim_);
    lm_b_ = Param("encoder.lm_b", 0, 1);
    intern("[UNK]");
    intern("[MASK]");
  }

  // Encoder interface -------------------------------------------------------

  EncoderOutput encode(const EncodedInput& input) const override {
    Trace scratch;
    return run_forward(input, scratch);
  }

  EncoderOutput encode_traced(const EncodedInput& input,
                              std::unique_ptr<EncodeTrace>& trace) const override {
    auto t = std::make_unique<Trace>();
    EncoderOutput out = run_forward(input, *t);
    trace = std::move(t);
    return out;
  }

  int add_token(const std::string& surface, const std::vector<std::string>& init_from) override {
    const std::string key = lowercase(surface);
    if (auto it = vocab_.find(key); it != vocab_.end()) return it->second;
    if (init_from.empty()) throw ValidationError("add_token: empty init_from for '" + surface + "'");
    Eigen::VectorXd emb = Eigen::VectorXd::Zero(kToyEmbedDim);
    Eigen::VectorXd lmw = Eigen::VectorXd::Zero(dim_);
    double lmb = 0.0;
    for (const auto& src : init_from) {
      const auto id = token_id(src);
      if (!id) throw ValidationError("add_token: constituent '" + src + "' not in vocabulary");
      emb += embeddings_.row(*id).transpose();
      lmw += lm_w_.value.row(*id).transpose();
      lmb += lm_b_.value(*id, 0);
    }
    const double n = double(init_from.size());
    const int id = append_entry(key);
    embeddings_.row(id) = (emb / n).transpose();
    lm_w_.value.row(id) = (lmw / n).transpose();
    lm_b_.value(id, 0) = lmb / n;
    lm_w_.sync_grad_shape();
    lm_b_.sync_grad_shape();
    return id;
  }

  int dim() const override { return dim_; }
  int max_seq_len() const override { return max_seq_len_; }
  int vocab_size() const override { return int(surfaces_.size()); }

  std::optional<int> token_id(const std::string& surface) const override {
    auto it = vocab_.find(lowercase(surface));
    if (it == vocab_.end()) return std::nullopt;
    return it->second;
  }

  const std::string& token_surface(int id) const override { return surfaces_.at(std::size_t(id)); }

  std::vector<int> tokenize_word(const std::string& word) const override {
    std::vector<int> ids;
    for (const auto& piece : word_pieces(word)) {
      auto it = vocab_.find(piece);
      ids.push_back(it == vocab_.end() ? unk_id_ : it->second);
    }
    return ids;
  }

  int mask_id() const override { return mask_id_; }
  int unk_id() const override { return unk_id_; }

  void register_word(const std::string& word) override {
    for (const auto& piece : word_pieces(word)) intern(piece);
  }

  // TrainableEncoder interface ----------------------------------------------

  std::vector<Param*> parameters() override { return {&a1_, &b1_, &a2_, &b2_, &lm_w_, &lm_b_}; }

  void backward(const EncodedInput& input, const EncodeTrace& trace_base,
                const Eigen::MatrixXd& d_hidden, const Eigen::VectorXd* d_vocab_logits) override {
    const auto& trace = dynamic_cast<const Trace&>(trace_base);
    const int p = input.size();
    Eigen::MatrixXd d_h2 = d_hidden.transpose();  // m x p
    if (d_vocab_logits) {
      if (!input.mask_position) throw ValidationError("backward: vocab grad without mask");
      const int mp = *input.mask_position;
      lm_w_.grad.noalias() += *d_vocab_logits * trace.h2.col(mp).transpose();
      lm_b_.grad.col(0).noalias() += *d_vocab_logits;
      d_h2.col(mp).noalias() += lm_w_.value.transpose() * (*d_vocab_logits);
    }
    const Eigen::MatrixXd d_z2 =
        d_h2.array() * (1.0 - trace.h2.array().square());
    a2_.grad.noalias() += d_z2 * trace.h1.transpose();
    b2_.grad.col(0).noalias() += d_z2.rowwise().sum();
    const Eigen::MatrixXd d_h1 = a2_.value.transpose() * d_z2;
    const Eigen::MatrixXd d_z1 =
        d_h1.array() * (1.0 - trace.h1.array().square());
    a1_.grad.noalias() += d_z1 * trace.features.transpose();
    b1_.grad.col(0).noalias() += d_z1.rowwise().sum();
    (void)p;  // embeddings are fixed; nothing flows further down
  }

  nlohmann::ordered_json state_to_json() const override {
    nlohmann::ordered_json j;
    j["kind"] = "toy";
    j["dim"] = dim_;
    j["max_seq_len"] = max_seq_len_;
    j["seed"] = seed_;
    j["vocab"] = surfaces_;
    j["embeddings"] = matrix_to_json(embeddings_);
    j["a1"] = matrix_to_json(a1_.value);
    j["b1"] = matrix_to_json(b1_.value);
    j["a2"] = matrix_to_json(a2_.value);
    j["b2"] = matrix_to_json(b2_.value);
    j["lm_w"] = matrix_to_json(lm_w_.value);
    j["lm_b"] = matrix_to_json(lm_b_.value);
    return j;
  }

  static std::unique_ptr<ToyEncoder> from_json(const nlohmann::ordered_json& j) {
    if (j.at("kind").get<std::string>() != "toy")
      throw ValidationError("encoder state: unsupported kind '" +
                            j.at("kind").get<std::string>() + "'");
    auto enc = std::make_unique<ToyEncoder>(j.at("dim").get<int>(), j.at("max_seq_len").get<int>(),
                                            j.at("seed").get<std::uint64_t>());
    enc->surfaces_ = j.at("vocab").get<std::vector<std::string>>();
    enc->vocab_.clear();
    for (std::size_t i = 0; i < enc->surfaces_.size(); ++i)
      enc->vocab_[enc->surfaces_[i]] = int(i);
    enc->unk_id_ = enc->vocab_.at("[unk]");
    enc->mask_id_ = enc->vocab_.at("[mask]");
    enc->embeddings_ = matrix_from_json(j.at("embeddings"));
    enc->a1_.value = matrix_from_json(j.at("a1"));
    enc->b1_.value = matrix_from_json(j.at("b1"));
    enc->a2_.value = matrix_from_json(j.at("a2"));
    enc->b2_.value = matrix_from_json(j.at("b2"));
    enc->lm_w_.value = matrix_from_json(j.at("lm_w"));
    enc->lm_b_.value = matrix_from_json(j.at("lm_b"));
    for (Param* p : enc->parameters()) p->sync_grad_shape();
    return enc;
  }

 private:
  EncoderOutput run_forward(const EncodedInput& input, Trace& trace) const {
    const int p = input.size();
    if (p == 0) throw ValidationError("encode: empty input");
    if (p > max_seq_len_) throw ValidationError("encode: input exceeds max_seq_len");
    const int edim = kToyEmbedDim;
    Eigen::MatrixXd emb(edim, p);
    for (int i = 0; i < p; ++i) {
      const int id = input.subtoken_ids[std::size_t(i)];
      if (id < 0 || id >= vocab_size()) throw ValidationError("encode: subtoken id out of range");
      emb.col(i) = embeddings_.row(id).transpose();
    }
    const Eigen::VectorXd mean_all = emb.rowwise().mean();
    // the type-aware tail segment alone; strongest type-conditioning signal
    Eigen::VectorXd mean_tail = Eigen::VectorXd::Zero(edim);
    if (input.prompt_end < p) {
      mean_tail = emb.rightCols(p - input.prompt_end).rowwise().mean();
    }
    trace.features.resize(4 * edim, p);
    for (int i = 0; i < p; ++i) {
      trace.features.block(0, i, edim, 1) = emb.col(i);
      if (i > 0)
        trace.features.block(edim, i, edim, 1) = emb.col(i - 1);
      else
        trace.features.block(edim, i, edim, 1).setZero();
      trace.features.block(2 * edim, i, edim, 1) = mean_all;
      trace.features.block(3 * edim, i, edim, 1) = mean_tail;
    }
    trace.h1 = ((a1_.value * trace.features).colwise() + b1_.value.col(0)).array().tanh();
    trace.h2 = ((a2_.value * trace.h1).colwise() + b2_.value.col(0)).array().tanh();

    EncoderOutput out;
    out.hidden = trace.h2.transpose();
    if (input.mask_position) {
      const int mp = *input.mask_position;
      if (mp < 0 || mp >= p) throw ValidationError("encode: mask_position out of range");
      Eigen::VectorXd logits = lm_w_.value * trace.h2.col(mp) + lm_b_.value.col(0);
      if (input.context_end > 0) {
        // fixed echo term: no trainable parameter touches it, so backward
        // passes are unaffected
        const Eigen::VectorXd mean_ctx =
            emb.leftCols(input.context_end).rowwise().mean();
        logits.noalias() += kToyContextEchoGain * (embeddings_ * mean_ctx);
      }
      out.vocab_logits_at_mask = std::move(logits);
    }
    return out;
  }

  /// Deterministic subword split: exact vocabulary surfaces stay whole,
  /// longer words break into fixed-size chunks.
  std::vector<std::string> word_pieces(const std::string& word) const {
    const std::string w = lowercase(word);
    if (vocab_.count(w) || int(w.size()) <= kToyChunkLen) return {w};
    std::vector<std::string> pieces;
    for (std::size_t off = 0; off < w.size(); off += kToyChunkLen)
      pieces.push_back(w.substr(off, kToyChunkLen));
    return pieces;
  }

  int intern(const std::string& surface) {
    const std::string key = lowercase(surface);
    if (auto it = vocab_.find(key); it != vocab_.end()) return it->second;
    const int id = append_entry(key);
    // fixed hashed embedding; LM-head row hashed on a separate stream
    Rng e_rng(fnv1a(key) ^ seed_);
    for (int d = 0; d < kToyEmbedDim; ++d)
      embeddings_(id, d) = e_rng.next_normal() / std::sqrt(double(kToyEmbedDim));
    Rng h_rng(fnv1a("lm:" + key) ^ seed_);
    for (int d = 0; d < dim_; ++d)
      lm_w_.value(id, d) = h_rng.next_normal() / std::sqrt(double(dim_));
    lm_b_.value(id, 0) = 0.0;
    lm_w_.sync_grad_shape();
    lm_b_.sync_grad_shape();
    if (key == "[unk]") unk_id_ = id;
    if (key == "[mask]") mask_id_ = id;
    return id;
  }

  int append_entry(const std::string& key) {
    const int id = int(surfaces_.size());
    surfaces_.push_back(key);
    vocab_[key] = id;
    embeddings_.conservativeResize(id + 1, kToyEmbedDim);
    lm_w_.value.conservativeResize(id + 1, dim_);
    lm_b_.value.conservativeResize(id + 1, 1);
    return id;
  }

  int dim_;
  int max_seq_len_;
  std::uint64_t seed_;
  std::vector<std::string> surfaces_;
  std::map<std::string, int> vocab_;
  Eigen::MatrixXd embeddings_{0, kToyEmbedDim};  // fixed, never trained
  Param a1_, b1_, a2_, b2_;
  Param lm_w_, lm_b_;
  int unk_id_ = 0;
  int mask_id_ = 1;
};

// ---------------------------------------------------------------------------
// Shared input assembly with context-only truncation.

/// Builds subtoken ids for a word sequence via the encoder's tokenizer.
inline std::vector<std::vector<int>> tokenize_words(const Encoder& enc,
                                                    const std::vector<std::string>& words) {
  std::vector<std::vector<int>> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(enc.tokenize_word(w));
  return out;
}

/// Assembles {context | prompt | tail} into one EncodedInput. Prompt and tail
/// segments survive truncation intact; only trailing context words are
/// dropped (with a warning) when the total exceeds max_seq_len.
inline EncodedInput assemble_input(const Encoder& enc, const std::vector<std::string>& context_words,
                                   const std::vector<int>& prompt_ids,
                                   std::optional<int> mask_offset_in_prompt,
                                   const std::vector<int>& tail_ids) {
  const int budget = enc.max_seq_len();
  const int reserved = int(prompt_ids.size() + tail_ids.size());
  if (reserved > budget)
    throw ValidationError("prompt segments alone exceed max_seq_len (" +
                          std::to_string(reserved) + " > " + std::to_string(budget) + ")");
  auto word_ids = tokenize_words(enc, context_words);
  int kept_words = int(word_ids.size());
  int context_len = 0;
  for (const auto& ids : word_ids) context_len += int(ids.size());
  while (kept_words > 0 && context_len + reserved > budget) {
    --kept_words;
    context_len -= int(word_ids[std::size_t(kept_words)].size());
  }
  if (kept_words < int(word_ids.size()))
    warn("context truncated from " + std::to_string(word_ids.size()) + " to " +
         std::to_string(kept_words) + " words to fit max_seq_len");

  EncodedInput input;
  for (int w = 0; w < kept_words; ++w) {
    input.word_to_subtoken.push_back(int(input.subtoken_ids.size()));
    for (int id : word_ids[std::size_t(w)]) input.subtoken_ids.push_back(id);
  }
  input.context_end = int(input.subtoken_ids.size());
  if (mask_offset_in_prompt)
    input.mask_position = input.context_end + *mask_offset_in_prompt;
  for (int id : prompt_ids) input.subtoken_ids.push_back(id);
  input.prompt_end = int(input.subtoken_ids.size());
  for (int id : tail_ids) input.subtoken_ids.push_back(id);
  return input;
}

}  // namespace edet
