// Joint alternating training of the identification and localization heads
// over the shared encoder, plus prediction and checkpointing.
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "edet/aggregation.hpp"
#include "edet/core.hpp"
#include "edet/corpus.hpp"
#include "edet/crf.hpp"
#include "edet/encoder.hpp"
#include "edet/evaluation.hpp"
#include "edet/identification.hpp"
#include "edet/localization.hpp"
#include "edet/util.hpp"

namespace edet {

// ---------------------------------------------------------------------------
// Configuration. Defaults follow the few-shot recipe (batch 8, lr 2e-5,
// linear schedule, no warmup, 20 epochs); the toy runs override them.

struct RunConfig {
  std::string encoder = "toy";
  int encoder_dim = 64;
  int max_seq_len = 200;

  int batch_size = 8;
  double learning_rate = 2e-5;
  std::string schedule = "linear";
  double weight_decay = 1e-5;
  int warmup_steps = 0;
  int epochs = 20;
  double adam_epsilon = 1e-8;
  double grad_clip = 1.0;

  std::string prompt_template = kDefaultPromptTemplate;
  std::string loss = "threshold_ce";  // threshold_ce | margin
  double margin = 1.0;
  std::string aggregation = "avg";  // avg | max | logsumexp | wavg

  std::string prompt_mode = "verbalizer_plus_keywords";
  bool attention_enabled = true;
  bool constrained_decoding = true;
  bool prompt_attention_keys = true;
  int max_keywords = 3;
  double negative_pair_ratio = 1.0;  // all-O localization pairs per positive
  int top_n_verbalizers = 3;

  std::uint64_t seed = 42;
  unsigned threads = 1;

  void validate() const {
    if (encoder != "toy") throw ValidationError("config: unsupported encoder '" + encoder + "'");
    if (encoder_dim < 1) throw ValidationError("config: encoder_dim must be positive");
    if (max_seq_len < 8) throw ValidationError("config: max_seq_len too small");
    if (batch_size < 1) throw ValidationError("config: batch_size must be positive");
    if (learning_rate <= 0) throw ValidationError("config: learning_rate must be positive");
    if (schedule != "linear" && schedule != "constant")
      throw ValidationError("config: unknown schedule '" + schedule + "'");
    if (weight_decay < 0) throw ValidationError("config: weight_decay must be >= 0");
    if (warmup_steps < 0) throw ValidationError("config: warmup_steps must be >= 0");
    if (epochs < 0) throw ValidationError("config: epochs must be >= 0");
    if (adam_epsilon <= 0) throw ValidationError("config: adam_epsilon must be positive");
    if (grad_clip <= 0) throw ValidationError("config: grad_clip must be positive");
    if (margin <= 0) throw ValidationError("config: margin must be positive");
    if (negative_pair_ratio < 0) throw ValidationError("config: negative_pair_ratio must be >= 0");
    if (max_keywords < 0) throw ValidationError("config: max_keywords must be >= 0");
    if (top_n_verbalizers < 1) throw ValidationError("config: top_n_verbalizers must be >= 1");
    if (threads < 1) throw ValidationError("config: threads must be >= 1");
    ClozePrompt check(prompt_template);
    aggregation_from_string(aggregation);
    prompt_mode_from_string(prompt_mode);
    IdentificationLossConfig::kind_from_string(loss);
    (void)check;
  }

  IdentificationLossConfig loss_config() const {
    IdentificationLossConfig lc;
    lc.kind = IdentificationLossConfig::kind_from_string(loss);
    lc.margin = margin;
    return lc;
  }

  AggregationKind aggregation_kind() const { return aggregation_from_string(aggregation); }

  LocalizationOptions localization_options() const {
    LocalizationOptions o;
    o.prompt_mode = prompt_mode_from_string(prompt_mode);
    o.constrained = constrained_decoding;
    o.prompt_attention_keys = prompt_attention_keys;
    o.max_keywords = max_keywords;
    return o;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["encoder"] = encoder;
    j["encoder_dim"] = encoder_dim;
    j["max_seq_len"] = max_seq_len;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["schedule"] = schedule;
    j["weight_decay"] = weight_decay;
    j["warmup_steps"] = warmup_steps;
    j["epochs"] = epochs;
    j["adam_epsilon"] = adam_epsilon;
    j["grad_clip"] = grad_clip;
    j["prompt_template"] = prompt_template;
    j["loss"] = loss;
    j["margin"] = margin;
    j["aggregation"] = aggregation;
    j["prompt_mode"] = prompt_mode;
    j["attention_enabled"] = attention_enabled;
    j["constrained_decoding"] = constrained_decoding;
    j["prompt_attention_keys"] = prompt_attention_keys;
    j["max_keywords"] = max_keywords;
    j["negative_pair_ratio"] = negative_pair_ratio;
    j["top_n_verbalizers"] = top_n_verbalizers;
    j["seed"] = seed;
    j["threads"] = threads;
    return j;
  }

  static RunConfig from_json(const nlohmann::ordered_json& j) {
    RunConfig c;
    auto get = [&j](const char* key, auto& slot) {
      if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
    };
    get("encoder", c.encoder);
    get("encoder_dim", c.encoder_dim);
    get("max_seq_len", c.max_seq_len);
    get("batch_size", c.batch_size);
    get("learning_rate", c.learning_rate);
    get("schedule", c.schedule);
    get("weight_decay", c.weight_decay);
    get("warmup_steps", c.warmup_steps);
    get("epochs", c.epochs);
    get("adam_epsilon", c.adam_epsilon);
    get("grad_clip", c.grad_clip);
    get("prompt_template", c.prompt_template);
    get("loss", c.loss);
    get("margin", c.margin);
    get("aggregation", c.aggregation);
    get("prompt_mode", c.prompt_mode);
    get("attention_enabled", c.attention_enabled);
    get("constrained_decoding", c.constrained_decoding);
    get("prompt_attention_keys", c.prompt_attention_keys);
    get("max_keywords", c.max_keywords);
    get("negative_pair_ratio", c.negative_pair_ratio);
    get("top_n_verbalizers", c.top_n_verbalizers);
    get("seed", c.seed);
    get("threads", c.threads);
    for (const auto& [key, _] : j.items()) {
      static const std::set<std::string> known = {
          "encoder", "encoder_dim", "max_seq_len", "batch_size", "learning_rate", "schedule",
          "weight_decay", "warmup_steps", "epochs", "adam_epsilon", "grad_clip", "prompt_template",
          "loss", "margin", "aggregation", "prompt_mode", "attention_enabled",
          "constrained_decoding", "prompt_attention_keys", "max_keywords", "negative_pair_ratio",
          "top_n_verbalizers", "seed", "threads"};
      if (!known.count(key)) throw ValidationError("config: unknown key '" + key + "'");
    }
    c.validate();
    return c;
  }
};

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file: " + path);
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config parse error in " + path + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Model

struct Model {
  RunConfig config;
  Ontology ontology;
  std::unique_ptr<TrainableEncoder> encoder;
  CrfParameters crf;
  VerbalizerIndex verbalizer_index;
  std::map<std::string, Param> wavg_theta;  // per type, iff aggregation == wavg
  ClozePrompt prompt;

  std::vector<Param*> parameters() {
    std::vector<Param*> ps = encoder->parameters();
    for (Param* p : crf.parameters()) ps.push_back(p);
    for (auto& [_, p] : wavg_theta) ps.push_back(&p);
    return ps;
  }

  const std::map<std::string, Eigen::VectorXd> theta_values() const {
    std::map<std::string, Eigen::VectorXd> out;
    for (const auto& [t, p] : wavg_theta) out[t] = p.value.col(0);
    return out;
  }
};

/// Builds the closed toy vocabulary from the training sentences, the prompt
/// and the ontology content, then compiles the verbalizer index (creating
/// composite tokens as needed) and initializes the CRF head.
inline Model setup_model(const RunConfig& config, const Ontology& ontology,
                         const std::vector<AnnotatedSentence>& train) {
  config.validate();
  ontology.validate();
  Model model;
  model.config = config;
  model.ontology = ontology;
  model.prompt = ClozePrompt(config.prompt_template);
  auto enc = std::make_unique<ToyEncoder>(config.encoder_dim, config.max_seq_len, config.seed);

  for (const auto& w : model.prompt.words())
    if (w != kMaskPlaceholder) enc->register_word(w);
  for (const auto& s : train)
    for (const auto& tok : s.sentence.tokens) enc->register_word(tok);
  enc->register_word(ontology.null_verbalizer);
  for (const auto& t : ontology.types) {
    for (const auto& w : name_tokens(t.name)) enc->register_word(w);
    for (const auto& v : t.verbalizers)
      for (const auto& w : name_tokens(v)) enc->register_word(w);
    if (t.definition)
      for (const auto& w : split_words(*t.definition)) enc->register_word(w);
    for (const auto& k : t.keywords)
      for (const auto& w : split_words(k)) enc->register_word(w);
  }

  model.verbalizer_index = VerbalizerIndex::build(ontology, *enc);
  model.encoder = std::move(enc);
  model.crf = CrfParameters(config.encoder_dim, config.seed, config.attention_enabled);
  if (config.aggregation_kind() == AggregationKind::WeightedAvg) {
    for (const auto& t : ontology.types)
      model.wavg_theta.emplace(t.name,
                               Param("agg." + t.name, Eigen::Index(t.verbalizers.size()), 1));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Task batching

struct LocPair {
  int sentence_idx = 0;
  std::string type;
  std::vector<BioTag> tags;
  bool positive = true;
};

enum class TaskKind { Identification, Localization };

struct TaskBatch {
  TaskKind kind = TaskKind::Identification;
  std::vector<int> id_instances;      // sentence indices
  std::vector<LocPair> loc_instances;
};

inline std::vector<BioTag> gold_tags_for_type(const AnnotatedSentence& s, const std::string& type) {
  std::vector<Span> spans;
  for (const auto& m : s.mentions)
    if (m.event_type == type) spans.emplace_back(m.trigger_start, m.trigger_end);
  return spans_to_bio(spans, int(s.sentence.tokens.size()));
}

/// Builds one epoch of strictly alternating task batches. The shorter stream
/// is reshuffled and recycled until the longer one is exhausted. Deterministic
/// under (train, config, seed, epoch).
inline std::vector<TaskBatch> make_task_batches(const std::vector<AnnotatedSentence>& train,
                                                const Ontology& ontology, const RunConfig& config,
                                                std::uint64_t seed, int epoch) {
  if (train.empty()) throw ValidationError("make_task_batches: empty training split");
  Rng rng(seed ^ (0x6261746368ULL + std::uint64_t(epoch) * 0x9e3779b97f4a7c15ULL));

  std::vector<int> id_instances(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) id_instances[i] = int(i);

  std::vector<LocPair> positives;
  for (std::size_t i = 0; i < train.size(); ++i)
    for (const auto& t : gold_type_set(train[i]))
      positives.push_back({int(i), t, gold_tags_for_type(train[i], t), true});

  // negative pairs: (sentence, absent type) with an all-O target
  std::vector<LocPair> negatives;
  const std::size_t want_neg =
      std::size_t(std::llround(config.negative_pair_ratio * double(positives.size())));
  if (want_neg > 0) {
    std::vector<std::pair<int, std::string>> candidates;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto present = gold_type_set(train[i]);
      for (const auto& t : ontology.type_names())
        if (!present.count(t)) candidates.emplace_back(int(i), t);
    }
    shuffle(candidates, rng);
    for (std::size_t k = 0; k < candidates.size() && negatives.size() < want_neg; ++k) {
      const auto& [idx, type] = candidates[k];
      negatives.push_back(
          {idx, type, std::vector<BioTag>(train[std::size_t(idx)].sentence.tokens.size(), BioTag::O),
           false});
    }
  }

  std::vector<LocPair> loc_instances = positives;
  loc_instances.insert(loc_instances.end(), negatives.begin(), negatives.end());

  shuffle(id_instances, rng);
  shuffle(loc_instances, rng);

  const int bs = config.batch_size;
  auto n_batches = [bs](std::size_t n) { return (n + std::size_t(bs) - 1) / std::size_t(bs); };
  const std::size_t id_nb = n_batches(id_instances.size());
  const std::size_t loc_nb = n_batches(loc_instances.size());

  if (loc_instances.empty())
    warn("make_task_batches: no localization targets exist; identification batches only");

  std::vector<TaskBatch> batches;
  const std::size_t rounds = std::max(id_nb, loc_nb);
  std::size_t id_cursor = 0, loc_cursor = 0;
  for (std::size_t r = 0; r < rounds; ++r) {
    if (!id_instances.empty()) {
      if (id_cursor >= id_instances.size()) {
        shuffle(id_instances, rng);  // recycle the shorter stream
        id_cursor = 0;
      }
      TaskBatch b;
      b.kind = TaskKind::Identification;
      for (int k = 0; k < bs && id_cursor < id_instances.size(); ++k)
        b.id_instances.push_back(id_instances[id_cursor++]);
      batches.push_back(std::move(b));
    }
    if (!loc_instances.empty()) {
      if (loc_cursor >= loc_instances.size()) {
        shuffle(loc_instances, rng);
        loc_cursor = 0;
      }
      TaskBatch b;
      b.kind = TaskKind::Localization;
      for (int k = 0; k < bs && loc_cursor < loc_instances.size(); ++k)
        b.loc_instances.push_back(loc_instances[loc_cursor++]);
      batches.push_back(std::move(b));
    }
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Optimizer: Adam with decoupled weight decay and a linear warmup/decay
// schedule.

class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8, double weight_decay = 0.0)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay) {}

  void step(const std::vector<Param*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (Param* p : params) {
      State& s = state_[p->name];
      if (s.m.rows() != p->value.rows() || s.m.cols() != p->value.cols()) {
        s.m = Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols());
        s.v = Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols());
      }
      s.m = beta1_ * s.m + (1.0 - beta1_) * p->grad;
      s.v = beta2_ * s.v + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
      const Eigen::MatrixXd m_hat = s.m / bc1;
      const Eigen::MatrixXd v_hat = s.v / bc2;
      p->value -= lr * (m_hat.array() / (v_hat.array().sqrt() + epsilon_)).matrix();
      if (weight_decay_ > 0) p->value -= lr * weight_decay_ * p->value;
    }
  }

 private:
  struct State {
    Eigen::MatrixXd m, v;
  };
  double beta1_, beta2_, epsilon_, weight_decay_;
  long t_ = 0;
  std::map<std::string, State> state_;
};

inline double scheduled_lr(const RunConfig& config, long step, long total_steps) {
  if (config.schedule == "constant") return config.learning_rate;
  const long warmup = config.warmup_steps;
  if (warmup > 0 && step < warmup)
    return config.learning_rate * double(step + 1) / double(warmup);
  if (total_steps <= warmup) return config.learning_rate;
  const double frac = double(total_steps - step) / double(total_steps - warmup);
  return config.learning_rate * std::max(0.0, frac);
}

inline void clip_gradients(const std::vector<Param*>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm > max_norm && norm > 0) {
    const double scale = max_norm / norm;
    for (Param* p : params) p->grad *= scale;
  }
}

// ---------------------------------------------------------------------------
// Forward/backward per instance

namespace detail {

/// Identification loss + gradient for one sentence; accumulates into the
/// encoder and (for wavg) the weight-logit parameters.
inline double id_step(Model& model, const AnnotatedSentence& s, bool with_grad) {
  const EncodedInput input = build_cloze_input(s.sentence, model.prompt, *model.encoder);
  std::unique_ptr<EncodeTrace> trace;
  const EncoderOutput out = with_grad ? model.encoder->encode_traced(input, trace)
                                      : model.encoder->encode(input);
  const AggregationKind kind = model.config.aggregation_kind();
  const auto theta = model.theta_values();
  const auto* theta_ptr = kind == AggregationKind::WeightedAvg ? &theta : nullptr;
  const TypeScores scores = score_event_types(out, model.verbalizer_index, kind, theta_ptr);
  const std::set<std::string> gold = gold_type_set(s);

  TypeScores d_scores;
  const auto lc = model.config.loss_config();
  double loss = 0;
  if (lc.kind == IdentificationLossConfig::Kind::ThresholdCE)
    loss = threshold_ce_loss(scores, gold, with_grad ? &d_scores : nullptr);
  else
    loss = margin_loss(scores, gold, lc.margin, with_grad ? &d_scores : nullptr);
  if (!with_grad) return loss;

  Eigen::VectorXd d_vocab = Eigen::VectorXd::Zero(out.vocab_logits_at_mask->size());
  std::map<std::string, Eigen::VectorXd> d_theta;
  scatter_type_score_grads(out, model.verbalizer_index, kind, theta_ptr, d_scores, d_vocab,
                           &d_theta);
  for (const auto& [type, g] : d_theta) model.wavg_theta.at(type).grad.col(0) += g;
  const Eigen::MatrixXd d_hidden = Eigen::MatrixXd::Zero(input.size(), model.encoder->dim());
  model.encoder->backward(input, *trace, d_hidden, &d_vocab);
  return loss;
}

/// Localization CRF NLL + gradient for one (sentence, type) pair.
inline double loc_step(Model& model, const AnnotatedSentence& s, const LocPair& pair,
                       bool with_grad) {
  const auto& opts = model.config.localization_options();
  const EventTypeSpec& spec = model.ontology.type(pair.type);
  const EncodedInput input = build_localization_input(s.sentence, spec, model.prompt,
                                                      opts.prompt_mode, *model.encoder,
                                                      opts.max_keywords);
  const std::size_t n = input.word_to_subtoken.size();
  if (n == 0) {
    warn("loc_step: sentence '" + s.sentence.id + "' fully truncated, skipped");
    return 0.0;
  }
  std::vector<BioTag> gold = pair.tags;
  if (gold.size() > n) gold.resize(n);  // context truncation drops trailing tags

  std::unique_ptr<EncodeTrace> trace;
  const EncoderOutput out = with_grad ? model.encoder->encode_traced(input, trace)
                                      : model.encoder->encode(input);
  const Eigen::MatrixXd h_tagged = gather_tagged_hidden(out.hidden, input);
  const bool full_keys = opts.prompt_attention_keys;
  const Eigen::MatrixXd& h_keys = full_keys ? out.hidden : h_tagged;

  EmissionTrace etrace;
  const Eigen::MatrixXd emissions = emission_scores(h_tagged, h_keys, model.crf, &etrace);
  CrfGradients grads;
  const double nll = crf_nll(emissions, model.crf, gold, opts.constrained,
                             with_grad ? &grads : nullptr);
  if (!with_grad) return nll;

  model.crf.transitions.grad += grads.d_transitions;
  model.crf.start.grad.col(0) += grads.d_start;
  model.crf.end.grad.col(0) += grads.d_end;

  Eigen::MatrixXd d_hq, d_hk;
  emission_backward(grads.d_emissions, h_tagged, h_keys, etrace, model.crf, d_hq, d_hk);

  Eigen::MatrixXd d_hidden = Eigen::MatrixXd::Zero(input.size(), model.encoder->dim());
  for (std::size_t w = 0; w < n; ++w)
    d_hidden.row(input.word_to_subtoken[w]) += d_hq.row(Eigen::Index(w));
  if (full_keys) {
    d_hidden += d_hk;
  } else {
    for (std::size_t w = 0; w < n; ++w)
      d_hidden.row(input.word_to_subtoken[w]) += d_hk.row(Eigen::Index(w));
  }
  model.encoder->backward(input, *trace, d_hidden, nullptr);
  return nll;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Prediction

enum class PredictionMode { TwoStage, Enumerate };

inline PredictionMode prediction_mode_from_string(const std::string& s) {
  if (s == "two_stage") return PredictionMode::TwoStage;
  if (s == "enumerate") return PredictionMode::Enumerate;
  throw ValidationError("unknown prediction mode: " + s);
}

struct PredictionResult {
  std::vector<AnnotatedSentence> sentences;
  std::map<std::string, std::set<std::string>> type_sets;  // stage-1 output per sentence id
};

/// Two-stage: decode the identified type set, then localize each predicted
/// type. Enumerate: localize every ontology type and keep nonempty results.
inline PredictionResult predict(const std::vector<Sentence>& sentences, const Model& model,
                                PredictionMode mode, unsigned threads = 1) {
  const auto opts = model.config.localization_options();
  const AggregationKind kind = model.config.aggregation_kind();
  const auto theta = model.theta_values();
  const auto* theta_ptr = kind == AggregationKind::WeightedAvg ? &theta : nullptr;

  PredictionResult result;
  result.sentences.resize(sentences.size());
  std::vector<std::set<std::string>> sets(sentences.size());

  parallel_for(sentences.size(), threads, [&](std::size_t i) {
    const Sentence& sent = sentences[i];
    std::set<std::string> predicted_types;
    if (mode == PredictionMode::TwoStage) {
      const EncodedInput input = build_cloze_input(sent, model.prompt, *model.encoder);
      const EncoderOutput out = model.encoder->encode(input);
      const TypeScores scores = score_event_types(out, model.verbalizer_index, kind, theta_ptr);
      predicted_types = decode_identification(scores);
    } else {
      for (const auto& t : model.ontology.types) predicted_types.insert(t.name);
    }
    AnnotatedSentence as;
    as.sentence = sent;
    std::set<std::string> localized_types;
    for (const auto& type : predicted_types) {
      const auto mentions =
          localize(sent, model.ontology.type(type), *model.encoder, model.crf, model.prompt, opts);
      for (const auto& m : mentions) as.mentions.push_back(m);
      if (!mentions.empty()) localized_types.insert(type);
    }
    as.mentions = dedup_mentions(as.mentions);
    std::sort(as.mentions.begin(), as.mentions.end());
    result.sentences[i] = std::move(as);
    sets[i] = mode == PredictionMode::TwoStage ? predicted_types : localized_types;
  });
  for (std::size_t i = 0; i < sentences.size(); ++i)
    result.type_sets[sentences[i].id] = std::move(sets[i]);
  return result;
}

inline std::vector<Sentence> bare_sentences(const std::vector<AnnotatedSentence>& xs) {
  std::vector<Sentence> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(x.sentence);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochStats {
  int epoch = 0;
  double id_loss = 0;
  double loc_loss = 0;
  double dev_mention_f1 = -1;  // -1 when no dev split was given
  double dev_identification_f1 = -1;
};

struct TrainResult {
  Model model;
  std::vector<EpochStats> history;
};

inline TrainResult train(const FewShotSplit& split, const RunConfig& config,
                         const Ontology& ontology,
                         const std::vector<AnnotatedSentence>* dev = nullptr) {
  TrainResult result;
  result.model = setup_model(config, ontology, split.train);
  Model& model = result.model;
  if (split.train.empty()) throw ValidationError("train: empty training split");

  const auto params = model.parameters();
  AdamW optimizer(0.9, 0.999, config.adam_epsilon, config.weight_decay);

  const long batches_per_epoch =
      long(make_task_batches(split.train, ontology, config, config.seed, 0).size());
  const long total_steps = long(config.epochs) * batches_per_epoch;

  long global_step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto batches = make_task_batches(split.train, ontology, config, config.seed, epoch);
    double id_sum = 0, loc_sum = 0;
    long id_batches = 0, loc_batches = 0;
    for (const auto& batch : batches) {
      for (Param* p : params) p->zero_grad();
      double loss = 0;
      int count = 0;
      if (batch.kind == TaskKind::Identification) {
        for (int idx : batch.id_instances) {
          loss += detail::id_step(model, split.train[std::size_t(idx)], true);
          ++count;
        }
      } else {
        for (const auto& pair : batch.loc_instances) {
          loss += detail::loc_step(model, split.train[std::size_t(pair.sentence_idx)], pair, true);
          ++count;
        }
      }
      if (count == 0) continue;
      loss /= double(count);
      if (!std::isfinite(loss))
        throw RuntimeFailure("training diverged: non-finite loss at batch " +
                             std::to_string(global_step) + " (epoch " + std::to_string(epoch) +
                             ")");
      for (Param* p : params) p->grad /= double(count);
      clip_gradients(params, config.grad_clip);
      optimizer.step(params, scheduled_lr(config, global_step, total_steps));
      ++global_step;
      if (batch.kind == TaskKind::Identification) {
        id_sum += loss;
        ++id_batches;
      } else {
        loc_sum += loss;
        ++loc_batches;
      }
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.id_loss = id_batches ? id_sum / double(id_batches) : 0;
    stats.loc_loss = loc_batches ? loc_sum / double(loc_batches) : 0;
    if (dev && !dev->empty()) {
      const auto pred = predict(bare_sentences(*dev), model, PredictionMode::TwoStage,
                                config.threads);
      stats.dev_mention_f1 = score_mentions(pred.sentences, *dev).overall.f1;
      stats.dev_identification_f1 =
          score_identification(pred.type_sets, type_sets_of(*dev)).overall.f1;
    }
    result.history.push_back(stats);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpointing: directory with {config.json, encoder.json, crf.json,
// ontology.json}. Doubles round-trip bit-exactly through the JSON writer.

inline void save_model(const std::string& dir, const Model& model) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create checkpoint directory: " + dir);
  auto write = [&dir](const std::string& name, const nlohmann::ordered_json& j) {
    const std::string path = dir + "/" + name;
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write checkpoint file: " + path);
    out << j.dump(2) << "\n";
  };
  write("config.json", model.config.to_json());
  write("ontology.json", ontology_to_json(model.ontology));
  write("crf.json", model.crf.to_json());
  nlohmann::ordered_json enc;
  enc["state"] = model.encoder->state_to_json();
  if (!model.wavg_theta.empty()) {
    nlohmann::ordered_json th;
    for (const auto& [type, p] : model.wavg_theta) th[type] = matrix_to_json(p.value);
    enc["aggregation_weights"] = th;
  }
  write("encoder.json", enc);
}

inline Model load_model(const std::string& dir) {
  auto read = [&dir](const std::string& name) {
    const std::string path = dir + "/" + name;
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open checkpoint file: " + path);
    nlohmann::ordered_json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("checkpoint parse error in " + path + ": " + e.what());
    }
    return j;
  };
  Model model;
  model.config = RunConfig::from_json(read("config.json"));
  model.ontology = parse_ontology_json(read("ontology.json"));
  model.crf = CrfParameters::from_json(read("crf.json"));
  const auto enc = read("encoder.json");
  model.encoder = ToyEncoder::from_json(enc.at("state"));
  model.prompt = ClozePrompt(model.config.prompt_template);
  model.verbalizer_index = VerbalizerIndex::build(model.ontology, *model.encoder);
  if (enc.contains("aggregation_weights")) {
    for (const auto& [type, j] : enc.at("aggregation_weights").items()) {
      Param p("agg." + type, 0, 0);
      p.value = matrix_from_json(j);
      p.sync_grad_shape();
      model.wavg_theta.emplace(type, std::move(p));
    }
  }
  return model;
}

}  // namespace edet
