// Attention-enhanced 3-tag linear-chain CRF for type-agnostic trigger
// localization: emission scores fuse each token's own projection with an
// attention-weighted sum over all tokens, transitions and boundary scores
// complete the chain, and the forward algorithm / Viterbi run in log space.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "edet/core.hpp"
#include "edet/param.hpp"
#include "edet/util.hpp"

namespace edet {

/// Effective -inf for structural masking; large enough to zero out a path,
/// small enough to keep log-sum-exp arithmetic finite.
constexpr double kMaskedScore = -1e30;

struct CrfParameters {
  Param w_l;          // 3 x m, per-token projection
  Param w_v;          // 3 x m, attended projection
  Param w_q, w_k;     // m x m, attention query/key maps
  Param transitions;  // 3 x 3, [from][to]
  Param start, end;   // 3 x 1 boundary scores
  bool attention_enabled = true;

  CrfParameters() = default;

  CrfParameters(int m, std::uint64_t seed, bool attention = true) : attention_enabled(attention) {
    Rng rng(seed ^ 0x63726600ULL);
    w_l = Param("crf.w_l", kNumTags, m);
    fill_uniform(w_l.value, rng, 1.0 / std::sqrt(double(m)));
    w_v = Param("crf.w_v", kNumTags, m);
    fill_uniform(w_v.value, rng, 1.0 / std::sqrt(double(m)));
    w_q = Param("crf.w_q", m, m);
    fill_uniform(w_q.value, rng, 1.0 / std::sqrt(double(m)));
    w_k = Param("crf.w_k", m, m);
    fill_uniform(w_k.value, rng, 1.0 / std::sqrt(double(m)));
    transitions = Param("crf.transitions", kNumTags, kNumTags);
    start = Param("crf.start", kNumTags, 1);
    end = Param("crf.end", kNumTags, 1);
  }

  int dim() const { return int(w_l.value.cols()); }

  std::vector<Param*> parameters() {
    std::vector<Param*> ps{&w_l, &transitions, &start, &end};
    if (attention_enabled) {
      ps.push_back(&w_v);
      ps.push_back(&w_q);
      ps.push_back(&w_k);
    }
    return ps;
  }

  nlohmann::ordered_json to_json() const;
  static CrfParameters from_json(const nlohmann::ordered_json& j);
};

// ---------------------------------------------------------------------------
// Attention + emissions

/// Cached forward quantities for the emission backward pass.
struct EmissionTrace {
  Eigen::MatrixXd queries;  // n_q x m
  Eigen::MatrixXd keys;     // n_k x m
  Eigen::MatrixXd alpha;    // n_q x n_k
  Eigen::MatrixXd values;   // n_k x 3  (W_v h_j)
};

/// Row-stochastic attention weights between query positions and key
/// positions: alpha_ij = softmax_j((W_q h_i)^T (W_k h_j) / sqrt(m)).
inline Eigen::MatrixXd attention_weights(const Eigen::MatrixXd& hidden_q,
                                         const Eigen::MatrixXd& hidden_k,
                                         const CrfParameters& params,
                                         EmissionTrace* trace = nullptr) {
  const double scale = 1.0 / std::sqrt(double(params.dim()));
  const Eigen::MatrixXd q = hidden_q * params.w_q.value.transpose();  // n_q x m
  const Eigen::MatrixXd k = hidden_k * params.w_k.value.transpose();  // n_k x m
  Eigen::MatrixXd scores = (q * k.transpose()) * scale;               // n_q x n_k
  Eigen::MatrixXd alpha(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double m = scores.row(i).maxCoeff();
    Eigen::ArrayXd e = (scores.row(i).array() - m).exp();
    alpha.row(i) = e / e.sum();
  }
  if (trace) {
    trace->queries = q;
    trace->keys = k;
    trace->alpha = alpha;
  }
  return alpha;
}

inline Eigen::MatrixXd attention_weights(const Eigen::MatrixXd& hidden,
                                         const CrfParameters& params) {
  return attention_weights(hidden, hidden, params);
}

/// Emission table phi over query positions: phi_i = W_l h_i + sum_j alpha_ij W_v h_j.
/// With attention disabled the attended term is inert and phi_i = W_l h_i.
/// hidden_q holds the tagged positions (first subtokens of context words);
/// hidden_k the attention key positions.
inline Eigen::MatrixXd emission_scores(const Eigen::MatrixXd& hidden_q,
                                       const Eigen::MatrixXd& hidden_k,
                                       const CrfParameters& params,
                                       EmissionTrace* trace = nullptr) {
  Eigen::MatrixXd phi = hidden_q * params.w_l.value.transpose();  // n_q x 3
  if (!params.attention_enabled) return phi;
  EmissionTrace local;
  EmissionTrace& tr = trace ? *trace : local;
  attention_weights(hidden_q, hidden_k, params, &tr);
  tr.values = hidden_k * params.w_v.value.transpose();  // n_k x 3
  phi.noalias() += tr.alpha * tr.values;
  return phi;
}

inline Eigen::MatrixXd emission_scores(const Eigen::MatrixXd& hidden,
                                       const CrfParameters& params) {
  return emission_scores(hidden, hidden, params);
}

/// Backward through emission_scores. d_phi is n_q x 3; accumulates parameter
/// gradients and returns gradients w.r.t. hidden_q / hidden_k.
inline void emission_backward(const Eigen::MatrixXd& d_phi, const Eigen::MatrixXd& hidden_q,
                              const Eigen::MatrixXd& hidden_k, const EmissionTrace& trace,
                              CrfParameters& params, Eigen::MatrixXd& d_hidden_q,
                              Eigen::MatrixXd& d_hidden_k) {
  d_hidden_q = Eigen::MatrixXd::Zero(hidden_q.rows(), hidden_q.cols());
  d_hidden_k = Eigen::MatrixXd::Zero(hidden_k.rows(), hidden_k.cols());
  params.w_l.grad.noalias() += d_phi.transpose() * hidden_q;
  d_hidden_q.noalias() += d_phi * params.w_l.value;
  if (!params.attention_enabled) return;

  // attended term: phi += alpha * values
  const Eigen::MatrixXd d_values = trace.alpha.transpose() * d_phi;  // n_k x 3
  params.w_v.grad.noalias() += d_values.transpose() * hidden_k;
  d_hidden_k.noalias() += d_values * params.w_v.value;
  const Eigen::MatrixXd d_alpha = d_phi * trace.values.transpose();  // n_q x n_k

  // softmax rows
  Eigen::MatrixXd d_scores(d_alpha.rows(), d_alpha.cols());
  for (Eigen::Index i = 0; i < d_alpha.rows(); ++i) {
    const double dot = trace.alpha.row(i).dot(d_alpha.row(i));
    d_scores.row(i) =
        trace.alpha.row(i).array() * (d_alpha.row(i).array() - dot);
  }
  const double scale = 1.0 / std::sqrt(double(params.dim()));
  const Eigen::MatrixXd d_q = d_scores * trace.keys * scale;              // n_q x m
  const Eigen::MatrixXd d_k = d_scores.transpose() * trace.queries * scale;  // n_k x m
  params.w_q.grad.noalias() += d_q.transpose() * hidden_q;
  d_hidden_q.noalias() += d_q * params.w_q.value;
  params.w_k.grad.noalias() += d_k.transpose() * hidden_k;
  d_hidden_k.noalias() += d_k * params.w_k.value;
}

// ---------------------------------------------------------------------------
// Chain scoring

/// Transition score with optional structural masking (O->I forbidden).
inline double transition_score(const CrfParameters& params, int from, int to, bool constrained) {
  if (constrained && from == int(BioTag::O) && to == int(BioTag::I)) return kMaskedScore;
  return params.transitions.value(from, to);
}

/// Start score with optional structural masking (initial I forbidden).
inline double start_score(const CrfParameters& params, int tag, bool constrained) {
  if (constrained && tag == int(BioTag::I)) return kMaskedScore;
  return params.start.value(tag, 0);
}

inline void validate_gold_tags(const std::vector<BioTag>& tags, bool constrained) {
  if (tags.empty()) throw ValidationError("crf: empty tag sequence");
  if (!constrained) return;
  if (tags.front() == BioTag::I) throw ValidationError("crf: gold sequence starts with I");
  for (std::size_t i = 1; i < tags.size(); ++i)
    if (tags[i] == BioTag::I && tags[i - 1] == BioTag::O)
      throw ValidationError("crf: gold sequence has O->I at position " + std::to_string(i));
}

/// Unnormalized log score of one tag sequence.
inline double sequence_score(const Eigen::MatrixXd& emissions, const CrfParameters& params,
                             const std::vector<BioTag>& tags, bool constrained) {
  const int n = int(emissions.rows());
  double s = start_score(params, int(tags[0]), constrained) + emissions(0, int(tags[0]));
  for (int i = 1; i < n; ++i)
    s += transition_score(params, int(tags[std::size_t(i - 1)]), int(tags[std::size_t(i)]), constrained) +
         emissions(i, int(tags[std::size_t(i)]));
  s += params.end.value(int(tags[std::size_t(n - 1)]), 0);
  return s;
}

/// log Z via the forward algorithm in log space.
inline double crf_log_partition(const Eigen::MatrixXd& emissions, const CrfParameters& params,
                                bool constrained = true) {
  const int n = int(emissions.rows());
  if (n < 1) throw ValidationError("crf: empty emission table");
  Eigen::Vector3d a;
  for (int t = 0; t < kNumTags; ++t) a(t) = start_score(params, t, constrained) + emissions(0, t);
  for (int i = 1; i < n; ++i) {
    Eigen::Vector3d next;
    for (int t = 0; t < kNumTags; ++t) {
      double acc = -std::numeric_limits<double>::infinity();
      for (int s = 0; s < kNumTags; ++s)
        acc = log_add_exp(acc, a(s) + transition_score(params, s, t, constrained));
      next(t) = acc + emissions(i, t);
    }
    a = next;
  }
  double z = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < kNumTags; ++t) z = log_add_exp(z, a(t) + params.end.value(t, 0));
  return z;
}

/// Gradients of the CRF negative log-likelihood.
struct CrfGradients {
  Eigen::MatrixXd d_emissions;   // n x 3
  Eigen::MatrixXd d_transitions; // 3 x 3
  Eigen::Vector3d d_start;
  Eigen::Vector3d d_end;
};

/// Negative log-likelihood -log p(gold | emissions) under the chain model.
/// When grads is given, fills it via forward-backward marginals.
inline double crf_nll(const Eigen::MatrixXd& emissions, const CrfParameters& params,
                      const std::vector<BioTag>& gold, bool constrained = true,
                      CrfGradients* grads = nullptr) {
  const int n = int(emissions.rows());
  if (int(gold.size()) != n)
    throw ValidationError("crf_nll: tag/emission length mismatch");
  validate_gold_tags(gold, constrained);

  const double log_z = crf_log_partition(emissions, params, constrained);
  const double gold_score = sequence_score(emissions, params, gold, constrained);
  const double nll = log_z - gold_score;
  if (!grads) return nll;

  // forward-backward in log space
  Eigen::MatrixXd a(n, kNumTags), b(n, kNumTags);
  for (int t = 0; t < kNumTags; ++t) a(0, t) = start_score(params, t, constrained) + emissions(0, t);
  for (int i = 1; i < n; ++i)
    for (int t = 0; t < kNumTags; ++t) {
      double acc = -std::numeric_limits<double>::infinity();
      for (int s = 0; s < kNumTags; ++s)
        acc = log_add_exp(acc, a(i - 1, s) + transition_score(params, s, t, constrained));
      a(i, t) = acc + emissions(i, t);
    }
  for (int t = 0; t < kNumTags; ++t) b(n - 1, t) = params.end.value(t, 0);
  for (int i = n - 2; i >= 0; --i)
    for (int s = 0; s < kNumTags; ++s) {
      double acc = -std::numeric_limits<double>::infinity();
      for (int t = 0; t < kNumTags; ++t)
        acc = log_add_exp(acc, transition_score(params, s, t, constrained) + emissions(i + 1, t) +
                                   b(i + 1, t));
      b(i, s) = acc;
    }

  // expected counts minus gold counts; masked configurations have expected
  // probability exactly 0 (exp underflows) and gold never uses them, so no
  // special-casing is needed
  grads->d_emissions = Eigen::MatrixXd::Zero(n, kNumTags);
  grads->d_transitions = Eigen::MatrixXd::Zero(kNumTags, kNumTags);
  grads->d_start.setZero();
  grads->d_end.setZero();

  for (int i = 0; i < n; ++i)
    for (int t = 0; t < kNumTags; ++t)
      grads->d_emissions(i, t) = std::exp(a(i, t) + b(i, t) - log_z);
  for (int i = 1; i < n; ++i)
    for (int s = 0; s < kNumTags; ++s)
      for (int t = 0; t < kNumTags; ++t) {
        if (constrained && s == int(BioTag::O) && t == int(BioTag::I)) continue;  // masked param unread
        grads->d_transitions(s, t) +=
            std::exp(a(i - 1, s) + transition_score(params, s, t, constrained) + emissions(i, t) +
                     b(i, t) - log_z);
      }
  for (int t = 0; t < kNumTags; ++t) {
    if (!(constrained && t == int(BioTag::I)))
      grads->d_start(t) = std::exp(a(0, t) + b(0, t) - log_z);
    grads->d_end(t) = std::exp(a(n - 1, t) + params.end.value(t, 0) - log_z);
  }

  grads->d_emissions(0, int(gold[0])) -= 1.0;
  grads->d_start(int(gold[0])) -= 1.0;
  for (int i = 1; i < n; ++i) {
    grads->d_emissions(i, int(gold[std::size_t(i)])) -= 1.0;
    grads->d_transitions(int(gold[std::size_t(i - 1)]), int(gold[std::size_t(i)])) -= 1.0;
  }
  grads->d_end(int(gold[std::size_t(n - 1)])) -= 1.0;
  return nll;
}

/// MAP tag sequence under the chain model. Ties break toward the lower tag
/// index, i.e. O, then B, then I, at every backpointer and at the final
/// argmax.
inline std::vector<BioTag> viterbi_decode(const Eigen::MatrixXd& emissions,
                                          const CrfParameters& params, bool constrained = true) {
  const int n = int(emissions.rows());
  if (n < 1) throw ValidationError("viterbi: empty emission table");
  Eigen::MatrixXd score(n, kNumTags);
  Eigen::MatrixXi back(n, kNumTags);
  for (int t = 0; t < kNumTags; ++t) {
    score(0, t) = start_score(params, t, constrained) + emissions(0, t);
    back(0, t) = -1;
  }
  for (int i = 1; i < n; ++i)
    for (int t = 0; t < kNumTags; ++t) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int s = 0; s < kNumTags; ++s) {
        const double cand = score(i - 1, s) + transition_score(params, s, t, constrained);
        if (cand > best) {
          best = cand;
          arg = s;
        }
      }
      score(i, t) = best + emissions(i, t);
      back(i, t) = arg;
    }
  double best = -std::numeric_limits<double>::infinity();
  int arg = 0;
  for (int t = 0; t < kNumTags; ++t) {
    const double cand = score(n - 1, t) + params.end.value(t, 0);
    if (cand > best) {
      best = cand;
      arg = t;
    }
  }
  std::vector<BioTag> tags(static_cast<std::size_t>(n));
  for (int i = n - 1; i >= 0; --i) {
    tags[std::size_t(i)] = BioTag(arg);
    arg = back(i, arg);
  }
  return tags;
}

// ---------------------------------------------------------------------------

inline nlohmann::ordered_json CrfParameters::to_json() const {
  nlohmann::ordered_json j;
  j["attention_enabled"] = attention_enabled;
  j["w_l"] = matrix_to_json(w_l.value);
  j["w_v"] = matrix_to_json(w_v.value);
  j["w_q"] = matrix_to_json(w_q.value);
  j["w_k"] = matrix_to_json(w_k.value);
  j["transitions"] = matrix_to_json(transitions.value);
  j["start"] = matrix_to_json(start.value);
  j["end"] = matrix_to_json(end.value);
  return j;
}

inline CrfParameters CrfParameters::from_json(const nlohmann::ordered_json& j) {
  const Eigen::MatrixXd w_l = matrix_from_json(j.at("w_l"));
  CrfParameters p(int(w_l.cols()), 0, j.at("attention_enabled").get<bool>());
  p.w_l.value = w_l;
  p.w_v.value = matrix_from_json(j.at("w_v"));
  p.w_q.value = matrix_from_json(j.at("w_q"));
  p.w_k.value = matrix_from_json(j.at("w_k"));
  p.transitions.value = matrix_from_json(j.at("transitions"));
  p.start.value = matrix_from_json(j.at("start"));
  p.end.value = matrix_from_json(j.at("end"));
  for (Param* param : {&p.w_l, &p.w_v, &p.w_q, &p.w_k, &p.transitions, &p.start, &p.end})
    param->sync_grad_shape();
  return p;
}

}  // namespace edet
