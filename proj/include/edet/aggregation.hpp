// Multi-verbalizer score aggregation operators: avg, max, logsumexp and
// weighted-avg (weights learnable elsewhere, normalized via softmax).
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "edet/util.hpp"

namespace edet {

enum class AggregationKind { Avg, Max, LogSumExp, WeightedAvg };

inline AggregationKind aggregation_from_string(const std::string& s) {
  if (s == "avg") return AggregationKind::Avg;
  if (s == "max") return AggregationKind::Max;
  if (s == "logsumexp") return AggregationKind::LogSumExp;
  if (s == "wavg" || s == "weighted_avg") return AggregationKind::WeightedAvg;
  throw ValidationError("unknown aggregation method: " + s);
}

inline std::string to_string(AggregationKind k) {
  switch (k) {
    case AggregationKind::Avg: return "avg";
    case AggregationKind::Max: return "max";
    case AggregationKind::LogSumExp: return "logsumexp";
    case AggregationKind::WeightedAvg: return "wavg";
  }
  return "?";
}

/// Reduces verbalizer scores to one type score. Weights are required exactly
/// for wavg and must be a normalized distribution over the scores.
inline double aggregate(const std::vector<double>& scores, AggregationKind kind,
                        const std::vector<double>* weights = nullptr) {
  if (scores.empty()) throw ValidationError("aggregate: empty score list");
  if ((kind == AggregationKind::WeightedAvg) != (weights != nullptr))
    throw ValidationError("aggregate: weights must be given iff method is wavg");
  switch (kind) {
    case AggregationKind::Avg: {
      double s = 0;
      for (double x : scores) s += x;
      return s / double(scores.size());
    }
    case AggregationKind::Max: {
      double m = scores[0];
      for (double x : scores) m = std::max(m, x);
      return m;
    }
    case AggregationKind::LogSumExp:
      return log_sum_exp(scores);
    case AggregationKind::WeightedAvg: {
      if (weights->size() != scores.size())
        throw ValidationError("aggregate: weight/score length mismatch");
      double s = 0, wsum = 0;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        if ((*weights)[i] < 0) throw ValidationError("aggregate: negative weight");
        s += (*weights)[i] * scores[i];
        wsum += (*weights)[i];
      }
      if (std::abs(wsum - 1.0) > 1e-6) throw ValidationError("aggregate: weights must sum to 1");
      return s;
    }
  }
  throw ValidationError("aggregate: unreachable");
}

/// d(aggregate)/d(scores); max uses the first-argmax subgradient.
inline std::vector<double> aggregate_grad(const std::vector<double>& scores, AggregationKind kind,
                                          const std::vector<double>* weights = nullptr) {
  const std::size_t n = scores.size();
  std::vector<double> g(n, 0.0);
  switch (kind) {
    case AggregationKind::Avg:
      for (auto& x : g) x = 1.0 / double(n);
      break;
    case AggregationKind::Max: {
      std::size_t arg = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (scores[i] > scores[arg]) arg = i;
      g[arg] = 1.0;
      break;
    }
    case AggregationKind::LogSumExp: {
      const double lse = log_sum_exp(scores);
      for (std::size_t i = 0; i < n; ++i) g[i] = std::exp(scores[i] - lse);
      break;
    }
    case AggregationKind::WeightedAvg:
      if (!weights || weights->size() != n)
        throw ValidationError("aggregate_grad: wavg needs matching weights");
      g = *weights;
      break;
  }
  return g;
}

/// Softmax normalization for learnable wavg weight logits.
inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::ArrayXd e = (logits.array() - m).exp();
  return (e / e.sum()).matrix();
}

/// Gradient of (w = softmax(theta); out = w . scores) w.r.t. theta.
inline Eigen::VectorXd wavg_theta_grad(const std::vector<double>& scores,
                                       const Eigen::VectorXd& weights, double upstream) {
  Eigen::VectorXd sv = Eigen::Map<const Eigen::VectorXd>(scores.data(), Eigen::Index(scores.size()));
  const double mean = weights.dot(sv);
  return upstream * (weights.array() * (sv.array() - mean)).matrix();
}

}  // namespace edet
