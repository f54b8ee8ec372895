// Shared test fixtures: finite-difference gradient checks, tiny corpora and
// toy-data loading.
#pragma once

#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "edet/edet.hpp"

namespace edet::test {

inline std::string data_dir() {
  const char* env = std::getenv("EDET_DATA_DIR");
  return env ? std::string(env) : std::string("data");
}

inline Ontology toy_ontology() { return load_ontology(data_dir() + "/toy/ontology.json"); }

inline std::vector<AnnotatedSentence> toy_train() {
  return load_corpus(data_dir() + "/toy/train.jsonl", toy_ontology()).sentences;
}

inline std::vector<AnnotatedSentence> toy_null_pool() {
  return load_corpus(data_dir() + "/toy/null_pool.jsonl", toy_ontology()).sentences;
}

inline RunConfig toy_config() { return load_config(data_dir() + "/toy/config.json"); }

/// Central finite difference of a scalar function at x.
inline double central_diff(const std::function<double(double)>& f, double x, double eps = 1e-5) {
  return (f(x + eps) - f(x - eps)) / (2.0 * eps);
}

/// Relative error with an absolute floor, suitable for grad checks.
inline double rel_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

/// Checks a Param's analytic gradient against central differences on up to
/// max_entries entries (deterministically subsampled). Returns the worst
/// relative error seen.
inline double check_param_grad(Param& param, const Eigen::MatrixXd& analytic,
                               const std::function<double()>& loss_fn, int max_entries = 24,
                               double eps = 1e-5) {
  double worst = 0.0;
  const Eigen::Index total = param.value.size();
  const Eigen::Index step = std::max<Eigen::Index>(1, total / max_entries);
  for (Eigen::Index k = 0; k < total; k += step) {
    double* slot = param.value.data() + k;  // column-major walk, same layout as analytic
    const double saved = *slot;
    *slot = saved + eps;
    const double hi = loss_fn();
    *slot = saved - eps;
    const double lo = loss_fn();
    *slot = saved;
    const double numeric = (hi - lo) / (2.0 * eps);
    worst = std::max(worst, rel_err(*(analytic.data() + k), numeric));
  }
  return worst;
}

/// A tiny two-type corpus for unit tests that should not depend on the toy
/// data files.
inline Ontology mini_ontology() {
  Ontology onto;
  onto.types.push_back(EventTypeSpec{"Alpha", {"spark"}, std::nullopt, {"spark"}});
  onto.types.push_back(EventTypeSpec{"Beta", {"drift"}, std::nullopt, {"drift"}});
  return onto;
}

inline AnnotatedSentence make_sentence(const std::string& id,
                                       const std::vector<std::string>& tokens,
                                       const std::vector<EventMention>& mentions = {}) {
  AnnotatedSentence as;
  as.sentence.id = id;
  as.sentence.tokens = tokens;
  as.mentions = mentions;
  return as;
}

}  // namespace edet::test
