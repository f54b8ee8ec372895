// Named trainable parameter: a dense value plus its gradient accumulator.
#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "edet/util.hpp"

namespace edet {

struct Param {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Eigen::MatrixXd::Zero(rows, cols)),
        grad(Eigen::MatrixXd::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }

  /// Keeps grad shaped like value after the value grows (vocab extension).
  void sync_grad_shape() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  }
};

inline void fill_uniform(Eigen::Ref<Eigen::MatrixXd> m, Rng& rng, double scale) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.next_uniform(scale);
}

inline double global_grad_norm(const std::vector<Param*>& params) {
  double sq = 0.0;
  for (const Param* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

// JSON (de)serialization of dense matrices as row-major nested arrays.
// nlohmann emits shortest round-trip representations for doubles, so a
// save/load cycle is bit-exact.

inline nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::ordered_json& j) {
  const Eigen::Index rows = Eigen::Index(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  const Eigen::Index cols = Eigen::Index(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = j.at(std::size_t(r)).at(std::size_t(c)).get<double>();
  return m;
}

}  // namespace edet
