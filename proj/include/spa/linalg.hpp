#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "spa/error.hpp"

namespace spa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Probabilities are clamped to this floor inside every log().
inline constexpr double kProbClamp = 1e-12;

/// Returns a copy of `m` with every row scaled to unit Euclidean norm.
/// Rows with norm below 1e-12 raise ZeroRow.
template <typename Derived>
Matrix l2_normalized(const Eigen::MatrixBase<Derived>& m) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm < 1e-12)
      fail(ErrorCode::zero_row, "row " + std::to_string(i) + " has zero norm");
    out.row(i) /= norm;
  }
  return out;
}

/// Row-wise softmax with the usual max-shift for stability.
template <typename Derived>
Matrix softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  Matrix out = logits;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  return out;
}

/// Shannon entropy (natural log) of each row of a probability matrix.
template <typename Derived>
Vector row_entropies(const Eigen::MatrixBase<Derived>& p) {
  Vector h(p.rows());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const double v = p(i, j);
      if (v > 0.0) acc -= v * std::log(v);
    }
    h(i) = acc;
  }
  return h;
}

/// Checks the ProbMatrix contract: entries in [0,1], rows summing to 1.
template <typename Derived>
void require_prob_matrix(const Eigen::MatrixBase<Derived>& p,
                         double tol = 1e-6) {
  if (!p.allFinite())
    fail(ErrorCode::non_finite_value, "probability matrix has non-finite entries");
  if (p.minCoeff() < -tol || p.maxCoeff() > 1.0 + tol)
    fail(ErrorCode::invalid_range, "probability entries outside [0,1]");
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double s = p.row(i).sum();
    if (std::abs(s - 1.0) > tol)
      fail(ErrorCode::invalid_range,
           "row " + std::to_string(i) + " sums to " + std::to_string(s));
  }
}

}  // namespace spa
