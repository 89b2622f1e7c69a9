#pragma once

// Weighted multinomial logistic regression by Newton-Raphson. Used for the
// structural M-steps (with posterior weights) and for the naive estimator
// (with 0/1 weights).

#include "mlca/types.hpp"

#include <vector>

namespace mlca {

struct MultinomialLogitOptions {
  double tolerance = 1e-10;
  int max_iterations = 50;
  double bound = kLogitBound;
  bool compute_information = true;  // observed information at the solution
};

struct MultinomialLogitFit {
  Matrix coefficients;  // (C-1) x D, reference class 0 omitted
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  bool boundary = false;
  // Observed information (negative Hessian) over the estimated coefficients,
  // ordered class-major: index = c * n_estimated + position of column d.
  Matrix information;
  std::vector<int> estimated_columns;
};

/// Maximizes sum_n sum_c weights(n, c) log P(class c | design row n).
///
/// Columns flagged false in `free_columns`, and columns that are identically
/// zero, keep their starting coefficients. Coefficients are kept inside
/// [-bound, bound]; every accepted step increases the objective.
MultinomialLogitFit fit_multinomial_logit(const Matrix& design, const Matrix& weights,
                                          const Matrix& start,
                                          const std::vector<bool>& free_columns,
                                          const MultinomialLogitOptions& options = {});

/// Objective value at the given coefficients.
double multinomial_logit_objective(const Matrix& design, const Matrix& weights,
                                   const Matrix& coefficients);

}  // namespace mlca
