#pragma once

// Domain types shared by every estimation step.
//
// Index conventions: classes, items, units and groups are 0-based in the
// C++ API. Class 0 is the reference category at both levels, so its logits
// are implicit zeros and never stored.

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlca {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Bound applied to every linear predictor before exponentiation.
inline constexpr double kLogitBound = 25.0;

// Error categories map onto CLI exit codes (config 2, data 3, estimation 4).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optional labels carried alongside the numeric data for reports.
struct ColumnNames {
  std::vector<std::string> items;
  std::vector<std::string> low_covariates;
  std::vector<std::string> high_covariates;
  std::vector<std::string> groups;
};

/// N x K binary responses of level-1 units nested in J groups, with optional
/// level-1 (N x P1) and level-2 (J x P2) covariates.
class ResponseData {
 public:
  ResponseData() = default;

  /// Validates every invariant; throws DataError on violation. Empty covariate
  /// matrices mean "no covariates at that level".
  ResponseData(Matrix y, std::vector<int> group_of, Matrix z_low = Matrix(),
               Matrix z_high = Matrix(), ColumnNames names = {});

  int n_units() const { return static_cast<int>(y_.rows()); }
  int n_items() const { return static_cast<int>(y_.cols()); }
  int n_groups() const { return static_cast<int>(members_.size()); }
  int n_low_covariates() const { return static_cast<int>(z_low_.cols()); }
  int n_high_covariates() const { return static_cast<int>(z_high_.cols()); }

  const Matrix& y() const { return y_; }
  const Matrix& z_low() const { return z_low_; }
  const Matrix& z_high() const { return z_high_; }
  const std::vector<int>& group_of() const { return group_of_; }
  const std::vector<int>& members(int group) const { return members_.at(group); }
  std::vector<int> group_sizes() const;
  const ColumnNames& names() const { return names_; }

  /// New dataset made of the listed groups (repeats allowed, each copy becomes
  /// its own group) in the given order.
  ResponseData select_groups(const std::vector<int>& groups) const;

  /// New dataset with, per group, the listed unit indices (repeats allowed).
  ResponseData select_units(const std::vector<std::vector<int>>& units_per_group) const;

  ResponseData without_high_covariates() const;
  ResponseData without_low_covariates() const;
  ResponseData without_covariates() const;

 private:
  Matrix y_;
  std::vector<int> group_of_;
  Matrix z_low_;
  Matrix z_high_;
  ColumnNames names_;
  std::vector<std::vector<int>> members_;
};

/// Item-class logits: P(Y_k = 1 | X = t) = logistic(beta(t, k)).
struct MeasurementParams {
  Matrix beta;  // T x K

  int n_classes() const { return static_cast<int>(beta.rows()); }
  int n_items() const { return static_cast<int>(beta.cols()); }
  /// T x K conditional response probabilities.
  Matrix probabilities() const;
};

/// Multinomial-logit parameters for low-level membership X given the group
/// class W and covariates, and for the group class W given level-2 covariates.
struct StructuralParams {
  Matrix gamma0;  // M x (T-1) random intercepts
  Matrix gamma1;  // (T-1) x P2 level-2 slopes
  Matrix gamma2;  // (T-1) x P1 level-1 slopes; unused when random_slopes is set
  std::vector<Matrix> random_slopes;  // M entries of (T-1) x P1, or empty
  Vector delta0;  // M-1
  Matrix delta1;  // (M-1) x P2

  int n_low() const { return static_cast<int>(gamma0.cols()) + 1; }
  int n_high() const { return static_cast<int>(gamma0.rows()); }
  bool has_random_slopes() const { return !random_slopes.empty(); }
  int n_low_covariates() const {
    return has_random_slopes() ? static_cast<int>(random_slopes.front().cols())
                               : static_cast<int>(gamma2.cols());
  }
  int n_high_covariates_low() const { return static_cast<int>(gamma1.cols()); }
  int n_high_covariates_high() const { return static_cast<int>(delta1.cols()); }

  /// All-zero parameters of the given shape.
  static StructuralParams zeros(int n_low, int n_high, int p_low = 0, int p_high = 0,
                                bool random_slopes = false);
};

/// Posterior class membership tables from the E-step.
struct PosteriorTables {
  int n_low = 0;
  int n_high = 0;
  Matrix joint;         // N x (T*M); column t + T*m holds P(X_i = t, W = m | data)
  Matrix high;          // J x M
  Matrix low_marginal;  // N x T

  double joint_at(int unit, int t, int m) const { return joint(unit, t + n_low * m); }
};

struct FitSummary {
  double loglik = 0.0;
  int npar = 0;
  double bic = 0.0;
  double bic_group = 0.0;
  std::optional<double> tic;
  double entropy_r2_low = 1.0;
  std::optional<double> entropy_r2_high;
  int n_iterations = 0;
  bool converged = false;
  int best_start_index = 0;
  // Diagnostics.
  bool sparse_support = false;    // T*K large relative to N
  bool degenerate_class = false;  // best solution still has an empty class
  bool boundary = false;          // some parameter sits on the logit bound
  int n_degenerate_restarts = 0;
  double max_loglik_decrease = 0.0;  // worst per-iteration drop seen in any start
};

}  // namespace mlca
