#pragma once

// Information criteria, entropy-based R-squared and the hierarchical
// class-number selection driver.

#include "mlca/em.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mlca {

/// -2 loglik + npar ln(sample_size).
double bic(double loglik, int npar, double sample_size);
/// -2 loglik + 2 npar.
double aic(double loglik, int npar);

enum class Level { low, high };

/// Proportional reduction of classification entropy at the given level.
/// Returns 1 when the marginal class distribution has zero entropy.
double entropy_r2(const PosteriorTables& posteriors, Level level);

struct TicResult {
  double value = 0.0;  // -2 loglik + 2 tr(F^-1 R)
  double trace = 0.0;
  double condition_number = 0.0;
  bool pseudo_inverse = false;  // F was singular or not positive definite
  int npar = 0;
};

/// Takeuchi information criterion over the free blocks of a converged fit.
/// R is the outer product of per-group scores, F the negative Hessian of the
/// total log-likelihood (central differences of the analytic score).
TicResult tic(const ResponseData& data, const FitResult& fit, BlockSet free_blocks);

enum class LowCriterion { bic, aic };
enum class HighCriterion { tic, bic_group, bic };

struct SelectionPlan {
  int t_max = 10;
  int m_max = 4;
  LowCriterion criterion_low = LowCriterion::bic;
  HighCriterion criterion_high = HighCriterion::tic;
  Step2bVariant step2b_variant = Step2bVariant::full;
  double near_tie_threshold = 10.0;

  void validate() const;
};

struct CriterionRow {
  int n_low = 1;
  int n_high = 1;
  double loglik = 0.0;
  int npar = 0;
  double bic = 0.0;
  double bic_group = 0.0;
  double aic = 0.0;
  std::optional<double> tic;
  double entropy_r2_low = 1.0;
  std::optional<double> entropy_r2_high;
  bool converged = true;
  bool selected = false;
  bool near_tie = false;  // within the threshold of the selecting criterion's minimum
  std::string error;      // non-empty when the fit failed
};

struct CriterionReport {
  std::string title;
  std::string scanned;  // "T" or "M"
  std::string criterion;
  std::vector<CriterionRow> rows;

  /// Row index minimizing the named criterion ("bic", "bic_group", "aic",
  /// "tic"), ignoring failed rows.
  std::optional<std::size_t> argmin(const std::string& criterion) const;
};

struct SelectionResult {
  int n_low = 1;
  int n_high = 1;
  int n_low_step1 = 1;
  CriterionReport step1;
  CriterionReport step2a;
  CriterionReport step2b;
  FitResult step1_fit;  // at the step-1 choice of T
  FitResult final_fit;  // step 2b at the selected (T, M)
};

struct Step1Selection {
  CriterionReport report;
  int n_low = 1;
  FitResult fit;
};

/// The step-1 scan over T = 1..plan.t_max on its own.
Step1Selection select_step1(const ResponseData& data, const SelectionPlan& plan,
                            const FitConfig& config);

/// Step 1 over T, step 2a over M at the chosen T, then step 2b over T at the
/// chosen M. Failing candidates are recorded in their row; the driver throws
/// EstimationError only when no candidate of a scan succeeds.
SelectionResult hierarchical_select(const ResponseData& data, const SelectionPlan& plan,
                                    const FitConfig& config);

double criterion_value(const CriterionRow& row, const std::string& criterion);

}  // namespace mlca
