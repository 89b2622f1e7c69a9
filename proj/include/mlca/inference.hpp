#pragma once

// Standard errors for the covariate effects of the structural model: a
// nonparametric bootstrap of the second stage, and the naive three-step
// comparison estimator based on modal class assignment.

#include "mlca/em.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mlca {

enum class ResampleUnit { groups, units_within_groups, two_stage };

struct BootstrapConfig {
  int n_replicates = 500;
  ResampleUnit resample_unit = ResampleUnit::groups;
  std::uint64_t seed = 20240101;
  int n_threads = 1;
  // Random starts per replicate in addition to the warm start at the point
  // estimate.
  int replicate_random_starts = 0;

  void validate() const;
};

enum class CoefficientBlock { high, low };

struct CoefficientRow {
  CoefficientBlock block = CoefficientBlock::low;
  std::string parameter;  // "delta1", "gamma1" or "gamma2"
  int high_class = -1;    // group class for random slopes, else -1
  int low_class = -1;     // outcome class of the logit (delta1: group class)
  std::string covariate;
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;
  std::string stars;
  bool estimable = true;  // false for columns dropped as collinear
};

struct StructuralReport {
  std::string method;  // "bootstrap" or "naive"
  std::vector<CoefficientRow> rows;
  int n_replicates = 0;
  int n_dropped = 0;
  bool unreliable = false;  // more than 10% of replicates dropped
  bool boundary = false;    // some estimate at the logit bound
  StructuralParams point;   // estimates the rows were taken from
};

/// "***" for p < 0.01, "**" for p < 0.05, "*" for p < 0.1.
std::string significance_stars(double p);
/// Two-sided normal p-value.
double two_sided_p(double z);

/// Point estimate from fit_step3 on the full data; standard errors from
/// replicates re-running fit_step3 on resampled data with the measurement
/// model held at the step-2b values. Replicates are aligned to the point
/// estimate over group-class permutations before the spread is taken.
StructuralReport bootstrap_stage2(const ResponseData& data, const FitResult& step2b,
                                  const FitConfig& config, const BootstrapConfig& boot,
                                  const Step3Options& options = {});

/// Same, starting from an existing step-3 point estimate.
StructuralReport bootstrap_stage2(const ResponseData& data, const FitResult& step2b,
                                  const FitResult& point, const FitConfig& config,
                                  const BootstrapConfig& boot, const Step3Options& options = {});

/// Multinomial logit of the modal step-1 class on level-1 covariates, J-1
/// group dummies and the level-2 covariates. Level-2 columns are collinear
/// with the dummies and are reported as not estimable.
StructuralReport naive_estimator(const ResponseData& data, const FitResult& step1,
                                 const FitConfig& config);

/// Slope of the named covariate for low class t (1-based non-reference class),
/// taken from the first matching row. Throws std::out_of_range if absent.
const CoefficientRow& find_coefficient(const StructuralReport& report, const std::string& parameter,
                                       const std::string& covariate, int low_class,
                                       int high_class = -1);

}  // namespace mlca
