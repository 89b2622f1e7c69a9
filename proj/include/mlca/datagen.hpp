#pragma once

// Simulation from the multilevel latent class model with known parameters,
// and a brute-force likelihood used as an independent check.

#include "mlca/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mlca {

enum class CovariateKind { standard_normal, bernoulli };

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::standard_normal;
};

struct GenerativeSpec {
  int n_groups = 0;
  int group_size = 0;            // used when group_sizes is empty
  std::vector<int> group_sizes;  // optional per-group sizes
  MeasurementParams beta;
  // Slopes must match the covariate lists: gamma2 (T-1) x P1, gamma1 and
  // delta1 x P2. Random slopes are supported.
  StructuralParams structural;
  std::vector<CovariateSpec> low_covariates;
  std::vector<CovariateSpec> high_covariates;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on inconsistent dimensions.
  void validate() const;
};

struct SimulatedData {
  ResponseData data;
  std::vector<int> true_high;  // W_j per group
  std::vector<int> true_low;   // X_ij per unit
};

SimulatedData simulate(const GenerativeSpec& spec);

/// T x K item logits of magnitude `magnitude`: class 0 answers 1 to every
/// item, the last class 0 to every item, and classes in between alternate in
/// blocks of increasing length.
Matrix separated_item_logits(int n_low, int n_items, double magnitude);

/// Unconditional design with separated item logits and group classes that
/// shift the low-class distribution in opposite directions.
GenerativeSpec unconditional_spec(int n_low, int n_high, int n_groups, int group_size, int n_items,
                                  double magnitude, std::uint64_t seed);

/// Exact log-likelihood by summing every (m, t_1..t_nj) configuration of each
/// group in linear space. Refuses (std::length_error) groups with more than
/// 1e5 configurations.
double enumeration_loglik(const ResponseData& data, const MeasurementParams& beta,
                          const StructuralParams& structural);

}  // namespace mlca
