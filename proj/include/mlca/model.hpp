#pragma once

// Probability and likelihood kernels for the simple and multilevel latent
// class model with binary indicators. Everything is evaluated in log space.

#include "mlca/types.hpp"

namespace mlca {

inline double clamp_logit(double eta) {
  return eta < -kLogitBound ? -kLogitBound : (eta > kLogitBound ? kLogitBound : eta);
}

/// logistic(clamp(eta)).
double logistic(double eta);

/// log(logistic(clamp(eta))), stable for large |eta|.
double log_logistic(double eta);

/// Softmax over {0, eta...}: class 0 is the reference with linear predictor 0.
/// Each entry of eta is clamped first.
Vector reference_softmax(const Eigen::Ref<const Vector>& eta);
Vector reference_log_softmax(const Eigen::Ref<const Vector>& eta);

/// P(Y_k = 1 | X = t). Throws std::out_of_range on bad indices.
double item_response_prob(const MeasurementParams& beta, int t, int k);

/// P(X = . | W = m, z_high, z_low). Covariate rows must match the slope
/// dimensions of the parameters; pass empty vectors for intercept-only models.
Vector class_prob_low(const StructuralParams& params, int m,
                      const Eigen::Ref<const Vector>& z_high,
                      const Eigen::Ref<const Vector>& z_low);
Vector log_class_prob_low(const StructuralParams& params, int m,
                          const Eigen::Ref<const Vector>& z_high,
                          const Eigen::Ref<const Vector>& z_low);

/// P(W = . | z_high).
Vector class_prob_high(const StructuralParams& params, const Eigen::Ref<const Vector>& z_high);
Vector log_class_prob_high(const StructuralParams& params,
                           const Eigen::Ref<const Vector>& z_high);

/// N x T matrix of log P(Y_i | X = t).
Matrix class_log_masses(const ResponseData& data, const MeasurementParams& beta);

/// Throws std::invalid_argument if parameters and data disagree on dimensions.
void check_dimensions(const ResponseData& data, const MeasurementParams& beta,
                      const StructuralParams& structural);

/// log P(Y_j | Z_j) for one group.
double group_loglik(const ResponseData& data, int group, const MeasurementParams& beta,
                    const StructuralParams& structural);

double total_loglik(const ResponseData& data, const MeasurementParams& beta,
                    const StructuralParams& structural);

PosteriorTables posterior_tables(const ResponseData& data, const MeasurementParams& beta,
                                 const StructuralParams& structural);

/// One pass of the forward computation: per-group log-likelihoods and,
/// optionally, posterior tables. `log_masses` comes from class_log_masses.
struct EStep {
  Vector group_loglik;
  PosteriorTables posteriors;
  double loglik() const { return group_loglik.sum(); }
};

EStep expectation(const ResponseData& data, const Matrix& log_masses,
                  const StructuralParams& structural, bool with_posteriors = true);

enum class Stage { step1, step2a, step2b, step3 };

struct ModelDimensions {
  int n_low = 1;
  int n_high = 1;
  int n_items = 0;
  int p_low = 0;
  int p_high = 0;
};

/// Number of free parameters estimated at the given stage.
int count_parameters(const ModelDimensions& dims, Stage stage, bool random_slopes = false);

}  // namespace mlca
