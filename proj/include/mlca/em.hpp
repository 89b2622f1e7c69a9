#pragma once

// EM estimation for every step of the stepwise procedure. All steps share one
// engine; they differ only in which parameter blocks are held fixed and which
// covariates enter the model.

#include "mlca/model.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mlca {

enum class Block : unsigned {
  beta = 1u << 0,
  gamma0 = 1u << 1,
  gamma1 = 1u << 2,
  gamma2 = 1u << 3,  // fixed or random level-1 slopes
  delta0 = 1u << 4,
  delta1 = 1u << 5,
};

class BlockSet {
 public:
  constexpr BlockSet() = default;
  constexpr BlockSet(std::initializer_list<Block> blocks) {
    for (Block b : blocks) bits_ |= static_cast<unsigned>(b);
  }
  constexpr bool contains(Block b) const { return (bits_ & static_cast<unsigned>(b)) != 0; }
  constexpr BlockSet& insert(Block b) {
    bits_ |= static_cast<unsigned>(b);
    return *this;
  }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr BlockSet complement() const {
    BlockSet s;
    s.bits_ = ~bits_ & 0x3Fu;
    return s;
  }
  constexpr bool operator==(const BlockSet&) const = default;

 private:
  unsigned bits_ = 0;
};

struct FitConfig {
  int max_iterations = 2000;
  double loglik_tolerance = 1e-8;
  bool relative_tolerance = false;
  int n_random_starts = 16;  // may be 0 when warm starts are supplied
  std::uint64_t seed = 20240101;
  double m_step_newton_tolerance = 1e-10;
  int m_step_max_newton = 50;
  // Held fixed at their starting values. The step functions below set this
  // themselves; it only matters for direct calls to fit_model.
  BlockSet freeze;
  int n_threads = 1;

  /// Throws ConfigError when a setting is out of range.
  void validate() const;
};

struct StartingValues {
  MeasurementParams measurement;
  StructuralParams structural;
};

struct FitResult {
  MeasurementParams beta;
  StructuralParams structural;
  FitSummary summary;
  PosteriorTables posteriors;
  std::vector<double> per_start_logliks;
  std::vector<double> loglik_trace;  // per-iteration log-likelihood of the best start
};

/// General EM fit. `model` fixes the shape (T, M, covariate usage) and the
/// values of frozen blocks; free blocks are drawn at random for each of
/// config.n_random_starts starts. `warm_starts` are tried first, in order.
FitResult fit_model(const ResponseData& data, const StartingValues& model, const FitConfig& config,
                    std::span<const StartingValues> warm_starts = {});

/// Pooled simple latent class model; grouping and covariates are ignored.
FitResult fit_step1(const ResponseData& data, int n_low, const FitConfig& config);

/// Group-level classes with the measurement model fixed at the step-1 values.
FitResult fit_step2a(const ResponseData& data, const FitResult& step1, int n_high,
                     const FitConfig& config);

enum class Step2bVariant { full, fix_w_regressions };

/// Unconditional multilevel model with the measurement model re-estimated.
/// `fix_w_regressions` holds the group-class logits at `frozen_delta0`.
FitResult fit_step2b(const ResponseData& data, int n_low, int n_high, const FitConfig& config,
                     Step2bVariant variant = Step2bVariant::full,
                     const Vector& frozen_delta0 = Vector(),
                     std::span<const StartingValues> warm_starts = {});

struct Step3Options {
  bool split = false;          // level-1 covariates first, then level-2 with level-1 slopes fixed
  bool random_slopes = false;  // level-1 slopes vary by group class
};

/// Structural model with covariates and the measurement model fixed at the
/// step-2b values.
FitResult fit_step3(const ResponseData& data, const FitResult& step2b, const FitConfig& config,
                    const Step3Options& options = {},
                    std::span<const StartingValues> warm_starts = {});

/// Simultaneous maximum likelihood over every parameter, with whatever
/// covariates the data carries.
FitResult fit_one_stage(const ResponseData& data, int n_low, int n_high, const FitConfig& config,
                        bool random_slopes = false,
                        std::span<const StartingValues> warm_starts = {});

/// Relabels the group-level classes so that new class r is old class
/// order[r], re-expressing the reference-coded logits.
StructuralParams permute_high_classes(const StructuralParams& structural,
                                      const std::vector<int>& order);

/// Number of parameters not held fixed.
int count_free_parameters(const StartingValues& model, BlockSet freeze);

/// Throws DataError naming level-1/level-2 covariate columns that are linear
/// combinations of the intercept and earlier columns. All-zero columns are
/// allowed: their slopes stay at zero.
void check_covariate_rank(const ResponseData& data);

/// Per-group score vectors (J x p) of the free parameters, from the Fisher
/// identity on the E-step posteriors. Parameter order matches pack_parameters.
Matrix group_scores(const ResponseData& data, const MeasurementParams& beta,
                    const StructuralParams& structural, BlockSet free_blocks);

/// Flattens the listed blocks in the order beta, gamma0, gamma1, gamma2,
/// delta0, delta1 (each row-major).
Vector pack_parameters(const MeasurementParams& beta, const StructuralParams& structural,
                       BlockSet blocks);
void unpack_parameters(const Vector& values, BlockSet blocks, MeasurementParams& beta,
                       StructuralParams& structural);

}  // namespace mlca
