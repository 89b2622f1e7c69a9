#pragma once

#include "mlca/datagen.hpp"
#include "mlca/em.hpp"

#include <doctest.h>

#include <random>

namespace mlca::testing {

// Every fit made by the tests goes through here so EM monotonicity is
// asserted on all of them.
inline const FitResult& monotone(const FitResult& f) {
  CHECK(f.summary.max_loglik_decrease <= 1e-10);
  for (std::size_t i = 1; i < f.loglik_trace.size(); ++i) {
    CHECK(f.loglik_trace[i] - f.loglik_trace[i - 1] >= -1e-10);
  }
  return f;
}

inline Matrix uniform_matrix(Eigen::Index r, Eigen::Index c, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

inline StructuralParams random_structural(int t, int m, int p_low, int p_high, bool random_slopes,
                                          std::mt19937_64& rng) {
  StructuralParams s = StructuralParams::zeros(t, m, p_low, p_high, random_slopes);
  s.gamma0 = uniform_matrix(m, t - 1, -1.5, 1.5, rng);
  s.gamma1 = uniform_matrix(t - 1, p_high, -1.0, 1.0, rng);
  if (random_slopes) {
    for (auto& r : s.random_slopes) r = uniform_matrix(t - 1, p_low, -1.0, 1.0, rng);
  } else {
    s.gamma2 = uniform_matrix(t - 1, p_low, -1.0, 1.0, rng);
  }
  s.delta0 = uniform_matrix(m - 1, 1, -1.0, 1.0, rng).col(0);
  s.delta1 = uniform_matrix(m - 1, p_high, -1.0, 1.0, rng);
  return s;
}

inline Matrix separated_beta(int t, int k, double sep) { return separated_item_logits(t, k, sep); }

inline GenerativeSpec basic_spec(int t, int m, int j, int n_j, double sep, std::uint64_t seed) {
  return unconditional_spec(t, m, j, n_j, 8, sep, seed);
}

inline FitConfig quick_config(std::uint64_t seed = 7) {
  FitConfig c;
  c.n_random_starts = 4;
  c.max_iterations = 500;
  c.loglik_tolerance = 1e-8;
  c.seed = seed;
  return c;
}

}  // namespace mlca::testing
