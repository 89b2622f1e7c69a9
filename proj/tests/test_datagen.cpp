#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_support.hpp"

#include "mlca/model.hpp"

#include <cmath>

using namespace mlca;

TEST_CASE("near-deterministic items reproduce their class") {
  GenerativeSpec g = unconditional_spec(3, 2, 100, 100, 6, 20.0, 3);
  const SimulatedData sim = simulate(g);
  REQUIRE(sim.data.n_units() == 10000);
  for (int t = 0; t < 3; ++t) {
    Vector sum = Vector::Zero(6);
    int n = 0;
    for (int i = 0; i < sim.data.n_units(); ++i) {
      if (sim.true_low[static_cast<std::size_t>(i)] != t) continue;
      sum += sim.data.y().row(i).transpose();
      ++n;
    }
    REQUIRE(n > 0);
    for (int k = 0; k < 6; ++k) {
      const double p = 1.0 / (1.0 + std::exp(-g.beta.beta(t, k)));
      CHECK(std::abs(sum(k) / n - p) < 5e-4);
    }
  }
}

TEST_CASE("zero logits give fair coins") {
  GenerativeSpec g = unconditional_spec(2, 1, 100, 100, 4, 0.0, 5);
  const SimulatedData sim = simulate(g);
  const Vector means = sim.data.y().colwise().mean().transpose();
  for (int k = 0; k < 4; ++k) CHECK(std::abs(means(k) - 0.5) < 0.02);
}

TEST_CASE("simulation is reproducible and covariates follow their specification") {
  GenerativeSpec g = unconditional_spec(2, 2, 200, 25, 5, 2.0, 9);
  g.low_covariates = {{"x", CovariateKind::standard_normal}, {"b", CovariateKind::bernoulli}};
  g.high_covariates = {{"z", CovariateKind::bernoulli}};
  g.structural.gamma2 = Matrix::Constant(1, 2, 0.4);
  g.structural.gamma1 = Matrix::Constant(1, 1, -0.3);
  g.structural.delta1 = Matrix::Constant(1, 1, 0.7);
  const SimulatedData a = simulate(g);
  const SimulatedData b = simulate(g);
  CHECK(a.data.y() == b.data.y());
  CHECK(a.data.z_low() == b.data.z_low());
  CHECK(a.true_high == b.true_high);
  const Matrix& z = a.data.z_low();
  CHECK(std::abs(z.col(0).mean()) < 0.05);
  for (Eigen::Index i = 0; i < z.rows(); ++i) CHECK((z(i, 1) == 0.0 || z(i, 1) == 1.0));
  CHECK(std::abs(z.col(1).mean() - 0.5) < 0.03);
  g.seed = 10;
  CHECK(simulate(g).data.y() != a.data.y());
}

TEST_CASE("group-class shares follow the group-level logits") {
  GenerativeSpec g = unconditional_spec(2, 3, 4000, 2, 3, 1.0, 12);
  g.structural.delta0 = Vector(2);
  g.structural.delta0 << std::log(2.0), 0.0;  // shares 1/4, 1/2, 1/4
  const SimulatedData sim = simulate(g);
  Vector count = Vector::Zero(3);
  for (int w : sim.true_high) count(w) += 1.0;
  count /= static_cast<double>(sim.true_high.size());
  CHECK(std::abs(count(0) - 0.25) < 0.02);
  CHECK(std::abs(count(1) - 0.50) < 0.02);
  CHECK(std::abs(count(2) - 0.25) < 0.02);
}

TEST_CASE("enumeration refuses large groups and is order invariant") {
  const SimulatedData big = simulate(unconditional_spec(3, 2, 1, 12, 3, 1.0, 1));
  const GenerativeSpec g = unconditional_spec(3, 2, 1, 12, 3, 1.0, 1);
  CHECK_THROWS_AS(enumeration_loglik(big.data, g.beta, g.structural), std::length_error);

  const GenerativeSpec s = unconditional_spec(2, 2, 3, 4, 3, 1.0, 2);
  const SimulatedData small = simulate(s);
  std::vector<std::vector<int>> reversed;
  for (int j = 0; j < small.data.n_groups(); ++j) {
    auto m = small.data.members(j);
    std::reverse(m.begin(), m.end());
    reversed.push_back(m);
  }
  const double a = enumeration_loglik(small.data, s.beta, s.structural);
  const double b = enumeration_loglik(small.data.select_units(reversed), s.beta, s.structural);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
  CHECK(a == doctest::Approx(total_loglik(small.data, s.beta, s.structural)).epsilon(1e-12));
}
