#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_support.hpp"

#include "mlca/selection.hpp"

#include <cmath>

using namespace mlca;
using mlca::testing::basic_spec;
using mlca::testing::monotone;
using mlca::testing::quick_config;

TEST_CASE("BIC reproduces the published model-selection tables") {
  CHECK(std::abs(bic(-442942.6846, 64, 87123) - 886613.374) < 0.01);
  // Independent arithmetic: -2 ll + npar ln N.
  const double by_hand = 2.0 * 432088.8293 + 59.0 * std::log(87123.0);
  CHECK(std::abs(bic(-432088.8293, 59, 87123) - by_hand) < 1e-9);
  CHECK_THROWS_AS(bic(-1.0, 1, 0.0), std::invalid_argument);
  CHECK(aic(-10.0, 3) == doctest::Approx(26.0));
}

TEST_CASE("entropy R-squared endpoints") {
  PosteriorTables p;
  p.n_low = 3;
  p.n_high = 2;
  p.low_marginal = Matrix::Constant(30, 3, 1.0 / 3.0);
  p.high = Matrix::Constant(6, 2, 0.5);
  CHECK(std::abs(entropy_r2(p, Level::low)) < 1e-12);
  CHECK(std::abs(entropy_r2(p, Level::high)) < 1e-12);

  p.low_marginal.setZero();
  p.high.setZero();
  for (int i = 0; i < 30; ++i) p.low_marginal(i, i % 3) = 1.0;
  for (int j = 0; j < 6; ++j) p.high(j, j % 2) = 1.0;
  CHECK(entropy_r2(p, Level::low) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(entropy_r2(p, Level::high) == doctest::Approx(1.0).epsilon(1e-12));

  // One occupied class: no entropy to reduce.
  p.low_marginal = Matrix::Zero(30, 3);
  p.low_marginal.col(1).setOnes();
  CHECK(entropy_r2(p, Level::low) == 1.0);

  const SimulatedData sim = simulate(basic_spec(2, 1, 20, 10, 1.0, 3));
  const FitResult f = monotone(fit_step1(sim.data, 1, quick_config()));
  CHECK(f.summary.entropy_r2_low == 1.0);
}

TEST_CASE("TIC penalty is close to the parameter count under correct specification") {
  const SimulatedData sim = simulate(basic_spec(3, 2, 300, 30, 2.5, 41));
  const FitConfig cfg = quick_config(5);
  const FitResult s1 = monotone(fit_step1(sim.data, 3, cfg));
  const FitResult s2a = monotone(fit_step2a(sim.data, s1, 2, cfg));
  const TicResult r = tic(sim.data, s2a, BlockSet{Block::gamma0, Block::delta0});
  CHECK(r.npar == 5);
  CHECK_FALSE(r.pseudo_inverse);
  CHECK(r.trace / r.npar > 0.6);
  CHECK(r.trace / r.npar < 1.4);
  CHECK(r.value == doctest::Approx(-2.0 * s2a.summary.loglik + 2.0 * r.trace));
}

TEST_CASE("TIC with nothing free is minus twice the log-likelihood") {
  const SimulatedData sim = simulate(basic_spec(2, 2, 20, 10, 2.0, 4));
  const FitResult s1 = monotone(fit_step1(sim.data, 2, quick_config()));
  const TicResult r = tic(sim.data, s1, BlockSet{});
  CHECK(r.npar == 0);
  CHECK(r.value == doctest::Approx(-2.0 * s1.summary.loglik));
}

TEST_CASE("hierarchical selection on a clear design") {
  const SimulatedData sim = simulate(basic_spec(2, 2, 80, 30, 2.5, 17));
  SelectionPlan plan;
  plan.t_max = 3;
  plan.m_max = 3;
  plan.criterion_high = HighCriterion::bic_group;
  const SelectionResult r = hierarchical_select(sim.data, plan, quick_config(3));
  monotone(r.step1_fit);
  monotone(r.final_fit);
  CHECK(r.n_low == 2);
  CHECK(r.n_high == 2);
  REQUIRE(r.step1.rows.size() == 3);
  REQUIRE(r.step2a.rows.size() == 3);
  REQUIRE(r.step2b.rows.size() == 3);
  int selected = 0;
  for (const auto& row : r.step2a.rows) {
    selected += row.selected ? 1 : 0;
    CHECK(row.tic.has_value());
    if (row.selected) CHECK(row.near_tie);
  }
  CHECK(selected == 1);
  CHECK(r.final_fit.structural.n_high() == 2);
  CHECK(r.step1.argmin("bic").value() == 1);
}

TEST_CASE("criterion report argmin skips failed rows") {
  CriterionReport rep;
  rep.criterion = "bic";
  CriterionRow a, b, c;
  a.bic = 10.0;
  b.bic = 5.0;
  b.error = "did not fit";
  c.bic = 7.0;
  rep.rows = {a, b, c};
  CHECK(rep.argmin("bic").value() == 2);
  CHECK(std::isnan(criterion_value(a, "tic")));
  CHECK_FALSE(rep.argmin("tic").has_value());
  CHECK_THROWS_AS(criterion_value(a, "nope"), std::invalid_argument);
}

TEST_CASE("selection plan validation") {
  SelectionPlan p;
  p.t_max = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.t_max = 2;
  p.near_tie_threshold = -1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("TIC penalty of a one-class model is close to the item count") {
  const SimulatedData sim = simulate(basic_spec(2, 1, 100, 100, 1.0, 31));
  const FitResult f = monotone(fit_step1(sim.data, 1, quick_config()));
  const TicResult r = tic(sim.data, f, BlockSet{Block::beta});
  CHECK(r.npar == 8);
  CHECK(std::abs(r.trace - 8.0) < 0.8);
}
