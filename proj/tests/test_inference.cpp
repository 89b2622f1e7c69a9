#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_support.hpp"

#include "mlca/inference.hpp"

#include <cmath>

using namespace mlca;
using mlca::testing::basic_spec;
using mlca::testing::monotone;
using mlca::testing::quick_config;

namespace {

GenerativeSpec covariate_spec(double slope, double sep, std::uint64_t seed, int j = 60, int n_j = 20) {
  GenerativeSpec g = basic_spec(3, 2, j, n_j, sep, seed);
  g.low_covariates = {{"x", CovariateKind::standard_normal}};
  g.high_covariates = {{"z", CovariateKind::standard_normal}};
  g.structural.gamma2 = Matrix::Constant(2, 1, slope);
  g.structural.gamma1 = Matrix::Zero(2, 1);
  g.structural.delta1 = Matrix::Constant(1, 1, 0.5);
  return g;
}

}  // namespace

TEST_CASE("significance stars follow the p-value thresholds") {
  CHECK(significance_stars(0.005) == "***");
  CHECK(significance_stars(0.01) == "**");
  CHECK(significance_stars(0.049) == "**");
  CHECK(significance_stars(0.05) == "*");
  CHECK(significance_stars(0.099) == "*");
  CHECK(significance_stars(0.1).empty());
  CHECK(two_sided_p(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(two_sided_p(0.0) == 1.0);
}

TEST_CASE("bootstrap is reproducible and reports the step-3 point estimate") {
  const auto sim = simulate(covariate_spec(0.5, 2.5, 3));
  const FitConfig cfg = quick_config();
  const FitResult s2b = monotone(fit_step2b(sim.data.without_covariates(), 3, 2, cfg));
  const FitResult s3 = monotone(fit_step3(sim.data, s2b, cfg));
  BootstrapConfig boot;
  boot.n_replicates = 20;
  boot.seed = 9;
  const StructuralReport a = bootstrap_stage2(sim.data, s2b, s3, cfg, boot);
  boot.n_threads = 2;
  const StructuralReport b = bootstrap_stage2(sim.data, s2b, s3, cfg, boot);
  REQUIRE(a.rows.size() == 1 + 2 + 2);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].estimate == b.rows[i].estimate);
    CHECK(a.rows[i].se == b.rows[i].se);
    CHECK(a.rows[i].se > 0.0);
    CHECK(a.rows[i].p >= 0.0);
    CHECK(a.rows[i].p <= 1.0);
  }
  CHECK(find_coefficient(a, "gamma2", "x", 1).estimate == s3.structural.gamma2(0, 0));
  CHECK(find_coefficient(a, "delta1", "z", 1).estimate == s3.structural.delta1(0, 0));
  CHECK(a.n_dropped <= 2);
  CHECK_FALSE(a.unreliable);
}

TEST_CASE("duplicating every group shrinks bootstrap standard errors by about 1/sqrt(2)") {
  const auto sim = simulate(covariate_spec(0.5, 3.0, 17, 60, 20));
  const FitConfig cfg = quick_config();
  const FitResult s2b = monotone(fit_step2b(sim.data.without_covariates(), 3, 2, cfg));
  BootstrapConfig boot;
  boot.n_replicates = 150;
  boot.seed = 5;
  const StructuralReport single = bootstrap_stage2(sim.data, s2b, cfg, boot);
  std::vector<int> twice;
  for (int rep = 0; rep < 2; ++rep)
    for (int j = 0; j < sim.data.n_groups(); ++j) twice.push_back(j);
  const ResponseData doubled = sim.data.select_groups(twice);
  const StructuralReport dbl = bootstrap_stage2(doubled, s2b, cfg, boot);
  double ratio = 0.0;
  for (std::size_t i = 0; i < single.rows.size(); ++i) ratio += dbl.rows[i].se / single.rows[i].se;
  ratio /= static_cast<double>(single.rows.size());
  MESSAGE("mean SE ratio: " << ratio);
  CHECK(ratio == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.15));
}

TEST_CASE("naive estimator: zero covariate gives zero slope, level-2 columns are not estimable") {
  GenerativeSpec g = covariate_spec(0.0, 3.0, 8);
  const auto sim = simulate(g);
  Matrix zl(sim.data.n_units(), 2);
  zl.col(0) = sim.data.z_low().col(0);
  zl.col(1).setZero();
  ColumnNames names = sim.data.names();
  names.low_covariates = {"x", "zero"};
  const ResponseData data(sim.data.y(), sim.data.group_of(), zl, sim.data.z_high(), names);
  const FitResult s1 = monotone(fit_step1(data, 3, quick_config()));
  const StructuralReport r = naive_estimator(data, s1, quick_config());
  CHECK_FALSE(find_coefficient(r, "gamma1", "z", 1).estimable);
  CHECK_FALSE(find_coefficient(r, "gamma2", "zero", 1).estimable);
  const auto& x = find_coefficient(r, "gamma2", "x", 1);
  CHECK(x.estimable);
  CHECK(std::abs(x.estimate) < 4 * x.se);
  CHECK(x.se > 0.0);
}

TEST_CASE("naive estimator matches two-stage slopes when classes are perfectly separated") {
  GenerativeSpec g = covariate_spec(0.8, 8.0, 12, 80, 25);
  g.beta.beta = mlca::testing::separated_beta(3, 12, 8.0);
  const auto sim = simulate(g);
  const FitConfig cfg = quick_config();
  const FitResult s1 = monotone(fit_step1(sim.data, 3, cfg));
  const FitResult s2b = monotone(fit_step2b(sim.data.without_covariates(), 3, 2, cfg));
  const FitResult s3 = monotone(fit_step3(sim.data, s2b, cfg));
  CHECK(s1.summary.entropy_r2_low > 0.99);
  const StructuralReport naive = naive_estimator(sim.data, s1, cfg);
  for (int t = 1; t < 3; ++t) {
    const double a = find_coefficient(naive, "gamma2", "x", t).estimate;
    const double b = s3.structural.gamma2(t - 1, 0);
    CHECK(std::abs(a - b) < 0.05);
  }
}

TEST_CASE("bootstrap configuration validation") {
  BootstrapConfig b;
  b.n_replicates = 1;
  CHECK_THROWS_AS(b.validate(), ConfigError);
}
