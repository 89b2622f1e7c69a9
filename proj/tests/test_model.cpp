#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "test_support.hpp"

#include "mlca/model.hpp"

#include <cmath>

using namespace mlca;
using mlca::testing::random_structural;
using mlca::testing::uniform_matrix;

namespace {

ResponseData random_tiny_data(int j_n, int k, int p_low, int p_high, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(1, 4);
  std::bernoulli_distribution coin(0.5);
  std::vector<int> group_of;
  for (int j = 0; j < j_n; ++j) {
    const int n = size(rng);
    for (int i = 0; i < n; ++i) group_of.push_back(j);
  }
  const auto n = static_cast<Eigen::Index>(group_of.size());
  Matrix y(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) y(i, c) = coin(rng) ? 1.0 : 0.0;
  return ResponseData(y, group_of, uniform_matrix(n, p_low, -2, 2, rng), uniform_matrix(j_n, p_high, -2, 2, rng));
}

}  // namespace

TEST_CASE("log-space likelihood matches brute-force enumeration") {
  std::mt19937_64 rng(12345);
  std::uniform_int_distribution<int> d3(1, 3);
  std::uniform_int_distribution<int> d2(1, 2);
  std::uniform_int_distribution<int> d02(0, 2);
  std::bernoulli_distribution coin(0.5);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const int t = d3(rng), m = d2(rng), k = d3(rng), j = d3(rng);
    const int p_low = t > 1 ? d02(rng) : 0;
    const int p_high = d02(rng);
    const bool rs = p_low > 0 && coin(rng);
    const ResponseData data = random_tiny_data(j, k, p_low, p_high, rng);
    const MeasurementParams beta{uniform_matrix(t, k, -3, 3, rng)};
    const StructuralParams s = random_structural(t, m, p_low, p_high, rs, rng);
    const double a = total_loglik(data, beta, s);
    const double b = enumeration_loglik(data, beta, s);
    worst = std::max(worst, std::abs(a - b));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("class probabilities sum to one and softmax is shift invariant") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    const StructuralParams s = random_structural(4, 3, 2, 2, rep % 2 == 0, rng);
    const Vector zh = uniform_matrix(2, 1, -3, 3, rng).col(0);
    const Vector zl = uniform_matrix(2, 1, -3, 3, rng).col(0);
    for (int m = 0; m < 3; ++m) {
      const Vector p = class_prob_low(s, m, zh, zl);
      CHECK(std::abs(p.sum() - 1.0) < 1e-12);
      CHECK(p.minCoeff() > 0.0);
    }
    CHECK(std::abs(class_prob_high(s, zh).sum() - 1.0) < 1e-12);
    const Vector eta = uniform_matrix(4, 1, -10, 10, rng).col(0);
    const Vector p1 = reference_softmax(eta);
    CHECK(std::abs(p1.sum() - 1.0) < 1e-12);
    CHECK(std::abs(reference_log_softmax(eta).array().exp().sum() - 1.0) < 1e-12);
    // Adding c to every non-reference logit equals subtracting c from the
    // reference one.
    const Vector shifted = (eta.array() + 3.7).matrix();
    const Vector p2 = reference_softmax(shifted);
    const double ratio = p2(1) / p2(0);
    CHECK(ratio == doctest::Approx(std::exp(eta(0) + 3.7)).epsilon(1e-9));
    CHECK(p2(2) / p2(1) == doctest::Approx(p1(2) / p1(1)).epsilon(1e-12));
  }
}

TEST_CASE("logits are clamped to the bound") {
  CHECK(clamp_logit(40.0) == kLogitBound);
  CHECK(clamp_logit(-40.0) == -kLogitBound);
  CHECK(clamp_logit(3.0) == 3.0);
  const MeasurementParams b{Matrix::Constant(1, 1, 1000.0)};
  CHECK(item_response_prob(b, 0, 0) == doctest::Approx(logistic(25.0)).epsilon(1e-15));
  CHECK_THROWS_AS(item_response_prob(b, 1, 0), std::out_of_range);
}

TEST_CASE("posterior tables are normalized and consistent") {
  std::mt19937_64 rng(99);
  const ResponseData data = random_tiny_data(3, 3, 1, 1, rng);
  const MeasurementParams beta{uniform_matrix(3, 3, -2, 2, rng)};
  const StructuralParams s = random_structural(3, 2, 1, 1, false, rng);
  const PosteriorTables p = posterior_tables(data, beta, s);
  for (Eigen::Index i = 0; i < p.joint.rows(); ++i) {
    CHECK(std::abs(p.joint.row(i).sum() - 1.0) < 1e-12);
    CHECK(std::abs(p.low_marginal.row(i).sum() - 1.0) < 1e-12);
  }
  for (Eigen::Index j = 0; j < p.high.rows(); ++j) CHECK(std::abs(p.high.row(j).sum() - 1.0) < 1e-12);
  // Summing the joint over t for any member recovers the group posterior.
  for (int j = 0; j < data.n_groups(); ++j) {
    const int i = data.members(j).front();
    for (int m = 0; m < 2; ++m) {
      double s_m = 0.0;
      for (int t = 0; t < 3; ++t) s_m += p.joint_at(i, t, m);
      CHECK(std::abs(s_m - p.high(j, m)) < 1e-12);
    }
  }
}

TEST_CASE("parameter counts") {
  CHECK(count_parameters({5, 1, 12, 0, 0}, Stage::step1) == 64);
  CHECK(count_parameters({5, 3, 12, 0, 0}, Stage::step2a) == 14);
  CHECK(count_parameters({4, 3, 12, 0, 0}, Stage::step2b) == 59);
  CHECK(count_parameters({1, 1, 12, 0, 0}, Stage::step1) == 12);
  CHECK(count_parameters({3, 2, 6, 2, 1}, Stage::step3) == 2 * 2 + 2 * 1 + 2 * 2 + 1 + 1);
}

TEST_CASE("data validation") {
  Matrix y(2, 2);
  y << 0, 1, 1, 2;
  CHECK_THROWS_AS(ResponseData(y, {0, 0}), DataError);
  y(1, 1) = 1;
  CHECK_THROWS_AS(ResponseData(y, {0, 2}), DataError);
  CHECK_NOTHROW(ResponseData(y, {0, 0}));
}
