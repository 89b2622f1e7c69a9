#include "mlca/inference.hpp"

#include "mlca/multinomial_logit.hpp"
#include "mlca/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>

namespace mlca {

void BootstrapConfig::validate() const {
  if (n_replicates < 2) throw ConfigError("bootstrap needs at least 2 replicates");
  if (replicate_random_starts < 0) throw ConfigError("replicate_random_starts must be non-negative");
}

std::string significance_stars(double p) {
  if (p < 0.01) return "***";
  if (p < 0.05) return "**";
  if (p < 0.1) return "*";
  return "";
}

double two_sided_p(double z) {
  if (std::isnan(z)) return 1.0;
  return std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), 0.0, 1.0);
}

const CoefficientRow& find_coefficient(const StructuralReport& report, const std::string& parameter,
                                       const std::string& covariate, int low_class, int high_class) {
  for (const auto& r : report.rows) {
    if (r.parameter == parameter && r.covariate == covariate && r.low_class == low_class &&
        r.high_class == high_class) {
      return r;
    }
  }
  throw std::out_of_range("no coefficient " + parameter + "/" + covariate);
}

namespace {

std::string column_name(const std::vector<std::string>& names, int q, const char* prefix) {
  if (q < static_cast<int>(names.size())) return names[static_cast<std::size_t>(q)];
  return prefix + std::to_string(q + 1);
}

// Slope rows in a fixed order: delta1, gamma1, then gamma2 (per group class
// when slopes are random). Estimates are left at zero.
std::vector<CoefficientRow> slope_layout(const StructuralParams& s, const ColumnNames& names) {
  std::vector<CoefficientRow> rows;
  const int t_n = s.n_low();
  const int m_n = s.n_high();
  for (int m = 1; m < m_n; ++m) {
    for (int q = 0; q < s.n_high_covariates_high(); ++q) {
      CoefficientRow r;
      r.block = CoefficientBlock::high;
      r.parameter = "delta1";
      r.low_class = m;
      r.covariate = column_name(names.high_covariates, q, "z");
      rows.push_back(r);
    }
  }
  for (int t = 1; t < t_n; ++t) {
    for (int q = 0; q < s.n_high_covariates_low(); ++q) {
      CoefficientRow r;
      r.parameter = "gamma1";
      r.low_class = t;
      r.covariate = column_name(names.high_covariates, q, "z");
      rows.push_back(r);
    }
  }
  const int slope_sets = s.has_random_slopes() ? m_n : 1;
  for (int m = 0; m < slope_sets; ++m) {
    for (int t = 1; t < t_n; ++t) {
      for (int q = 0; q < s.n_low_covariates(); ++q) {
        CoefficientRow r;
        r.parameter = "gamma2";
        r.high_class = s.has_random_slopes() ? m : -1;
        r.low_class = t;
        r.covariate = column_name(names.low_covariates, q, "x");
        rows.push_back(r);
      }
    }
  }
  return rows;
}

Vector slope_values(const StructuralParams& s) {
  std::vector<double> v;
  for (Eigen::Index m = 0; m < s.delta1.rows(); ++m)
    for (Eigen::Index q = 0; q < s.delta1.cols(); ++q) v.push_back(s.delta1(m, q));
  for (Eigen::Index t = 0; t < s.gamma1.rows(); ++t)
    for (Eigen::Index q = 0; q < s.gamma1.cols(); ++q) v.push_back(s.gamma1(t, q));
  if (s.has_random_slopes()) {
    for (const auto& g : s.random_slopes)
      for (Eigen::Index t = 0; t < g.rows(); ++t)
        for (Eigen::Index q = 0; q < g.cols(); ++q) v.push_back(g(t, q));
  } else {
    for (Eigen::Index t = 0; t < s.gamma2.rows(); ++t)
      for (Eigen::Index q = 0; q < s.gamma2.cols(); ++q) v.push_back(s.gamma2(t, q));
  }
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

double structural_distance(const StructuralParams& a, const StructuralParams& b) {
  double d = (a.gamma0 - b.gamma0).cwiseAbs().sum() + (a.gamma1 - b.gamma1).cwiseAbs().sum() +
             (a.delta0 - b.delta0).cwiseAbs().sum() + (a.delta1 - b.delta1).cwiseAbs().sum();
  if (a.has_random_slopes()) {
    for (std::size_t m = 0; m < a.random_slopes.size(); ++m)
      d += (a.random_slopes[m] - b.random_slopes[m]).cwiseAbs().sum();
  } else {
    d += (a.gamma2 - b.gamma2).cwiseAbs().sum();
  }
  return d;
}

// Group-class permutation of `replicate` closest to `target`; the identity
// wins ties.
StructuralParams align_to(const StructuralParams& replicate, const StructuralParams& target) {
  std::vector<int> order(static_cast<std::size_t>(replicate.n_high()));
  std::iota(order.begin(), order.end(), 0);
  StructuralParams best = replicate;
  double best_d = structural_distance(replicate, target);
  while (std::next_permutation(order.begin(), order.end())) {
    StructuralParams cand = permute_high_classes(replicate, order);
    const double d = structural_distance(cand, target);
    if (d < best_d) {
      best_d = d;
      best = std::move(cand);
    }
  }
  return best;
}

ResponseData resample(const ResponseData& data, ResampleUnit unit, std::mt19937_64& rng) {
  const int j_n = data.n_groups();
  std::vector<int> groups(static_cast<std::size_t>(j_n));
  if (unit == ResampleUnit::units_within_groups) {
    std::iota(groups.begin(), groups.end(), 0);
  } else {
    std::uniform_int_distribution<int> pick(0, j_n - 1);
    for (int& g : groups) g = pick(rng);
  }
  if (unit == ResampleUnit::groups) return data.select_groups(groups);
  std::vector<std::vector<int>> units;
  units.reserve(groups.size());
  for (int g : groups) {
    const auto& members = data.members(g);
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    std::vector<int> u(members.size());
    for (int& i : u) i = members[pick(rng)];
    units.push_back(std::move(u));
  }
  return data.select_units(units);
}

bool any_on_bound(const Vector& v) {
  return v.size() > 0 && v.cwiseAbs().maxCoeff() >= kLogitBound - 1e-9;
}

void fill_inference(CoefficientRow& r) {
  if (!r.estimable || !(r.se > 0.0) || !std::isfinite(r.se)) {
    r.z = std::numeric_limits<double>::quiet_NaN();
    r.p = std::numeric_limits<double>::quiet_NaN();
    r.stars.clear();
    return;
  }
  r.z = r.estimate / r.se;
  r.p = two_sided_p(r.z);
  r.stars = significance_stars(r.p);
}

}  // namespace

StructuralReport bootstrap_stage2(const ResponseData& data, const FitResult& step2b,
                                  const FitConfig& config, const BootstrapConfig& boot,
                                  const Step3Options& options) {
  boot.validate();
  const FitResult point = fit_step3(data, step2b, config, options);
  return bootstrap_stage2(data, step2b, point, config, boot, options);
}

StructuralReport bootstrap_stage2(const ResponseData& data, const FitResult& step2b,
                                  const FitResult& point, const FitConfig& config,
                                  const BootstrapConfig& boot, const Step3Options& options) {
  boot.validate();
  config.validate();
  StructuralReport report;
  report.method = "bootstrap";
  report.point = point.structural;
  report.n_replicates = boot.n_replicates;
  report.rows = slope_layout(point.structural, data.names());
  const Vector estimate = slope_values(point.structural);

  const auto n_rep = static_cast<std::size_t>(boot.n_replicates);
  std::vector<std::optional<Vector>> replicates(n_rep);
  const StartingValues warm{point.beta, point.structural};
  parallel_for(boot.n_replicates, boot.n_threads, [&](int r) {
    std::seed_seq seq{static_cast<std::uint32_t>(boot.seed & 0xffffffffu),
                      static_cast<std::uint32_t>(boot.seed >> 32), static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    FitConfig cfg = config;
    cfg.n_threads = 1;
    cfg.n_random_starts = boot.replicate_random_starts;
    cfg.seed = rng();
    try {
      const ResponseData sample = resample(data, boot.resample_unit, rng);
      const FitResult f = fit_step3(sample, step2b, cfg, options, std::span<const StartingValues>(&warm, 1));
      if (!f.summary.converged) return;
      replicates[static_cast<std::size_t>(r)] = slope_values(align_to(f.structural, point.structural));
    } catch (const std::exception&) {
      // Rank-deficient or failed replicate: counted as dropped below.
    }
  });

  std::vector<const Vector*> kept;
  for (const auto& r : replicates) {
    if (r) kept.push_back(&*r);
  }
  report.n_dropped = boot.n_replicates - static_cast<int>(kept.size());
  report.unreliable = report.n_dropped * 10 > boot.n_replicates || kept.size() < 2;
  report.boundary = point.summary.boundary || any_on_bound(estimate);

  for (std::size_t c = 0; c < report.rows.size(); ++c) {
    auto& row = report.rows[c];
    row.estimate = estimate(static_cast<Eigen::Index>(c));
    if (kept.size() >= 2) {
      double mean = 0.0;
      for (const Vector* v : kept) mean += (*v)(static_cast<Eigen::Index>(c));
      mean /= static_cast<double>(kept.size());
      double ss = 0.0;
      for (const Vector* v : kept) {
        const double d = (*v)(static_cast<Eigen::Index>(c)) - mean;
        ss += d * d;
      }
      row.se = std::sqrt(ss / static_cast<double>(kept.size() - 1));
    } else {
      row.se = std::numeric_limits<double>::quiet_NaN();
    }
    fill_inference(row);
  }
  return report;
}

StructuralReport naive_estimator(const ResponseData& data, const FitResult& step1,
                                 const FitConfig& config) {
  config.validate();
  const Matrix& post = step1.posteriors.low_marginal;
  if (post.rows() != data.n_units()) throw std::invalid_argument("step-1 posteriors do not match the data");
  const auto t_n = static_cast<int>(post.cols());
  const int n = data.n_units();
  const int p1 = data.n_low_covariates();
  const int p2 = data.n_high_covariates();
  const int j_n = data.n_groups();
  if (p1 + p2 == 0) throw std::invalid_argument("naive estimator needs covariates");

  // Columns: intercept, level-1 covariates, group dummies, level-2 covariates.
  const int dummy0 = 1 + p1;
  const int high0 = dummy0 + (j_n - 1);
  const int d_n = high0 + p2;
  Matrix design = Matrix::Zero(n, d_n);
  design.col(0).setOnes();
  design.middleCols(1, p1) = data.z_low();
  for (int i = 0; i < n; ++i) {
    const int g = data.group_of()[static_cast<std::size_t>(i)];
    if (g > 0) design(i, dummy0 + g - 1) = 1.0;
    for (int q = 0; q < p2; ++q) design(i, high0 + q) = data.z_high()(g, q);
  }

  // Greedy rank screen in column order.
  std::vector<bool> keep(static_cast<std::size_t>(d_n), false);
  Matrix basis(n, 0);
  for (int c = 0; c < d_n; ++c) {
    Vector col = design.col(c);
    const double norm0 = col.norm();
    if (norm0 == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      if (basis.cols() > 0) col -= basis * (basis.transpose() * col);
    }
    const double norm1 = col.norm();
    if (norm1 > 1e-8 * norm0) {
      basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
      basis.col(basis.cols() - 1) = col / norm1;
      keep[static_cast<std::size_t>(c)] = true;
    }
  }

  Matrix outcome = Matrix::Zero(n, t_n);
  for (int i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    post.row(i).maxCoeff(&best);
    outcome(i, best) = 1.0;
  }

  StructuralReport report;
  report.method = "naive";
  report.point = StructuralParams::zeros(t_n, 1, p1, p2);
  MultinomialLogitOptions opts{config.m_step_newton_tolerance, std::max(config.m_step_max_newton, 200),
                               kLogitBound};
  Matrix start = Matrix::Zero(std::max(t_n - 1, 0), d_n);
  Matrix cov;
  std::vector<int> position(static_cast<std::size_t>(d_n), -1);
  std::size_t n_est = 0;
  MultinomialLogitFit fit;
  if (t_n > 1) {
    fit = fit_multinomial_logit(design, outcome, start, keep, opts);
    n_est = fit.estimated_columns.size();
    for (std::size_t e = 0; e < n_est; ++e) position[static_cast<std::size_t>(fit.estimated_columns[e])] = static_cast<int>(e);
    const auto dim = fit.information.rows();
    if (dim > 0) {
      Eigen::LDLT<Matrix> ldlt(fit.information);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        cov = ldlt.solve(Matrix::Identity(dim, dim));
      } else {
        cov = fit.information.completeOrthogonalDecomposition().pseudoInverse();
      }
    }
    report.boundary = fit.boundary || any_on_bound(Eigen::Map<const Vector>(fit.coefficients.data(), fit.coefficients.size()));
    report.point.gamma0.row(0) = fit.coefficients.col(0).transpose();
    report.point.gamma1 = fit.coefficients.middleCols(high0, p2);
    report.point.gamma2 = fit.coefficients.middleCols(1, p1);
  }

  auto make_row = [&](const char* parameter, int t, int col, const std::string& name) {
    CoefficientRow r;
    r.parameter = parameter;
    r.low_class = t;
    r.covariate = name;
    const int pos = position[static_cast<std::size_t>(col)];
    r.estimable = pos >= 0;
    if (r.estimable) {
      r.estimate = fit.coefficients(t - 1, col);
      const auto idx = static_cast<Eigen::Index>(static_cast<std::size_t>(t - 1) * n_est + static_cast<std::size_t>(pos));
      r.se = std::sqrt(std::max(cov(idx, idx), 0.0));
    } else {
      r.estimate = std::numeric_limits<double>::quiet_NaN();
      r.se = std::numeric_limits<double>::quiet_NaN();
    }
    fill_inference(r);
    report.rows.push_back(r);
  };
  const ColumnNames& names = data.names();
  for (int t = 1; t < t_n; ++t)
    for (int q = 0; q < p2; ++q) make_row("gamma1", t, high0 + q, column_name(names.high_covariates, q, "z"));
  for (int t = 1; t < t_n; ++t)
    for (int q = 0; q < p1; ++q) make_row("gamma2", t, 1 + q, column_name(names.low_covariates, q, "x"));
  return report;
}

}  // namespace mlca
