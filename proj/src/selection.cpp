#include "mlca/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mlca {

double bic(double loglik, int npar, double sample_size) {
  if (!(sample_size >= 1.0)) throw std::invalid_argument("sample size must be at least 1");
  return -2.0 * loglik + npar * std::log(sample_size);
}

double aic(double loglik, int npar) { return -2.0 * loglik + 2.0 * npar; }

namespace {

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

double entropy_ratio(const Matrix& post) {
  const double n = static_cast<double>(post.rows());
  if (post.rows() == 0 || post.cols() <= 1) return 1.0;
  const Vector share = post.colwise().sum().transpose() / n;
  double total = 0.0;
  for (Eigen::Index c = 0; c < share.size(); ++c) total -= xlogx(share(c));
  if (total <= 0.0) return 1.0;
  double mean_entropy = 0.0;
  for (Eigen::Index r = 0; r < post.rows(); ++r)
    for (Eigen::Index c = 0; c < post.cols(); ++c) mean_entropy -= xlogx(post(r, c));
  mean_entropy /= n;
  return std::clamp((total - mean_entropy) / total, 0.0, 1.0);
}

}  // namespace

double entropy_r2(const PosteriorTables& posteriors, Level level) {
  return entropy_ratio(level == Level::low ? posteriors.low_marginal : posteriors.high);
}

TicResult tic(const ResponseData& data, const FitResult& fit, BlockSet free_blocks) {
  MeasurementParams beta = fit.beta;
  StructuralParams s = fit.structural;
  const Vector theta = pack_parameters(beta, s, free_blocks);
  const auto p = static_cast<int>(theta.size());
  TicResult out;
  out.npar = p;
  const double loglik = total_loglik(data, fit.beta, fit.structural);
  if (p == 0) {
    out.value = -2.0 * loglik;
    return out;
  }
  const Matrix scores = group_scores(data, fit.beta, fit.structural, free_blocks);
  const Matrix outer = scores.transpose() * scores;

  auto total_score = [&](const Vector& at) {
    MeasurementParams b = fit.beta;
    StructuralParams st = fit.structural;
    unpack_parameters(at, free_blocks, b, st);
    return Vector(group_scores(data, b, st, free_blocks).colwise().sum().transpose());
  };
  Matrix hessian(p, p);
  for (int a = 0; a < p; ++a) {
    const double h = 1e-5 * std::max(1.0, std::abs(theta(a)));
    Vector up = theta;
    Vector down = theta;
    up(a) += h;
    down(a) -= h;
    hessian.col(a) = (total_score(up) - total_score(down)) / (2.0 * h);
  }
  const Matrix info = -0.5 * (hessian + hessian.transpose());

  Eigen::JacobiSVD<Matrix> svd(info, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector sv = svd.singularValues();
  out.condition_number = sv(p - 1) > 0.0 ? sv(0) / sv(p - 1) : std::numeric_limits<double>::infinity();

  Matrix inverse;
  Eigen::LDLT<Matrix> ldlt(info);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && sv(p - 1) > 1e-12 * sv(0)) {
    inverse = ldlt.solve(Matrix::Identity(p, p));
  } else {
    out.pseudo_inverse = true;
    Vector inv_sv = Vector::Zero(p);
    for (int i = 0; i < p; ++i) {
      if (sv(i) > 1e-10 * sv(0)) inv_sv(i) = 1.0 / sv(i);
    }
    inverse = svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();
  }
  out.trace = (inverse * outer).trace();
  out.value = -2.0 * loglik + 2.0 * out.trace;
  return out;
}

void SelectionPlan::validate() const {
  if (t_max < 1 || m_max < 1) throw ConfigError("t_max and m_max must be at least 1");
  if (!(near_tie_threshold >= 0.0)) throw ConfigError("near-tie threshold must be non-negative");
}

double criterion_value(const CriterionRow& row, const std::string& criterion) {
  if (criterion == "bic") return row.bic;
  if (criterion == "bic_group") return row.bic_group;
  if (criterion == "aic") return row.aic;
  if (criterion == "tic") {
    return row.tic ? *row.tic : std::numeric_limits<double>::quiet_NaN();
  }
  throw std::invalid_argument("unknown criterion " + criterion);
}

std::optional<std::size_t> CriterionReport::argmin(const std::string& criterion) const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!rows[i].error.empty()) continue;
    const double v = criterion_value(rows[i], criterion);
    if (std::isnan(v)) continue;
    if (!best || v < criterion_value(rows[*best], criterion)) best = i;
  }
  return best;
}

namespace {

const char* name_of(LowCriterion c) { return c == LowCriterion::bic ? "bic" : "aic"; }

const char* name_of(HighCriterion c) {
  switch (c) {
    case HighCriterion::tic:
      return "tic";
    case HighCriterion::bic_group:
      return "bic_group";
    case HighCriterion::bic:
      return "bic";
  }
  return "tic";
}

CriterionRow row_from(const FitResult& f, int t, int m) {
  CriterionRow r;
  r.n_low = t;
  r.n_high = m;
  r.loglik = f.summary.loglik;
  r.npar = f.summary.npar;
  r.bic = f.summary.bic;
  r.bic_group = f.summary.bic_group;
  r.aic = aic(f.summary.loglik, f.summary.npar);
  r.tic = f.summary.tic;
  r.entropy_r2_low = f.summary.entropy_r2_low;
  r.entropy_r2_high = f.summary.entropy_r2_high;
  r.converged = f.summary.converged;
  return r;
}

// Marks the minimizer and near ties; returns the selected row.
std::size_t finish_report(CriterionReport& report, double threshold) {
  const auto best = report.argmin(report.criterion);
  if (!best) {
    std::string msg = report.title + ": every candidate failed";
    for (const auto& r : report.rows) {
      if (!r.error.empty()) msg += "; (T=" + std::to_string(r.n_low) + ", M=" + std::to_string(r.n_high) + ") " + r.error;
    }
    throw EstimationError(msg);
  }
  const double min_value = criterion_value(report.rows[*best], report.criterion);
  for (auto& r : report.rows) {
    if (!r.error.empty()) continue;
    const double v = criterion_value(r, report.criterion);
    r.near_tie = v - min_value <= threshold;
  }
  report.rows[*best].selected = true;
  return *best;
}

}  // namespace

Step1Selection select_step1(const ResponseData& data, const SelectionPlan& plan,
                            const FitConfig& config) {
  plan.validate();
  config.validate();
  Step1Selection out;
  out.report.title = "Step 1: simple latent class model on pooled data";
  out.report.scanned = "T";
  out.report.criterion = name_of(plan.criterion_low);
  std::vector<std::optional<FitResult>> fits(static_cast<std::size_t>(plan.t_max));
  for (int t = 1; t <= plan.t_max; ++t) {
    try {
      FitResult f = fit_step1(data, t, config);
      out.report.rows.push_back(row_from(f, t, 1));
      fits[static_cast<std::size_t>(t - 1)] = std::move(f);
    } catch (const std::exception& e) {
      CriterionRow r;
      r.n_low = t;
      r.error = e.what();
      out.report.rows.push_back(r);
    }
  }
  const std::size_t chosen = finish_report(out.report, plan.near_tie_threshold);
  out.n_low = out.report.rows[chosen].n_low;
  out.fit = std::move(*fits[static_cast<std::size_t>(out.n_low - 1)]);
  return out;
}

SelectionResult hierarchical_select(const ResponseData& data, const SelectionPlan& plan,
                                    const FitConfig& config) {
  SelectionResult result;
  Step1Selection s1 = select_step1(data, plan, config);
  result.step1 = std::move(s1.report);
  result.n_low_step1 = s1.n_low;
  result.step1_fit = std::move(s1.fit);

  result.step2a.title = "Step 2a: group-level classes with the measurement model fixed";
  result.step2a.scanned = "M";
  result.step2a.criterion = name_of(plan.criterion_high);
  std::vector<std::optional<FitResult>> step2a_fits(static_cast<std::size_t>(plan.m_max));
  const ResponseData pooled = data.without_covariates();
  for (int m = 1; m <= plan.m_max; ++m) {
    try {
      FitResult f = fit_step2a(data, result.step1_fit, m, config);
      f.summary.tic = tic(pooled, f, BlockSet{Block::gamma0, Block::delta0}).value;
      result.step2a.rows.push_back(row_from(f, result.n_low_step1, m));
      step2a_fits[static_cast<std::size_t>(m - 1)] = std::move(f);
    } catch (const std::exception& e) {
      CriterionRow r;
      r.n_low = result.n_low_step1;
      r.n_high = m;
      r.error = e.what();
      result.step2a.rows.push_back(r);
    }
  }
  const std::size_t m_row = finish_report(result.step2a, plan.near_tie_threshold);
  result.n_high = result.step2a.rows[m_row].n_high;
  const FitResult& chosen_2a = *step2a_fits[static_cast<std::size_t>(result.n_high - 1)];

  result.step2b.title = "Step 2b: measurement model re-estimated with group-level classes";
  result.step2b.scanned = "T";
  result.step2b.criterion = name_of(plan.criterion_low);
  std::vector<std::optional<FitResult>> step2b_fits(static_cast<std::size_t>(plan.t_max));
  for (int t = 1; t <= plan.t_max; ++t) {
    try {
      std::vector<StartingValues> warm;
      if (t == result.n_low_step1) warm.push_back({chosen_2a.beta, chosen_2a.structural});
      FitResult f = fit_step2b(data, t, result.n_high, config, plan.step2b_variant,
                               chosen_2a.structural.delta0, warm);
      result.step2b.rows.push_back(row_from(f, t, result.n_high));
      step2b_fits[static_cast<std::size_t>(t - 1)] = std::move(f);
    } catch (const std::exception& e) {
      CriterionRow r;
      r.n_low = t;
      r.n_high = result.n_high;
      r.error = e.what();
      result.step2b.rows.push_back(r);
    }
  }
  const std::size_t t2 = finish_report(result.step2b, plan.near_tie_threshold);
  result.n_low = result.step2b.rows[t2].n_low;
  result.final_fit = *step2b_fits[static_cast<std::size_t>(result.n_low - 1)];
  return result;
}

}  // namespace mlca
