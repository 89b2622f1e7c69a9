#include "mlca/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace mlca {

namespace {

double log_sum_exp(const double* v, int n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, v[i]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - mx);
  return mx + std::log(s);
}

// Fills eta (length T-1) with the low-level linear predictors.
void low_predictors(const StructuralParams& p, int m, const double* z_high, const double* z_low,
                    double* eta) {
  const int t_free = p.n_low() - 1;
  const int p_high = p.n_high_covariates_low();
  const int p_low = p.n_low_covariates();
  const Matrix& slopes_low = p.has_random_slopes() ? p.random_slopes[static_cast<std::size_t>(m)]
                                                   : p.gamma2;
  for (int t = 0; t < t_free; ++t) {
    double e = p.gamma0(m, t);
    for (int q = 0; q < p_high; ++q) e += p.gamma1(t, q) * z_high[q];
    for (int q = 0; q < p_low; ++q) e += slopes_low(t, q) * z_low[q];
    eta[t] = e;
  }
}

void high_predictors(const StructuralParams& p, const double* z_high, double* eta) {
  const int m_free = p.n_high() - 1;
  const int p_high = p.n_high_covariates_high();
  for (int m = 0; m < m_free; ++m) {
    double e = p.delta0(m);
    for (int q = 0; q < p_high; ++q) e += p.delta1(m, q) * z_high[q];
    eta[m] = e;
  }
}

// Writes log softmax over {0, eta} into out (length n_free + 1).
void log_softmax_ref(const double* eta, int n_free, double* out) {
  out[0] = 0.0;
  for (int t = 0; t < n_free; ++t) out[t + 1] = clamp_logit(eta[t]);
  const double lse = log_sum_exp(out, n_free + 1);
  for (int t = 0; t <= n_free; ++t) out[t] -= lse;
}

void check_low_rows(const StructuralParams& p, Eigen::Index zh, Eigen::Index zl) {
  if (zh != p.n_high_covariates_low() || zl != p.n_low_covariates()) {
    throw std::invalid_argument("covariate row does not match slope dimensions");
  }
}

// Scratch space and per-group forward pass shared by the public kernels.
struct GroupPass {
  int n_low;
  int n_high;
  std::vector<double> eta;
  std::vector<double> log_pi;  // M x T when constant within the group
  std::vector<double> a;       // T
  std::vector<double> log_omega;
  std::vector<double> group_terms;  // M

  GroupPass(int t, int m)
      : n_low(t),
        n_high(m),
        eta(static_cast<std::size_t>(std::max(t, m))),
        log_pi(static_cast<std::size_t>(t * m)),
        a(static_cast<std::size_t>(t)),
        log_omega(static_cast<std::size_t>(m)),
        group_terms(static_cast<std::size_t>(m)) {}

  // lm_row(i) maps a member unit to its row of log masses.
  template <typename RowOf>
  double run(const ResponseData& data, int j, const Matrix& log_masses, RowOf lm_row,
             const StructuralParams& s, PosteriorTables* post) {
    const bool use_zh_low = s.n_high_covariates_low() > 0;
    const bool use_zh_high = s.n_high_covariates_high() > 0 && n_high > 1;
    const bool use_zl = s.n_low_covariates() > 0;
    // Eigen storage is column-major, so rows are copied out before use.
    const Eigen::RowVectorXd zh_row = data.z_high().row(j);
    const double* zh = zh_row.data();

    high_predictors(s, use_zh_high ? zh : nullptr, eta.data());
    log_softmax_ref(eta.data(), n_high - 1, log_omega.data());

    if (!use_zl) {
      for (int m = 0; m < n_high; ++m) {
        low_predictors(s, m, use_zh_low ? zh : nullptr, nullptr, eta.data());
        log_softmax_ref(eta.data(), n_low - 1, &log_pi[static_cast<std::size_t>(m * n_low)]);
      }
    }
    std::fill(group_terms.begin(), group_terms.end(), 0.0);
    Eigen::RowVectorXd zl_row;
    for (int i : data.members(j)) {
      const Eigen::Index r = lm_row(i);
      if (use_zl) zl_row = data.z_low().row(i);
      for (int m = 0; m < n_high; ++m) {
        double* lp = &log_pi[static_cast<std::size_t>(m * n_low)];
        if (use_zl) {
          low_predictors(s, m, use_zh_low ? zh : nullptr, zl_row.data(), eta.data());
          log_softmax_ref(eta.data(), n_low - 1, lp);
        }
        for (int t = 0; t < n_low; ++t) a[static_cast<std::size_t>(t)] = lp[t] + log_masses(r, t);
        const double s_im = log_sum_exp(a.data(), n_low);
        group_terms[static_cast<std::size_t>(m)] += s_im;
        if (post != nullptr) {
          for (int t = 0; t < n_low; ++t) {
            post->joint(i, t + n_low * m) = std::exp(a[static_cast<std::size_t>(t)] - s_im);
          }
        }
      }
    }
    for (int m = 0; m < n_high; ++m) group_terms[static_cast<std::size_t>(m)] += log_omega[static_cast<std::size_t>(m)];
    const double ll = log_sum_exp(group_terms.data(), n_high);
    if (post != nullptr) {
      for (int m = 0; m < n_high; ++m) {
        post->high(j, m) = std::exp(group_terms[static_cast<std::size_t>(m)] - ll);
      }
      for (int i : data.members(j)) {
        for (int t = 0; t < n_low; ++t) {
          double marginal = 0.0;
          for (int m = 0; m < n_high; ++m) {
            double& cell = post->joint(i, t + n_low * m);
            cell *= post->high(j, m);
            marginal += cell;
          }
          post->low_marginal(i, t) = marginal;
        }
      }
    }
    return ll;
  }
};

}  // namespace

double logistic(double eta) {
  const double e = clamp_logit(eta);
  if (e >= 0.0) return 1.0 / (1.0 + std::exp(-e));
  const double x = std::exp(e);
  return x / (1.0 + x);
}

double log_logistic(double eta) {
  const double e = clamp_logit(eta);
  if (e >= 0.0) return -std::log1p(std::exp(-e));
  return e - std::log1p(std::exp(e));
}

Vector reference_log_softmax(const Eigen::Ref<const Vector>& eta) {
  Vector out(eta.size() + 1);
  Vector e = eta;
  log_softmax_ref(e.data(), static_cast<int>(e.size()), out.data());
  return out;
}

Vector reference_softmax(const Eigen::Ref<const Vector>& eta) {
  return reference_log_softmax(eta).array().exp();
}

double item_response_prob(const MeasurementParams& beta, int t, int k) {
  if (t < 0 || t >= beta.n_classes() || k < 0 || k >= beta.n_items()) {
    throw std::out_of_range("class or item index out of range");
  }
  return logistic(beta.beta(t, k));
}

Vector log_class_prob_low(const StructuralParams& params, int m,
                          const Eigen::Ref<const Vector>& z_high,
                          const Eigen::Ref<const Vector>& z_low) {
  if (m < 0 || m >= params.n_high()) throw std::out_of_range("high-level class out of range");
  check_low_rows(params, z_high.size(), z_low.size());
  const Vector zh = z_high;
  const Vector zl = z_low;
  Vector eta(params.n_low() - 1);
  low_predictors(params, m, zh.data(), zl.data(), eta.data());
  return reference_log_softmax(eta);
}

Vector class_prob_low(const StructuralParams& params, int m, const Eigen::Ref<const Vector>& z_high,
                      const Eigen::Ref<const Vector>& z_low) {
  return log_class_prob_low(params, m, z_high, z_low).array().exp();
}

Vector log_class_prob_high(const StructuralParams& params, const Eigen::Ref<const Vector>& z_high) {
  if (params.n_high() == 1) return Vector::Zero(1);
  if (z_high.size() != params.n_high_covariates_high()) {
    throw std::invalid_argument("covariate row does not match slope dimensions");
  }
  const Vector zh = z_high;
  Vector eta(params.n_high() - 1);
  high_predictors(params, zh.data(), eta.data());
  return reference_log_softmax(eta);
}

Vector class_prob_high(const StructuralParams& params, const Eigen::Ref<const Vector>& z_high) {
  return log_class_prob_high(params, z_high).array().exp();
}

Matrix class_log_masses(const ResponseData& data, const MeasurementParams& beta) {
  if (beta.n_items() != data.n_items()) {
    throw std::invalid_argument("beta has " + std::to_string(beta.n_items()) + " items, data has " +
                                std::to_string(data.n_items()));
  }
  // log P(y | t) = y . beta_t + sum_k log(1 - p_tk), with log p - log(1-p) = beta.
  const Matrix clamped = beta.beta.unaryExpr([](double b) { return clamp_logit(b); });
  Vector offset(beta.n_classes());
  for (int t = 0; t < beta.n_classes(); ++t) {
    double s = 0.0;
    for (int k = 0; k < beta.n_items(); ++k) s += log_logistic(-clamped(t, k));
    offset(t) = s;
  }
  Matrix lm = data.y() * clamped.transpose();
  lm.rowwise() += offset.transpose();
  return lm;
}

void check_dimensions(const ResponseData& data, const MeasurementParams& beta,
                      const StructuralParams& s) {
  const int t = s.n_low();
  const int m = s.n_high();
  if (m < 1) throw std::invalid_argument("structural parameters need at least one group class");
  if (beta.n_classes() != t) {
    throw std::invalid_argument("beta has " + std::to_string(beta.n_classes()) +
                                " classes, structural parameters have " + std::to_string(t));
  }
  if (beta.n_items() != data.n_items()) {
    throw std::invalid_argument("beta item count does not match data");
  }
  if (s.gamma1.rows() != t - 1 || s.delta0.size() != m - 1 || s.delta1.rows() != m - 1) {
    throw std::invalid_argument("structural parameter blocks have inconsistent shapes");
  }
  if (s.has_random_slopes()) {
    if (static_cast<int>(s.random_slopes.size()) != m) {
      throw std::invalid_argument("random slopes need one block per group class");
    }
    for (const auto& b : s.random_slopes) {
      if (b.rows() != t - 1 || b.cols() != s.random_slopes.front().cols()) {
        throw std::invalid_argument("random slope blocks have inconsistent shapes");
      }
    }
  } else if (s.gamma2.rows() != t - 1) {
    throw std::invalid_argument("gamma2 has wrong number of rows");
  }
  const int pl = s.n_low_covariates();
  if (pl != 0 && pl != data.n_low_covariates()) {
    throw std::invalid_argument("level-1 slopes expect " + std::to_string(pl) +
                                " covariates, data has " + std::to_string(data.n_low_covariates()));
  }
  const int ph_low = s.n_high_covariates_low();
  const int ph_high = s.n_high_covariates_high();
  if ((ph_low != 0 && ph_low != data.n_high_covariates()) ||
      (ph_high != 0 && m > 1 && ph_high != data.n_high_covariates())) {
    throw std::invalid_argument("level-2 slopes do not match the data's level-2 covariates");
  }
}

EStep expectation(const ResponseData& data, const Matrix& log_masses,
                  const StructuralParams& structural, bool with_posteriors) {
  const int t = structural.n_low();
  const int m = structural.n_high();
  EStep out;
  out.group_loglik.resize(data.n_groups());
  PosteriorTables* post = nullptr;
  if (with_posteriors) {
    out.posteriors.n_low = t;
    out.posteriors.n_high = m;
    out.posteriors.joint.resize(data.n_units(), t * m);
    out.posteriors.high.resize(data.n_groups(), m);
    out.posteriors.low_marginal.resize(data.n_units(), t);
    post = &out.posteriors;
  }
  GroupPass pass(t, m);
  for (int j = 0; j < data.n_groups(); ++j) {
    out.group_loglik(j) =
        pass.run(data, j, log_masses, [](int i) { return static_cast<Eigen::Index>(i); },
                 structural, post);
  }
  return out;
}

double group_loglik(const ResponseData& data, int group, const MeasurementParams& beta,
                    const StructuralParams& structural) {
  check_dimensions(data, beta, structural);
  if (group < 0 || group >= data.n_groups()) throw std::out_of_range("group index out of range");
  const auto& members = data.members(group);
  Matrix y(static_cast<Eigen::Index>(members.size()), data.n_items());
  for (std::size_t r = 0; r < members.size(); ++r) {
    y.row(static_cast<Eigen::Index>(r)) = data.y().row(members[r]);
  }
  const Matrix clamped = beta.beta.unaryExpr([](double b) { return clamp_logit(b); });
  Matrix lm = y * clamped.transpose();
  for (int t = 0; t < beta.n_classes(); ++t) {
    double s = 0.0;
    for (int k = 0; k < beta.n_items(); ++k) s += log_logistic(-clamped(t, k));
    lm.col(t).array() += s;
  }
  std::vector<Eigen::Index> local(static_cast<std::size_t>(data.n_units()), 0);
  for (std::size_t r = 0; r < members.size(); ++r) {
    local[static_cast<std::size_t>(members[r])] = static_cast<Eigen::Index>(r);
  }
  GroupPass pass(structural.n_low(), structural.n_high());
  return pass.run(data, group, lm, [&](int i) { return local[static_cast<std::size_t>(i)]; },
                  structural, nullptr);
}

double total_loglik(const ResponseData& data, const MeasurementParams& beta,
                    const StructuralParams& structural) {
  check_dimensions(data, beta, structural);
  return expectation(data, class_log_masses(data, beta), structural, false).loglik();
}

PosteriorTables posterior_tables(const ResponseData& data, const MeasurementParams& beta,
                                 const StructuralParams& structural) {
  check_dimensions(data, beta, structural);
  return expectation(data, class_log_masses(data, beta), structural, true).posteriors;
}

int count_parameters(const ModelDimensions& d, Stage stage, bool random_slopes) {
  if (d.n_low < 1 || d.n_high < 1) throw std::invalid_argument("class counts must be at least 1");
  const int t = d.n_low;
  const int m = d.n_high;
  switch (stage) {
    case Stage::step1:
      return (t - 1) + t * d.n_items;
    case Stage::step2a:
      return (m - 1) + m * (t - 1);
    case Stage::step2b:
      return (m - 1) + m * (t - 1) + t * d.n_items;
    case Stage::step3: {
      int n = (m - 1) + m * (t - 1) + (t - 1) * d.p_high;
      n += random_slopes ? m * (t - 1) * d.p_low : (t - 1) * d.p_low;
      if (d.p_high > 0) n += (m - 1) * d.p_high;
      return n;
    }
  }
  return 0;
}

}  // namespace mlca
