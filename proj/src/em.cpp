#include "mlca/em.hpp"

#include "mlca/multinomial_logit.hpp"
#include "mlca/parallel.hpp"
#include "mlca/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>

namespace mlca {

void FitConfig::validate() const {
  if (!(loglik_tolerance > 0.0)) throw ConfigError("loglik_tolerance must be positive");
  if (n_random_starts < 0) throw ConfigError("n_random_starts must be non-negative");
  if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
  if (!(m_step_newton_tolerance > 0.0)) throw ConfigError("m_step_newton_tolerance must be positive");
  if (m_step_max_newton < 1) throw ConfigError("m_step_max_newton must be at least 1");
}

// ---------------------------------------------------------------------------
// Parameter vectors

namespace {

template <typename Visit>
void for_each_block(MeasurementParams& beta, StructuralParams& s, BlockSet blocks, Visit visit) {
  auto rowmajor = [&](Matrix& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) visit(m(r, c));
  };
  if (blocks.contains(Block::beta)) rowmajor(beta.beta);
  if (blocks.contains(Block::gamma0)) rowmajor(s.gamma0);
  if (blocks.contains(Block::gamma1)) rowmajor(s.gamma1);
  if (blocks.contains(Block::gamma2)) {
    if (s.has_random_slopes()) {
      for (auto& m : s.random_slopes) rowmajor(m);
    } else {
      rowmajor(s.gamma2);
    }
  }
  if (blocks.contains(Block::delta0)) {
    for (Eigen::Index m = 0; m < s.delta0.size(); ++m) visit(s.delta0(m));
  }
  if (blocks.contains(Block::delta1)) rowmajor(s.delta1);
}

}  // namespace

Vector pack_parameters(const MeasurementParams& beta, const StructuralParams& structural,
                       BlockSet blocks) {
  MeasurementParams b = beta;
  StructuralParams s = structural;
  std::vector<double> out;
  for_each_block(b, s, blocks, [&](double& v) { out.push_back(v); });
  return Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size()));
}

void unpack_parameters(const Vector& values, BlockSet blocks, MeasurementParams& beta,
                       StructuralParams& structural) {
  Eigen::Index pos = 0;
  for_each_block(beta, structural, blocks, [&](double& v) {
    if (pos >= values.size()) throw std::invalid_argument("parameter vector too short");
    v = values(pos++);
  });
  if (pos != values.size()) throw std::invalid_argument("parameter vector too long");
}

int count_free_parameters(const StartingValues& model, BlockSet freeze) {
  return static_cast<int>(
      pack_parameters(model.measurement, model.structural, freeze.complement()).size());
}

// ---------------------------------------------------------------------------
// Covariate rank check

namespace {

std::string covariate_label(const std::vector<std::string>& names, const char* prefix, int q) {
  if (static_cast<std::size_t>(q) < names.size()) return names[static_cast<std::size_t>(q)];
  return std::string(prefix) + "[" + std::to_string(q) + "]";
}

// Columns (by label) that do not raise the rank of [1, previous columns].
std::vector<std::string> dependent_columns(const Matrix& cols, const std::vector<std::string>& labels) {
  std::vector<std::string> bad;
  Matrix basis = Matrix::Ones(cols.rows(), 1);
  int rank = 1;
  for (Eigen::Index c = 0; c < cols.cols(); ++c) {
    if (cols.col(c).isZero(0.0)) continue;
    Matrix trial(cols.rows(), basis.cols() + 1);
    trial << basis, cols.col(c);
    Eigen::ColPivHouseholderQR<Matrix> qr(trial);
    qr.setThreshold(1e-10);
    if (static_cast<int>(qr.rank()) > rank) {
      basis = std::move(trial);
      rank += 1;
    } else {
      bad.push_back(labels[static_cast<std::size_t>(c)]);
    }
  }
  return bad;
}

}  // namespace

void check_covariate_rank(const ResponseData& data) {
  const int p1 = data.n_low_covariates();
  const int p2 = data.n_high_covariates();
  if (p1 + p2 == 0) return;
  const auto& names = data.names();
  std::vector<std::string> labels;
  Matrix unit(data.n_units(), p2 + p1);
  for (int q = 0; q < p2; ++q) {
    labels.push_back(covariate_label(names.high_covariates, "z_high", q));
    for (int i = 0; i < data.n_units(); ++i) {
      unit(i, q) = data.z_high()(data.group_of()[static_cast<std::size_t>(i)], q);
    }
  }
  for (int q = 0; q < p1; ++q) {
    labels.push_back(covariate_label(names.low_covariates, "z_low", q));
    unit.col(p2 + q) = data.z_low().col(q);
  }
  auto bad = dependent_columns(unit, labels);
  if (p2 > 0 && data.n_groups() > 1) {
    std::vector<std::string> high_labels(labels.begin(), labels.begin() + p2);
    for (auto& b : dependent_columns(data.z_high(), high_labels)) {
      if (std::find(bad.begin(), bad.end(), b) == bad.end()) bad.push_back(b);
    }
  }
  if (!bad.empty()) {
    std::string msg = "rank-deficient covariates:";
    for (const auto& b : bad) msg += " " + b;
    throw DataError(msg);
  }
}

// ---------------------------------------------------------------------------
// M-step

namespace {

// Design matrices for the structural regressions; constant over a fit.
class StructuralDesign {
 public:
  StructuralDesign(const ResponseData& data, const StructuralParams& shape)
      : t_(shape.n_low()), m_(shape.n_high()) {
    p_high_ = shape.n_high_covariates_low();
    p_low_ = shape.n_low_covariates();
    random_ = shape.has_random_slopes();
    const int low_cols = random_ ? m_ * p_low_ : p_low_;
    d_gamma_ = m_ + p_high_ + low_cols;

    if (t_ > 1) {
      if (p_low_ > 0) {
        gamma_level_ = RowLevel::unit;
        x_gamma_.setZero(static_cast<Eigen::Index>(data.n_units()) * m_, d_gamma_);
        for (int i = 0; i < data.n_units(); ++i) {
          const int j = data.group_of()[static_cast<std::size_t>(i)];
          for (int m = 0; m < m_; ++m) {
            const Eigen::Index r = static_cast<Eigen::Index>(i) * m_ + m;
            x_gamma_(r, m) = 1.0;
            for (int q = 0; q < p_high_; ++q) x_gamma_(r, m_ + q) = data.z_high()(j, q);
            const int off = m_ + p_high_ + (random_ ? m * p_low_ : 0);
            for (int q = 0; q < p_low_; ++q) x_gamma_(r, off + q) = data.z_low()(i, q);
          }
        }
      } else if (p_high_ > 0) {
        gamma_level_ = RowLevel::group;
        x_gamma_.setZero(static_cast<Eigen::Index>(data.n_groups()) * m_, d_gamma_);
        for (int j = 0; j < data.n_groups(); ++j) {
          for (int m = 0; m < m_; ++m) {
            const Eigen::Index r = static_cast<Eigen::Index>(j) * m_ + m;
            x_gamma_(r, m) = 1.0;
            for (int q = 0; q < p_high_; ++q) x_gamma_(r, m_ + q) = data.z_high()(j, q);
          }
        }
      } else {
        gamma_level_ = RowLevel::pooled;
        x_gamma_ = Matrix::Identity(m_, m_);
      }
    }
    if (m_ > 1) {
      const int ph = shape.n_high_covariates_high();
      if (ph > 0) {
        delta_pooled_ = false;
        x_delta_.resize(data.n_groups(), 1 + ph);
        x_delta_.col(0).setOnes();
        x_delta_.rightCols(ph) = data.z_high();
      } else {
        delta_pooled_ = true;
        x_delta_ = Matrix::Ones(1, 1);
      }
    }
  }

  void update(const ResponseData& data, const PosteriorTables& post, BlockSet freeze,
              const MultinomialLogitOptions& opts, StructuralParams& s) const {
    if (t_ > 1 && !(freeze.contains(Block::gamma0) && freeze.contains(Block::gamma1) &&
                    freeze.contains(Block::gamma2))) {
      update_gamma(data, post, freeze, opts, s);
    }
    if (m_ > 1 && !(freeze.contains(Block::delta0) && freeze.contains(Block::delta1))) {
      update_delta(post, freeze, opts, s);
    }
  }

 private:
  enum class RowLevel { pooled, group, unit };

  void update_gamma(const ResponseData& data, const PosteriorTables& post, BlockSet freeze,
                    const MultinomialLogitOptions& opts, StructuralParams& s) const {
    Matrix w = Matrix::Zero(x_gamma_.rows(), t_);
    for (int i = 0; i < data.n_units(); ++i) {
      const int j = data.group_of()[static_cast<std::size_t>(i)];
      for (int m = 0; m < m_; ++m) {
        Eigen::Index r = m;
        if (gamma_level_ == RowLevel::unit) r = static_cast<Eigen::Index>(i) * m_ + m;
        if (gamma_level_ == RowLevel::group) r = static_cast<Eigen::Index>(j) * m_ + m;
        for (int t = 0; t < t_; ++t) w(r, t) += post.joint(i, t + t_ * m);
      }
    }
    Matrix b(t_ - 1, d_gamma_);
    b.leftCols(m_) = s.gamma0.transpose();
    if (p_high_ > 0) b.middleCols(m_, p_high_) = s.gamma1;
    if (p_low_ > 0) {
      if (random_) {
        for (int m = 0; m < m_; ++m) b.middleCols(m_ + p_high_ + m * p_low_, p_low_) = s.random_slopes[static_cast<std::size_t>(m)];
      } else {
        b.middleCols(m_ + p_high_, p_low_) = s.gamma2;
      }
    }
    std::vector<bool> free_cols(static_cast<std::size_t>(d_gamma_), false);
    for (int c = 0; c < d_gamma_; ++c) {
      const Block blk = c < m_ ? Block::gamma0 : (c < m_ + p_high_ ? Block::gamma1 : Block::gamma2);
      free_cols[static_cast<std::size_t>(c)] = !freeze.contains(blk);
    }
    const auto fit = fit_multinomial_logit(x_gamma_, w, b, free_cols, opts);
    s.gamma0 = fit.coefficients.leftCols(m_).transpose();
    if (p_high_ > 0) s.gamma1 = fit.coefficients.middleCols(m_, p_high_);
    if (p_low_ > 0) {
      if (random_) {
        for (int m = 0; m < m_; ++m) s.random_slopes[static_cast<std::size_t>(m)] = fit.coefficients.middleCols(m_ + p_high_ + m * p_low_, p_low_);
      } else {
        s.gamma2 = fit.coefficients.middleCols(m_ + p_high_, p_low_);
      }
    }
  }

  void update_delta(const PosteriorTables& post, BlockSet freeze, const MultinomialLogitOptions& opts,
                    StructuralParams& s) const {
    const Matrix w = delta_pooled_ ? Matrix(post.high.colwise().sum()) : post.high;
    Matrix b(m_ - 1, x_delta_.cols());
    b.col(0) = s.delta0;
    if (x_delta_.cols() > 1) b.rightCols(x_delta_.cols() - 1) = s.delta1;
    std::vector<bool> free_cols(static_cast<std::size_t>(x_delta_.cols()), !freeze.contains(Block::delta1));
    free_cols[0] = !freeze.contains(Block::delta0);
    const auto fit = fit_multinomial_logit(x_delta_, w, b, free_cols, opts);
    s.delta0 = fit.coefficients.col(0);
    if (x_delta_.cols() > 1) s.delta1 = fit.coefficients.rightCols(x_delta_.cols() - 1);
  }

  int t_;
  int m_;
  int p_high_ = 0;
  int p_low_ = 0;
  bool random_ = false;
  int d_gamma_ = 0;
  RowLevel gamma_level_ = RowLevel::pooled;
  Matrix x_gamma_;
  bool delta_pooled_ = true;
  Matrix x_delta_;
};

void update_beta(const ResponseData& data, const PosteriorTables& post, MeasurementParams& beta) {
  const Matrix hits = post.low_marginal.transpose() * data.y();  // T x K
  const Vector mass = post.low_marginal.colwise().sum().transpose();
  for (int t = 0; t < beta.n_classes(); ++t) {
    if (!(mass(t) > 0.0)) continue;
    for (int k = 0; k < beta.n_items(); ++k) {
      const double p = std::clamp(hits(t, k) / mass(t), 0.0, 1.0);
      beta.beta(t, k) = clamp_logit(std::log(p) - std::log1p(-p));
    }
  }
}

// ---------------------------------------------------------------------------
// One EM run

struct StartOutcome {
  StartingValues params;
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  double max_decrease = 0.0;
  bool degenerate = false;
};

bool has_degenerate_class(const PosteriorTables& post, int n_units, int n_groups) {
  if (post.n_low > 1) {
    const Vector mass = post.low_marginal.colwise().sum().transpose();
    if (mass.minCoeff() < 1e-6 * n_units) return true;
  }
  if (post.n_high > 1) {
    const Vector mass = post.high.colwise().sum().transpose();
    if (mass.minCoeff() < 1e-6 * n_groups) return true;
  }
  return false;
}

StartOutcome run_em(const ResponseData& data, StartingValues params, const FitConfig& config,
                    const Matrix* fixed_log_masses, const StructuralDesign& design) {
  StartOutcome out;
  const BlockSet freeze = config.freeze;
  const bool beta_free = !freeze.contains(Block::beta);
  const MultinomialLogitOptions opts{config.m_step_newton_tolerance, config.m_step_max_newton,
                                     kLogitBound, false};
  Matrix lm = fixed_log_masses != nullptr ? *fixed_log_masses
                                          : class_log_masses(data, params.measurement);
  double prev = -std::numeric_limits<double>::infinity();
  for (int iter = 0;; ++iter) {
    EStep es = expectation(data, lm, params.structural, true);
    const double ll = es.loglik();
    out.trace.push_back(ll);
    bool stop = false;
    if (iter > 0) {
      const double diff = ll - prev;
      out.max_decrease = std::max(out.max_decrease, -diff);
      const double crit = config.relative_tolerance ? diff / std::max(1.0, std::abs(prev)) : diff;
      if (crit < config.loglik_tolerance) {
        out.converged = true;
        stop = true;
      }
    }
    if (iter + 1 >= config.max_iterations) stop = true;
    if (stop) {
      out.loglik = ll;
      out.iterations = iter;
      out.degenerate = has_degenerate_class(es.posteriors, data.n_units(), data.n_groups());
      break;
    }
    if (beta_free) update_beta(data, es.posteriors, params.measurement);
    design.update(data, es.posteriors, freeze, opts, params.structural);
    if (beta_free) lm = class_log_masses(data, params.measurement);
    prev = ll;
  }
  out.params = std::move(params);
  return out;
}

StartingValues random_start(const StartingValues& model, BlockSet freeze, std::uint64_t seed,
                            int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> measurement(-1.5, 1.5);
  std::uniform_real_distribution<double> structural(-0.5, 0.5);
  StartingValues s = model;
  if (!freeze.contains(Block::beta)) {
    for (Eigen::Index t = 0; t < s.measurement.beta.rows(); ++t)
      for (Eigen::Index k = 0; k < s.measurement.beta.cols(); ++k) s.measurement.beta(t, k) = measurement(rng);
  }
  auto& st = s.structural;
  if (!freeze.contains(Block::gamma0)) {
    for (Eigen::Index m = 0; m < st.gamma0.rows(); ++m)
      for (Eigen::Index t = 0; t < st.gamma0.cols(); ++t) st.gamma0(m, t) = structural(rng);
  }
  if (!freeze.contains(Block::delta0)) {
    for (Eigen::Index m = 0; m < st.delta0.size(); ++m) st.delta0(m) = structural(rng);
  }
  if (!freeze.contains(Block::gamma1)) st.gamma1.setZero();
  if (!freeze.contains(Block::gamma2)) {
    st.gamma2.setZero();
    for (auto& r : st.random_slopes) r.setZero();
  }
  if (!freeze.contains(Block::delta1)) st.delta1.setZero();
  return s;
}

// ---------------------------------------------------------------------------
// Relabeling

// Re-expresses rows of a reference-coded matrix (implicit zero row for class 0)
// after the permutation new class r = old class order[r].
Matrix rereference_rows(const Matrix& free_rows, const std::vector<int>& order) {
  Matrix full(free_rows.rows() + 1, free_rows.cols());
  full.row(0).setZero();
  full.bottomRows(free_rows.rows()) = free_rows;
  Matrix out(free_rows.rows(), free_rows.cols());
  for (Eigen::Index r = 1; r < full.rows(); ++r) {
    out.row(r - 1) = full.row(order[static_cast<std::size_t>(r)]) - full.row(order[0]);
  }
  return out;
}

std::vector<int> size_order(const Vector& mass, const Matrix& tie_rows) {
  std::vector<int> order(static_cast<std::size_t>(mass.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (mass(a) != mass(b)) return mass(a) > mass(b);
    for (Eigen::Index c = 0; c < tie_rows.cols(); ++c) {
      if (tie_rows(a, c) != tie_rows(b, c)) return tie_rows(a, c) < tie_rows(b, c);
    }
    return false;
  });
  return order;
}

bool is_identity(const std::vector<int>& order) {
  for (std::size_t i = 0; i < order.size(); ++i)
    if (order[i] != static_cast<int>(i)) return false;
  return true;
}

void relabel_low(StartingValues& p, const std::vector<int>& order) {
  Matrix beta(p.measurement.beta.rows(), p.measurement.beta.cols());
  for (std::size_t r = 0; r < order.size(); ++r) beta.row(static_cast<Eigen::Index>(r)) = p.measurement.beta.row(order[r]);
  p.measurement.beta = beta;
  auto& s = p.structural;
  s.gamma0 = rereference_rows(s.gamma0.transpose(), order).transpose();
  s.gamma1 = rereference_rows(s.gamma1, order);
  s.gamma2 = rereference_rows(s.gamma2, order);
  for (auto& r : s.random_slopes) r = rereference_rows(r, order);
}

void relabel_high(StartingValues& p, const std::vector<int>& order) {
  auto& s = p.structural;
  Matrix g0(s.gamma0.rows(), s.gamma0.cols());
  for (std::size_t r = 0; r < order.size(); ++r) g0.row(static_cast<Eigen::Index>(r)) = s.gamma0.row(order[r]);
  s.gamma0 = g0;
  if (s.has_random_slopes()) {
    std::vector<Matrix> rs;
    for (int o : order) rs.push_back(s.random_slopes[static_cast<std::size_t>(o)]);
    s.random_slopes = std::move(rs);
  }
  Matrix d(s.delta0.size(), 1 + s.delta1.cols());
  d.col(0) = s.delta0;
  d.rightCols(s.delta1.cols()) = s.delta1;
  const Matrix nd = rereference_rows(d, order);
  s.delta0 = nd.col(0);
  s.delta1 = nd.rightCols(s.delta1.cols());
}

bool on_boundary(const StartingValues& p, BlockSet freeze) {
  const Vector v = pack_parameters(p.measurement, p.structural, freeze.complement());
  return v.size() > 0 && v.cwiseAbs().maxCoeff() >= kLogitBound;
}

bool sparse_support(const ResponseData& data, int npar) {
  // Saturated-model degrees of freedom bound the identifiable parameters.
  if (data.n_items() > 62) return npar >= data.n_units();
  std::unordered_set<std::uint64_t> patterns;
  for (int i = 0; i < data.n_units(); ++i) {
    std::uint64_t code = 0;
    for (int k = 0; k < data.n_items(); ++k) {
      if (data.y()(i, k) != 0.0) code |= (std::uint64_t{1} << k);
    }
    patterns.insert(code);
  }
  return npar > static_cast<int>(patterns.size()) - 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Driver

FitResult fit_model(const ResponseData& data, const StartingValues& model, const FitConfig& config,
                    std::span<const StartingValues> warm_starts) {
  config.validate();
  check_dimensions(data, model.measurement, model.structural);
  for (const auto& w : warm_starts) check_dimensions(data, w.measurement, w.structural);
  const BlockSet freeze = config.freeze;
  const StructuralDesign design(data, model.structural);
  Matrix fixed_lm;
  const Matrix* fixed_ptr = nullptr;
  if (freeze.contains(Block::beta)) {
    fixed_lm = class_log_masses(data, model.measurement);
    fixed_ptr = &fixed_lm;
  }

  // Frozen blocks always come from `model`, whatever the warm start holds.
  auto with_frozen = [&](StartingValues s) {
    const BlockSet keep = freeze;
    if (keep.empty()) return s;
    MeasurementParams mb = s.measurement;
    StructuralParams ms = s.structural;
    unpack_parameters(pack_parameters(model.measurement, model.structural, keep), keep, mb, ms);
    return StartingValues{std::move(mb), std::move(ms)};
  };

  std::vector<StartingValues> starts;
  for (const auto& w : warm_starts) starts.push_back(with_frozen(w));
  int next_random = 0;
  for (; next_random < config.n_random_starts; ++next_random) {
    starts.push_back(random_start(model, freeze, config.seed, next_random));
  }

  if (starts.empty()) throw ConfigError("no starting values: n_random_starts is 0 and no warm start given");
  std::vector<StartOutcome> outcomes;
  int restarts = 0;
  std::size_t batch_begin = 0;
  while (batch_begin < starts.size()) {
    const std::size_t batch_end = starts.size();
    outcomes.resize(batch_end);
    parallel_for(static_cast<int>(batch_end - batch_begin), config.n_threads, [&](int b) {
      const std::size_t idx = batch_begin + static_cast<std::size_t>(b);
      outcomes[idx] = run_em(data, starts[idx], config, fixed_ptr, design);
    });
    for (std::size_t i = batch_begin; i < batch_end; ++i) {
      if (outcomes[i].degenerate && restarts < config.n_random_starts) {
        starts.push_back(random_start(model, freeze, config.seed, next_random++));
        ++restarts;
      }
    }
    batch_begin = batch_end;
  }

  std::size_t best = 0;
  bool best_degenerate = true;
  double worst_drop = 0.0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    worst_drop = std::max(worst_drop, outcomes[i].max_decrease);
    const bool better = (best_degenerate && !outcomes[i].degenerate) ||
                        (best_degenerate == outcomes[i].degenerate &&
                         outcomes[i].loglik > outcomes[best].loglik);
    if (i == 0 || better) {
      best = i;
      best_degenerate = outcomes[i].degenerate;
    }
  }
  StartOutcome& win = outcomes[best];
  StartingValues params = std::move(win.params);

  EStep es = expectation(data, fixed_ptr ? fixed_lm : class_log_masses(data, params.measurement),
                         params.structural, true);

  const bool low_relabel = !freeze.contains(Block::beta) && !freeze.contains(Block::gamma0) &&
                           !freeze.contains(Block::gamma1) && !freeze.contains(Block::gamma2);
  const bool high_relabel = !freeze.contains(Block::gamma0) && !freeze.contains(Block::delta0) &&
                            !freeze.contains(Block::delta1) &&
                            (!params.structural.has_random_slopes() || !freeze.contains(Block::gamma2));
  bool relabeled = false;
  if (low_relabel && params.structural.n_low() > 1) {
    const auto order = size_order(es.posteriors.low_marginal.colwise().sum().transpose(),
                                  params.measurement.beta);
    if (!is_identity(order)) {
      relabel_low(params, order);
      relabeled = true;
    }
  }
  if (high_relabel && params.structural.n_high() > 1) {
    const auto order = size_order(es.posteriors.high.colwise().sum().transpose(),
                                  params.structural.gamma0);
    if (!is_identity(order)) {
      relabel_high(params, order);
      relabeled = true;
    }
  }
  if (relabeled) {
    es = expectation(data, fixed_ptr ? fixed_lm : class_log_masses(data, params.measurement),
                     params.structural, true);
  }

  FitResult result;
  result.beta = std::move(params.measurement);
  result.structural = std::move(params.structural);
  result.posteriors = std::move(es.posteriors);
  for (const auto& o : outcomes) result.per_start_logliks.push_back(o.loglik);
  result.loglik_trace = std::move(win.trace);

  FitSummary& sm = result.summary;
  sm.loglik = es.loglik();
  sm.npar = count_free_parameters(StartingValues{result.beta, result.structural}, freeze);
  sm.bic = bic(sm.loglik, sm.npar, data.n_units());
  sm.bic_group = bic(sm.loglik, sm.npar, data.n_groups());
  sm.entropy_r2_low = entropy_r2(result.posteriors, Level::low);
  sm.entropy_r2_high = entropy_r2(result.posteriors, Level::high);
  sm.n_iterations = win.iterations;
  sm.converged = win.converged;
  sm.best_start_index = static_cast<int>(best);
  sm.degenerate_class = has_degenerate_class(result.posteriors, data.n_units(), data.n_groups());
  sm.n_degenerate_restarts = restarts;
  sm.max_loglik_decrease = worst_drop;
  sm.boundary = on_boundary(StartingValues{result.beta, result.structural}, freeze);
  sm.sparse_support = sparse_support(data, sm.npar);
  return result;
}

StructuralParams permute_high_classes(const StructuralParams& structural, const std::vector<int>& order) {
  StartingValues p{MeasurementParams{}, structural};
  relabel_high(p, order);
  return p.structural;
}

FitResult fit_step1(const ResponseData& data, int n_low, const FitConfig& config) {
  if (n_low < 1) throw std::invalid_argument("T must be at least 1");
  // With a single group class the likelihood ignores the grouping.
  const ResponseData pooled = data.without_covariates();
  StartingValues model{MeasurementParams{Matrix::Zero(n_low, data.n_items())},
                       StructuralParams::zeros(n_low, 1)};
  FitConfig cfg = config;
  cfg.freeze = BlockSet{};
  FitResult r = fit_model(pooled, model, cfg);
  r.summary.entropy_r2_high.reset();
  return r;
}

FitResult fit_step2a(const ResponseData& data, const FitResult& step1, int n_high,
                     const FitConfig& config) {
  if (n_high < 1) throw std::invalid_argument("M must be at least 1");
  if (step1.structural.n_high() != 1) {
    throw std::invalid_argument("step 2a expects a pooled (single group class) step-1 fit");
  }
  const ResponseData pooled = data.without_covariates();
  const int t = step1.beta.n_classes();
  StartingValues model{step1.beta, StructuralParams::zeros(t, n_high)};
  StartingValues warm = model;
  for (int m = 0; m < n_high; ++m) warm.structural.gamma0.row(m) = step1.structural.gamma0.row(0);
  FitConfig cfg = config;
  cfg.freeze = BlockSet{Block::beta};
  return fit_model(pooled, model, cfg, std::span<const StartingValues>(&warm, 1));
}

FitResult fit_step2b(const ResponseData& data, int n_low, int n_high, const FitConfig& config,
                     Step2bVariant variant, const Vector& frozen_delta0,
                     std::span<const StartingValues> warm_starts) {
  if (n_low < 1 || n_high < 1) throw std::invalid_argument("class counts must be at least 1");
  const ResponseData pooled = data.without_covariates();
  StartingValues model{MeasurementParams{Matrix::Zero(n_low, data.n_items())},
                       StructuralParams::zeros(n_low, n_high)};
  FitConfig cfg = config;
  cfg.freeze = BlockSet{};
  if (variant == Step2bVariant::fix_w_regressions) {
    if (frozen_delta0.size() != n_high - 1) {
      throw std::invalid_argument("fix_w_regressions needs M-1 group-class logits");
    }
    model.structural.delta0 = frozen_delta0;
    cfg.freeze = BlockSet{Block::delta0};
  }
  std::vector<StartingValues> warm;
  for (const auto& w : warm_starts) {
    if (w.measurement.n_classes() == n_low && w.structural.n_high() == n_high) {
      StartingValues s{w.measurement, StructuralParams::zeros(n_low, n_high)};
      s.structural.gamma0 = w.structural.gamma0;
      s.structural.delta0 = w.structural.delta0;
      warm.push_back(std::move(s));
    }
  }
  return fit_model(pooled, model, cfg, warm);
}

namespace {

StartingValues step3_model(const ResponseData& data, const FitResult& base, bool random_slopes) {
  const int t = base.beta.n_classes();
  const int m = base.structural.n_high();
  StartingValues model{base.beta, StructuralParams::zeros(t, m, data.n_low_covariates(),
                                                          data.n_high_covariates(), random_slopes)};
  return model;
}

// Copies intercepts (and any slopes with matching shape) from `from`.
StartingValues carry_over(StartingValues model, const StructuralParams& from) {
  auto& s = model.structural;
  s.gamma0 = from.gamma0;
  s.delta0 = from.delta0;
  if (from.gamma1.cols() == s.gamma1.cols()) s.gamma1 = from.gamma1;
  if (from.delta1.cols() == s.delta1.cols()) s.delta1 = from.delta1;
  if (from.has_random_slopes() == s.has_random_slopes()) {
    if (from.gamma2.cols() == s.gamma2.cols()) s.gamma2 = from.gamma2;
    if (from.random_slopes.size() == s.random_slopes.size() &&
        (s.random_slopes.empty() || from.random_slopes.front().cols() == s.random_slopes.front().cols())) {
      s.random_slopes = from.random_slopes;
    }
  }
  return model;
}

}  // namespace

FitResult fit_step3(const ResponseData& data, const FitResult& step2b, const FitConfig& config,
                    const Step3Options& options, std::span<const StartingValues> warm_starts) {
  if (data.n_low_covariates() + data.n_high_covariates() == 0) {
    throw std::invalid_argument("step 3 needs level-1 or level-2 covariates");
  }
  check_covariate_rank(data);
  FitConfig cfg = config;
  cfg.freeze = BlockSet{Block::beta};

  auto warm_for = [&](const StartingValues& model) {
    std::vector<StartingValues> w;
    w.push_back(carry_over(model, step2b.structural));
    for (const auto& s : warm_starts) {
      if (s.structural.n_low() == model.structural.n_low() &&
          s.structural.n_high() == model.structural.n_high()) {
        w.push_back(carry_over(model, s.structural));
      }
    }
    return w;
  };

  if (!options.split || data.n_low_covariates() == 0 || data.n_high_covariates() == 0) {
    const StartingValues model = step3_model(data, step2b, options.random_slopes);
    return fit_model(data, model, cfg, warm_for(model));
  }

  const ResponseData low_only = data.without_high_covariates();
  const StartingValues model1 = step3_model(low_only, step2b, options.random_slopes);
  const FitResult first = fit_model(low_only, model1, cfg, warm_for(model1));

  StartingValues model2 = step3_model(data, step2b, options.random_slopes);
  model2 = carry_over(model2, first.structural);
  model2.structural.gamma2 = first.structural.gamma2;
  model2.structural.random_slopes = first.structural.random_slopes;
  cfg.freeze = BlockSet{Block::beta, Block::gamma2};
  const StartingValues warm = model2;
  FitResult second = fit_model(data, model2, cfg, std::span<const StartingValues>(&warm, 1));
  second.summary.npar = count_free_parameters(model2, BlockSet{Block::beta});
  second.summary.bic = bic(second.summary.loglik, second.summary.npar, data.n_units());
  second.summary.bic_group = bic(second.summary.loglik, second.summary.npar, data.n_groups());
  return second;
}

FitResult fit_one_stage(const ResponseData& data, int n_low, int n_high, const FitConfig& config,
                        bool random_slopes, std::span<const StartingValues> warm_starts) {
  if (n_low < 1 || n_high < 1) throw std::invalid_argument("class counts must be at least 1");
  if (data.n_low_covariates() + data.n_high_covariates() > 0) check_covariate_rank(data);
  StartingValues model{MeasurementParams{Matrix::Zero(n_low, data.n_items())},
                       StructuralParams::zeros(n_low, n_high, data.n_low_covariates(),
                                               data.n_high_covariates(), random_slopes)};
  std::vector<StartingValues> warm;
  for (const auto& w : warm_starts) {
    if (w.measurement.n_classes() == n_low && w.structural.n_high() == n_high) {
      StartingValues s = carry_over(model, w.structural);
      s.measurement = w.measurement;
      warm.push_back(std::move(s));
    }
  }
  FitConfig cfg = config;
  cfg.freeze = BlockSet{};
  return fit_model(data, model, cfg, warm);
}

// ---------------------------------------------------------------------------
// Scores

Matrix group_scores(const ResponseData& data, const MeasurementParams& beta,
                    const StructuralParams& s, BlockSet free_blocks) {
  check_dimensions(data, beta, s);
  const int t_n = s.n_low();
  const int m_n = s.n_high();
  const PosteriorTables post = posterior_tables(data, beta, s);
  const int p = static_cast<int>(pack_parameters(beta, s, free_blocks).size());
  Matrix scores = Matrix::Zero(data.n_groups(), p);
  const Matrix prob = beta.probabilities();
  const int ph = s.n_high_covariates_low();
  const int pl = s.n_low_covariates();
  const int ph_w = m_n > 1 ? s.n_high_covariates_high() : 0;

  for (int j = 0; j < data.n_groups(); ++j) {
    MeasurementParams gb{Matrix::Zero(beta.n_classes(), beta.n_items())};
    StructuralParams gs = s;
    gs.gamma0.setZero();
    gs.gamma1.setZero();
    gs.gamma2.setZero();
    for (auto& r : gs.random_slopes) r.setZero();
    gs.delta0.setZero();
    gs.delta1.setZero();

    const Vector zh = data.z_high().row(j).transpose();
    const Vector zh_low = ph > 0 ? zh : Vector();
    const Vector zh_high = ph_w > 0 ? zh : Vector();
    for (int i : data.members(j)) {
      const Vector zl = pl > 0 ? Vector(data.z_low().row(i).transpose()) : Vector();
      for (int t = 0; t < t_n; ++t) {
        const double w = post.low_marginal(i, t);
        for (int k = 0; k < beta.n_items(); ++k) {
          if (std::abs(beta.beta(t, k)) < kLogitBound) gb.beta(t, k) += w * (data.y()(i, k) - prob(t, k));
        }
      }
      for (int m = 0; m < m_n; ++m) {
        const Vector pi = class_prob_low(s, m, zh_low, zl);
        for (int t = 1; t < t_n; ++t) {
          const double r = post.joint_at(i, t, m) - post.high(j, m) * pi(t);
          gs.gamma0(m, t - 1) += r;
          for (int q = 0; q < ph; ++q) gs.gamma1(t - 1, q) += r * zh(q);
          for (int q = 0; q < pl; ++q) {
            if (s.has_random_slopes()) {
              gs.random_slopes[static_cast<std::size_t>(m)](t - 1, q) += r * zl(q);
            } else {
              gs.gamma2(t - 1, q) += r * zl(q);
            }
          }
        }
      }
    }
    if (m_n > 1) {
      const Vector omega = class_prob_high(s, zh_high);
      for (int m = 1; m < m_n; ++m) {
        const double r = post.high(j, m) - omega(m);
        gs.delta0(m - 1) += r;
        for (int q = 0; q < ph_w; ++q) gs.delta1(m - 1, q) += r * zh(q);
      }
    }
    scores.row(j) = pack_parameters(gb, gs, free_blocks).transpose();
  }
  return scores;
}

}  // namespace mlca
