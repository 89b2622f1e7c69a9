#include "mlca/multinomial_logit.hpp"

#include "mlca/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mlca {

namespace {

// Row-compressed view of the free, non-zero part of the design.
struct SparseDesign {
  std::vector<int> row_start;
  std::vector<int> column;  // position within the estimated columns
  std::vector<double> value;
};

class Problem {
 public:
  Problem(const Matrix& design, const Matrix& weights, const std::vector<int>& estimated)
      : x_(design), w_(weights), n_classes_(static_cast<int>(weights.cols())) {
    n_est_ = static_cast<int>(estimated.size());
    row_weight_ = w_.rowwise().sum();
    if (n_est_ <= kDenseLimit) {
      dense_.resize(design.rows(), n_est_);
      for (int p = 0; p < n_est_; ++p) dense_.col(p) = design.col(estimated[static_cast<std::size_t>(p)]);
      return;
    }
    std::vector<int> position(static_cast<std::size_t>(design.cols()), -1);
    for (std::size_t p = 0; p < estimated.size(); ++p) position[static_cast<std::size_t>(estimated[p])] = static_cast<int>(p);
    sparse_.row_start.reserve(static_cast<std::size_t>(design.rows()) + 1);
    sparse_.row_start.push_back(0);
    for (Eigen::Index n = 0; n < design.rows(); ++n) {
      for (Eigen::Index d = 0; d < design.cols(); ++d) {
        const double v = design(n, d);
        if (v != 0.0 && position[static_cast<std::size_t>(d)] >= 0) {
          sparse_.column.push_back(position[static_cast<std::size_t>(d)]);
          sparse_.value.push_back(v);
        }
      }
      sparse_.row_start.push_back(static_cast<int>(sparse_.column.size()));
    }
  }

  int n_params() const { return (n_classes_ - 1) * n_est_; }

  // Linear predictors of all rows (n x (C-1)).
  Matrix predictors(const Matrix& b) const { return x_ * b.transpose(); }

  // Objective at predictors eta; fills the class probabilities (n x C) when
  // `probs` is given.
  double objective(const Matrix& eta, Matrix* probs = nullptr) const {
    double obj = 0.0;
    std::vector<double> lp(static_cast<std::size_t>(n_classes_));
    std::vector<double> ex(static_cast<std::size_t>(n_classes_));
    if (probs != nullptr) probs->resize(eta.rows(), n_classes_);
    for (Eigen::Index n = 0; n < eta.rows(); ++n) {
      if (row_weight_(n) == 0.0) {
        if (probs != nullptr) probs->row(n).setZero();
        continue;
      }
      lp[0] = 0.0;
      double mx = 0.0;
      for (int c = 1; c < n_classes_; ++c) {
        lp[static_cast<std::size_t>(c)] = clamp_logit(eta(n, c - 1));
        mx = std::max(mx, lp[static_cast<std::size_t>(c)]);
      }
      double sum = 0.0;
      for (int c = 0; c < n_classes_; ++c) {
        ex[static_cast<std::size_t>(c)] = std::exp(lp[static_cast<std::size_t>(c)] - mx);
        sum += ex[static_cast<std::size_t>(c)];
      }
      const double lse = mx + std::log(sum);
      for (int c = 0; c < n_classes_; ++c) {
        const double wc = w_(n, c);
        if (wc != 0.0) obj += wc * (lp[static_cast<std::size_t>(c)] - lse);
        if (probs != nullptr) (*probs)(n, c) = ex[static_cast<std::size_t>(c)] / sum;
      }
    }
    return obj;
  }

  // Gradient and observed information given the class probabilities.
  void derivatives(const Matrix& probs, Vector& grad, Matrix& info) const {
    const int np = n_params();
    grad.setZero(np);
    info.setZero(np, np);
    if (n_est_ <= kDenseLimit) {
      for (int c = 1; c < n_classes_; ++c) {
        const Vector resid = w_.col(c) - row_weight_.cwiseProduct(probs.col(c));
        grad.segment((c - 1) * n_est_, n_est_) = dense_.transpose() * resid;
        for (int c2 = c; c2 < n_classes_; ++c2) {
          const Vector a = c == c2 ? Vector(row_weight_.array() * probs.col(c).array() * (1.0 - probs.col(c).array()))
                                   : Vector(-row_weight_.array() * probs.col(c).array() * probs.col(c2).array());
          const Matrix block = dense_.transpose() * (dense_.array().colwise() * a.array()).matrix();
          info.block((c - 1) * n_est_, (c2 - 1) * n_est_, n_est_, n_est_) = block;
          if (c2 != c) info.block((c2 - 1) * n_est_, (c - 1) * n_est_, n_est_, n_est_) = block.transpose();
        }
      }
      return;
    }
    const int* col = sparse_.column.data();
    const double* val = sparse_.value.data();
    for (Eigen::Index n = 0; n < probs.rows(); ++n) {
      const double wn = row_weight_(n);
      if (wn == 0.0) continue;
      const int begin = sparse_.row_start[static_cast<std::size_t>(n)];
      const int end = sparse_.row_start[static_cast<std::size_t>(n) + 1];
      for (int c = 1; c < n_classes_; ++c) {
        const double pc = probs(n, c);
        const double resid = w_(n, c) - wn * pc;
        for (int e = begin; e < end; ++e) grad((c - 1) * n_est_ + col[e]) += resid * val[e];
        for (int c2 = c; c2 < n_classes_; ++c2) {
          const double a = wn * pc * ((c == c2 ? 1.0 : 0.0) - probs(n, c2));
          if (a == 0.0) continue;
          for (int e = begin; e < end; ++e) {
            double* out = info.data() + static_cast<Eigen::Index>((c - 1) * n_est_ + col[e]) * np;
            const double av = a * val[e];
            for (int f = begin; f < end; ++f) out[(c2 - 1) * n_est_ + col[f]] += av * val[f];
          }
        }
      }
    }
    // Column-major writes above filled the blocks at or below the diagonal.
    for (int c = 0; c + 1 < n_classes_; ++c)
      for (int c2 = c + 1; c2 + 1 < n_classes_; ++c2)
        info.block(c * n_est_, c2 * n_est_, n_est_, n_est_) =
            info.block(c2 * n_est_, c * n_est_, n_est_, n_est_).transpose();
  }

 private:
  static constexpr int kDenseLimit = 48;

  const Matrix& x_;
  const Matrix& w_;
  int n_classes_;
  int n_est_ = 0;
  Matrix dense_;
  SparseDesign sparse_;
  Vector row_weight_;
};

Vector solve_newton(const Matrix& info, const Vector& grad) {
  Eigen::LDLT<Matrix> ldlt(info);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    Vector step = ldlt.solve(grad);
    if (step.allFinite()) return step;
  }
  // Singular directions (empty classes, separation): damp with a ridge.
  const double scale = std::max(1.0, info.diagonal().cwiseAbs().maxCoeff());
  for (double ridge = 1e-10; ridge < 1e6; ridge *= 100.0) {
    Matrix damped = info;
    damped.diagonal().array() += ridge * scale;
    Eigen::LDLT<Matrix> d(damped);
    if (d.info() == Eigen::Success && d.isPositive()) {
      Vector step = d.solve(grad);
      if (step.allFinite()) return step;
    }
  }
  return grad / scale;
}

}  // namespace

double multinomial_logit_objective(const Matrix& design, const Matrix& weights,
                                   const Matrix& coefficients) {
  std::vector<int> none;
  Problem p(design, weights, none);
  return p.objective(p.predictors(coefficients));
}

MultinomialLogitFit fit_multinomial_logit(const Matrix& design, const Matrix& weights,
                                          const Matrix& start,
                                          const std::vector<bool>& free_columns,
                                          const MultinomialLogitOptions& options) {
  if (weights.cols() < 1 || start.rows() != weights.cols() - 1 || start.cols() != design.cols() ||
      weights.rows() != design.rows() ||
      free_columns.size() != static_cast<std::size_t>(design.cols())) {
    throw std::invalid_argument("multinomial logit: inconsistent dimensions");
  }
  MultinomialLogitFit fit;
  fit.coefficients = start;
  for (Eigen::Index d = 0; d < design.cols(); ++d) {
    if (free_columns[static_cast<std::size_t>(d)] && !design.col(d).isZero(0.0)) {
      fit.estimated_columns.push_back(static_cast<int>(d));
    }
  }
  Problem problem(design, weights, fit.estimated_columns);
  const int n_est = static_cast<int>(fit.estimated_columns.size());
  const int n_free_classes = static_cast<int>(weights.cols()) - 1;

  auto project = [&](Matrix& b) {
    for (int c = 0; c < n_free_classes; ++c) {
      for (int d : fit.estimated_columns) b(c, d) = std::clamp(b(c, d), -options.bound, options.bound);
    }
  };
  project(fit.coefficients);
  Matrix probs;
  fit.objective = problem.objective(problem.predictors(fit.coefficients), &probs);

  Vector grad;
  Matrix info;
  if (problem.n_params() == 0) {
    fit.converged = true;
    return fit;
  }
  for (int it = 0; it < options.max_iterations; ++it) {
    problem.derivatives(probs, grad, info);
    const Vector step = solve_newton(info, grad);
    fit.iterations = it + 1;

    double scale = 1.0;
    bool accepted = false;
    Matrix candidate;
    Matrix cand_probs;
    double max_change = 0.0;
    for (int halving = 0; halving < 40; ++halving, scale *= 0.5) {
      candidate = fit.coefficients;
      for (int c = 0; c < n_free_classes; ++c) {
        for (int p = 0; p < n_est; ++p) {
          candidate(c, fit.estimated_columns[static_cast<std::size_t>(p)]) += scale * step(c * n_est + p);
        }
      }
      project(candidate);
      const double obj = problem.objective(problem.predictors(candidate), &cand_probs);
      if (obj >= fit.objective) {
        max_change = (candidate - fit.coefficients).cwiseAbs().maxCoeff();
        const double gain = obj - fit.objective;
        fit.coefficients = std::move(candidate);
        probs.swap(cand_probs);
        fit.objective = obj;
        accepted = true;
        if (max_change < options.tolerance ||
            gain <= 1e-15 * (1.0 + std::abs(fit.objective))) {
          fit.converged = true;
        }
        break;
      }
    }
    if (!accepted) {
      // No ascent possible along the Newton direction: at the optimum up to
      // floating-point resolution.
      fit.converged = true;
    }
    if (fit.converged) break;
  }
  if (options.compute_information) {
    problem.derivatives(probs, grad, info);
    fit.information = info;
  }
  for (int c = 0; c < n_free_classes; ++c) {
    for (int d : fit.estimated_columns) {
      if (std::abs(fit.coefficients(c, d)) >= options.bound) fit.boundary = true;
    }
  }
  return fit;
}

}  // namespace mlca
