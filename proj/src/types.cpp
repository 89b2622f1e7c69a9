#include "mlca/types.hpp"

#include "mlca/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mlca {

ResponseData::ResponseData(Matrix y, std::vector<int> group_of, Matrix z_low, Matrix z_high,
                           ColumnNames names)
    : y_(std::move(y)),
      group_of_(std::move(group_of)),
      z_low_(std::move(z_low)),
      z_high_(std::move(z_high)),
      names_(std::move(names)) {
  const auto n = static_cast<std::size_t>(y_.rows());
  if (group_of_.size() != n) {
    throw DataError("group_of has " + std::to_string(group_of_.size()) + " entries for " +
                    std::to_string(n) + " units");
  }
  for (Eigen::Index i = 0; i < y_.rows(); ++i) {
    for (Eigen::Index k = 0; k < y_.cols(); ++k) {
      const double v = y_(i, k);
      if (v != 0.0 && v != 1.0) {
        throw DataError("non-binary response at unit " + std::to_string(i) + ", item " +
                        std::to_string(k));
      }
    }
  }
  int n_groups = 0;
  for (int g : group_of_) {
    if (g < 0) throw DataError("negative group index");
    n_groups = std::max(n_groups, g + 1);
  }
  members_.assign(static_cast<std::size_t>(n_groups), {});
  for (std::size_t i = 0; i < group_of_.size(); ++i) {
    members_[static_cast<std::size_t>(group_of_[i])].push_back(static_cast<int>(i));
  }
  for (int g = 0; g < n_groups; ++g) {
    if (members_[static_cast<std::size_t>(g)].empty()) {
      throw DataError("group " + std::to_string(g) + " has no units");
    }
  }
  if (z_low_.size() == 0) z_low_.resize(y_.rows(), 0);
  if (z_high_.size() == 0) z_high_.resize(n_groups, 0);
  if (z_low_.rows() != y_.rows()) {
    throw DataError("level-1 covariates must have one row per unit");
  }
  if (z_high_.rows() != n_groups) {
    throw DataError("level-2 covariates must have exactly one row per group");
  }
  if (!z_low_.allFinite() || !z_high_.allFinite()) {
    throw DataError("covariates must be finite");
  }
}

std::vector<int> ResponseData::group_sizes() const {
  std::vector<int> sizes;
  sizes.reserve(members_.size());
  for (const auto& m : members_) sizes.push_back(static_cast<int>(m.size()));
  return sizes;
}

ResponseData ResponseData::select_units(const std::vector<std::vector<int>>& units_per_group) const {
  std::size_t n = 0;
  for (const auto& u : units_per_group) n += u.size();
  Matrix y(static_cast<Eigen::Index>(n), y_.cols());
  Matrix zl(static_cast<Eigen::Index>(n), z_low_.cols());
  Matrix zh(static_cast<Eigen::Index>(units_per_group.size()), z_high_.cols());
  std::vector<int> group_of;
  group_of.reserve(n);
  Eigen::Index row = 0;
  for (std::size_t g = 0; g < units_per_group.size(); ++g) {
    const auto& units = units_per_group[g];
    if (units.empty()) throw DataError("resampled group is empty");
    const int source_group = group_of_.at(static_cast<std::size_t>(units.front()));
    zh.row(static_cast<Eigen::Index>(g)) = z_high_.row(source_group);
    for (int i : units) {
      y.row(row) = y_.row(i);
      zl.row(row) = z_low_.row(i);
      group_of.push_back(static_cast<int>(g));
      ++row;
    }
  }
  ColumnNames names = names_;
  names.groups.clear();
  return ResponseData(std::move(y), std::move(group_of), std::move(zl), std::move(zh),
                      std::move(names));
}

ResponseData ResponseData::select_groups(const std::vector<int>& groups) const {
  std::vector<std::vector<int>> units;
  units.reserve(groups.size());
  for (int g : groups) units.push_back(members_.at(static_cast<std::size_t>(g)));
  return select_units(units);
}

ResponseData ResponseData::without_high_covariates() const {
  ColumnNames names = names_;
  names.high_covariates.clear();
  return ResponseData(y_, group_of_, z_low_, Matrix(n_groups(), 0), std::move(names));
}

ResponseData ResponseData::without_low_covariates() const {
  ColumnNames names = names_;
  names.low_covariates.clear();
  return ResponseData(y_, group_of_, Matrix(n_units(), 0), z_high_, std::move(names));
}

ResponseData ResponseData::without_covariates() const {
  ColumnNames names = names_;
  names.low_covariates.clear();
  names.high_covariates.clear();
  return ResponseData(y_, group_of_, Matrix(n_units(), 0), Matrix(n_groups(), 0),
                      std::move(names));
}

Matrix MeasurementParams::probabilities() const {
  return beta.unaryExpr([](double b) { return logistic(b); });
}

StructuralParams StructuralParams::zeros(int n_low, int n_high, int p_low, int p_high,
                                         bool random_slopes) {
  if (n_low < 1 || n_high < 1) {
    throw std::invalid_argument("class counts must be at least 1");
  }
  StructuralParams s;
  s.gamma0 = Matrix::Zero(n_high, n_low - 1);
  s.gamma1 = Matrix::Zero(n_low - 1, p_high);
  s.delta0 = Vector::Zero(n_high - 1);
  s.delta1 = Matrix::Zero(n_high - 1, p_high);
  if (random_slopes) {
    s.gamma2 = Matrix::Zero(n_low - 1, 0);
    s.random_slopes.assign(static_cast<std::size_t>(n_high), Matrix::Zero(n_low - 1, p_low));
  } else {
    s.gamma2 = Matrix::Zero(n_low - 1, p_low);
  }
  return s;
}

}  // namespace mlca
