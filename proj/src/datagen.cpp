#include "mlca/datagen.hpp"

#include "mlca/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace mlca {

void GenerativeSpec::validate() const {
  if (n_groups < 1) throw std::invalid_argument("simulation needs at least one group");
  if (group_sizes.empty() ? group_size < 1 : static_cast<int>(group_sizes.size()) != n_groups) {
    throw std::invalid_argument("group sizes must be positive and given for every group");
  }
  for (int n : group_sizes) {
    if (n < 1) throw std::invalid_argument("group sizes must be positive");
  }
  const int t = beta.n_classes();
  if (t < 1 || beta.n_items() < 1) throw std::invalid_argument("beta must be T x K with T, K >= 1");
  if (structural.n_low() != t) throw std::invalid_argument("structural T does not match beta");
  const auto p1 = static_cast<int>(low_covariates.size());
  const auto p2 = static_cast<int>(high_covariates.size());
  if (structural.n_low_covariates() != p1 && !(t == 1 && p1 == 0)) {
    throw std::invalid_argument("level-1 slopes do not match the level-1 covariate list");
  }
  if (structural.n_high_covariates_low() != p2 ||
      (structural.n_high() > 1 && structural.n_high_covariates_high() != p2)) {
    throw std::invalid_argument("level-2 slopes do not match the level-2 covariate list");
  }
}

namespace {

int draw_categorical(const Vector& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  double acc = 0.0;
  for (Eigen::Index c = 0; c + 1 < p.size(); ++c) {
    acc += p(c);
    if (u < acc) return static_cast<int>(c);
  }
  return static_cast<int>(p.size()) - 1;
}

double draw_covariate(CovariateKind kind, std::mt19937_64& rng) {
  if (kind == CovariateKind::bernoulli) {
    std::bernoulli_distribution b(0.5);
    return b(rng) ? 1.0 : 0.0;
  }
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

}  // namespace

SimulatedData simulate(const GenerativeSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int j_n = spec.n_groups;
  const auto p1 = static_cast<int>(spec.low_covariates.size());
  const auto p2 = static_cast<int>(spec.high_covariates.size());
  std::vector<int> sizes = spec.group_sizes;
  if (sizes.empty()) sizes.assign(static_cast<std::size_t>(j_n), spec.group_size);
  int n = 0;
  for (int s : sizes) n += s;

  const Matrix prob = spec.beta.probabilities();
  Matrix y(n, spec.beta.n_items());
  Matrix zl(n, p1);
  Matrix zh(j_n, p2);
  std::vector<int> group_of;
  group_of.reserve(static_cast<std::size_t>(n));
  SimulatedData out;
  out.true_high.reserve(static_cast<std::size_t>(j_n));
  out.true_low.reserve(static_cast<std::size_t>(n));

  const bool slopes_high_low = spec.structural.n_high_covariates_low() > 0;
  const bool slopes_high_w = spec.structural.n_high() > 1 && spec.structural.n_high_covariates_high() > 0;
  const bool slopes_low = spec.structural.n_low_covariates() > 0;
  int row = 0;
  for (int j = 0; j < j_n; ++j) {
    for (int q = 0; q < p2; ++q) zh(j, q) = draw_covariate(spec.high_covariates[static_cast<std::size_t>(q)].kind, rng);
    const Vector zrow = zh.row(j).transpose();
    const int w = draw_categorical(class_prob_high(spec.structural, slopes_high_w ? zrow : Vector()), rng);
    out.true_high.push_back(w);
    for (int i = 0; i < sizes[static_cast<std::size_t>(j)]; ++i, ++row) {
      for (int q = 0; q < p1; ++q) zl(row, q) = draw_covariate(spec.low_covariates[static_cast<std::size_t>(q)].kind, rng);
      const Vector lrow = zl.row(row).transpose();
      const int x = draw_categorical(
          class_prob_low(spec.structural, w, slopes_high_low ? zrow : Vector(), slopes_low ? lrow : Vector()),
          rng);
      out.true_low.push_back(x);
      for (int k = 0; k < spec.beta.n_items(); ++k) y(row, k) = unif(rng) < prob(x, k) ? 1.0 : 0.0;
      group_of.push_back(j);
    }
  }
  ColumnNames names;
  for (int k = 0; k < spec.beta.n_items(); ++k) names.items.push_back("y" + std::to_string(k + 1));
  for (const auto& c : spec.low_covariates) names.low_covariates.push_back(c.name);
  for (const auto& c : spec.high_covariates) names.high_covariates.push_back(c.name);
  for (int j = 0; j < j_n; ++j) names.groups.push_back("g" + std::to_string(j + 1));
  out.data = ResponseData(std::move(y), std::move(group_of), std::move(zl), std::move(zh), std::move(names));
  return out;
}

Matrix separated_item_logits(int n_low, int n_items, double magnitude) {
  Matrix b(n_low, n_items);
  for (int c = 0; c < n_low; ++c) {
    for (int k = 0; k < n_items; ++k) {
      const bool high = c == 0 ? true : c == n_low - 1 ? false : (k / c) % 2 == 0;
      b(c, k) = high ? magnitude : -magnitude;
    }
  }
  return b;
}

GenerativeSpec unconditional_spec(int n_low, int n_high, int n_groups, int group_size, int n_items,
                                  double magnitude, std::uint64_t seed) {
  GenerativeSpec g;
  g.n_groups = n_groups;
  g.group_size = group_size;
  g.beta.beta = separated_item_logits(n_low, n_items, magnitude);
  g.structural = StructuralParams::zeros(n_low, n_high);
  for (int m = 0; m < n_high; ++m) {
    for (int t = 0; t + 1 < n_low; ++t) {
      g.structural.gamma0(m, t) = (m - (n_high - 1) / 2.0) * (t % 2 == 0 ? 1.5 : -1.5);
    }
  }
  g.seed = seed;
  return g;
}

double enumeration_loglik(const ResponseData& data, const MeasurementParams& beta,
                          const StructuralParams& structural) {
  check_dimensions(data, beta, structural);
  const int t_n = structural.n_low();
  const int m_n = structural.n_high();
  const bool use_zh_low = structural.n_high_covariates_low() > 0;
  const bool use_zh_w = m_n > 1 && structural.n_high_covariates_high() > 0;
  const bool use_zl = structural.n_low_covariates() > 0;
  double total = 0.0;
  for (int j = 0; j < data.n_groups(); ++j) {
    const auto& members = data.members(j);
    const auto n = static_cast<int>(members.size());
    double configs = m_n;
    for (int i = 0; i < n; ++i) configs *= t_n;
    if (configs > 1e5) throw std::length_error("instance too large for enumeration");

    const Vector zh = data.z_high().row(j).transpose();
    const Vector omega = class_prob_high(structural, use_zh_w ? zh : Vector());
    // Conditional response probability of each member under each class.
    Matrix resp(n, t_n);
    for (int r = 0; r < n; ++r) {
      for (int t = 0; t < t_n; ++t) {
        double p = 1.0;
        for (int k = 0; k < data.n_items(); ++k) {
          const double pk = item_response_prob(beta, t, k);
          p *= data.y()(members[static_cast<std::size_t>(r)], k) == 1.0 ? pk : 1.0 - pk;
        }
        resp(r, t) = p;
      }
    }
    double group_sum = 0.0;
    for (int m = 0; m < m_n; ++m) {
      Matrix pi(n, t_n);
      for (int r = 0; r < n; ++r) {
        const int i = members[static_cast<std::size_t>(r)];
        const Vector zl = data.z_low().row(i).transpose();
        pi.row(r) = class_prob_low(structural, m, use_zh_low ? zh : Vector(), use_zl ? zl : Vector()).transpose();
      }
      std::vector<int> tuple(static_cast<std::size_t>(n), 0);
      for (;;) {
        double w = omega(m);
        for (int r = 0; r < n; ++r) {
          const int t = tuple[static_cast<std::size_t>(r)];
          w *= pi(r, t) * resp(r, t);
        }
        group_sum += w;
        int pos = 0;
        while (pos < n && ++tuple[static_cast<std::size_t>(pos)] == t_n) {
          tuple[static_cast<std::size_t>(pos)] = 0;
          ++pos;
        }
        if (pos == n) break;
      }
    }
    total += std::log(group_sum);
  }
  return total;
}

}  // namespace mlca
