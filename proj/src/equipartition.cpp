#include "vaelab/equipartition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace vaelab::equipartition {

namespace {

constexpr double kSupportEps = 1e-12;

// exp(-H_ia/beta) with per-row max subtraction; the shared factor cancels in
// every ratio the solver uses. +inf rows entries map to exactly 0.
Eigen::MatrixXd boltzmann_weights(const EnergyTable& table) {
  if (table.beta <= 0.0) throw std::invalid_argument("beta must be positive");
  const int n = static_cast<int>(table.h.rows());
  const int cells = static_cast<int>(table.h.cols());
  if (n < 1 || cells < 1) throw std::invalid_argument("empty energy table");
  Eigen::MatrixXd e(n, cells);
  for (int i = 0; i < n; ++i) {
    double smin = std::numeric_limits<double>::infinity();
    for (int a = 0; a < cells; ++a) {
      const double h = table.h(i, a);
      if (std::isnan(h)) throw std::invalid_argument("NaN energy");
      if (h < smin) smin = h;
    }
    if (!std::isfinite(smin))
      throw std::invalid_argument("energy row with no finite entry");
    for (int a = 0; a < cells; ++a) {
      const double h = table.h(i, a);
      e(i, a) = std::isinf(h) ? 0.0 : std::exp(-(h - smin) / table.beta);
    }
  }
  return e;
}

// condition values t_a = sum_i e_ia / (sum_b e_ib gamma_b)
Eigen::VectorXd condition_values(const Eigen::MatrixXd& e, const Eigen::VectorXd& gamma) {
  const Eigen::VectorXd denom = e * gamma;
  if ((denom.array() <= 0.0).any())
    throw std::runtime_error("occupancy iteration lost all mass for a datum");
  return e.transpose() * denom.cwiseInverse();
}

}  // namespace

double residual(const Eigen::VectorXd& gamma, const EnergyTable& table) {
  const Eigen::MatrixXd e = boltzmann_weights(table);
  const int n = static_cast<int>(table.h.rows());
  const Eigen::VectorXd t = condition_values(e, gamma);
  double worst = 0.0;
  for (int a = 0; a < t.size(); ++a)
    if (gamma[a] > kSupportEps) worst = std::max(worst, std::abs(t[a] - n));
  return worst;
}

Eigen::VectorXd solve_gamma(const EnergyTable& table, double tol, int max_iter,
                            const Eigen::VectorXd* init) {
  if (tol <= 0.0) throw std::invalid_argument("tol must be positive");
  const Eigen::MatrixXd e = boltzmann_weights(table);
  const int n = static_cast<int>(table.h.rows());
  const int cells = static_cast<int>(table.h.cols());

  Eigen::VectorXd gamma;
  if (init != nullptr) {
    if (init->size() != cells) throw std::invalid_argument("init size mismatch");
    if ((init->array() < 0.0).any()) throw std::invalid_argument("init must be nonnegative");
    gamma = *init / init->sum();
  } else {
    gamma = Eigen::VectorXd::Constant(cells, 1.0 / cells);
  }

  double res = std::numeric_limits<double>::infinity();
  for (int t = 0; t < max_iter; ++t) {
    const Eigen::VectorXd cond = condition_values(e, gamma);
    res = 0.0;
    for (int a = 0; a < cells; ++a)
      if (gamma[a] > kSupportEps) res = std::max(res, std::abs(cond[a] - n));
    if (res < tol) return gamma;
    gamma = gamma.cwiseProduct(cond) / n;
    gamma /= gamma.sum();
  }
  throw std::runtime_error("occupancy solver did not converge: residual " +
                           std::to_string(res) + " after " + std::to_string(max_iter) +
                           " iterations");
}

}  // namespace vaelab::equipartition
