#pragma once

#include <Eigen/Dense>

namespace vaelab::equipartition {

/// n x A table of Hamiltonian levels H_ia; +infinity marks an inaccessible
/// cell. Every row needs at least one finite entry.
struct EnergyTable {
  Eigen::MatrixXd h;
  double beta = 1.0;
};

/// Support residual of the occupancy condition: the largest deviation of
/// sum_i exp(-H_ia/beta) / (sum_b exp(-H_ib/beta) gamma_b) from n over cells
/// with gamma_a above the support threshold. Zero at an exact solution.
double residual(const Eigen::VectorXd& gamma, const EnergyTable& table);

/// Solves the occupancy condition by the multiplicative update
/// gamma_a <- gamma_a (1/n) sum_i exp(-H_ia/beta) / (sum_b exp(-H_ib/beta) gamma_b),
/// renormalized each step, from the given start (uniform when absent).
/// Throws after max_iter steps without reaching tol, reporting the residual.
Eigen::VectorXd solve_gamma(const EnergyTable& table, double tol = 1e-10,
                            int max_iter = 10000, const Eigen::VectorXd* init = nullptr);

}  // namespace vaelab::equipartition
