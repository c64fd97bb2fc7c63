#include "vaelab/lipschitz.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace vaelab::lipschitz {

double pair_kernel_moment(const Eigen::RowVectorXd& center_a,
                          const Eigen::RowVectorXd& center_b, double vol_a,
                          double vol_b, double width, int dim) {
  const double d2 = (center_a - center_b).squaredNorm();
  return vol_a * vol_b * (d2 + dim * width * width / 6.0);
}

Eigen::MatrixXd compute_K(const tiling::LatentGrid& grid) {
  const int cells = grid.cells();
  const double vol = std::pow(grid.width(), grid.dim());
  Eigen::MatrixXd k(cells, cells);
  for (int a = 0; a < cells; ++a)
    for (int b = a; b < cells; ++b) {
      const double v = pair_kernel_moment(grid.centers().row(a), grid.centers().row(b),
                                          vol, vol, grid.width(), grid.dim());
      k(a, b) = v;
      k(b, a) = v;
    }
  return k;
}

Eigen::MatrixXd build_multipliers(const tiling::LatentGrid& grid, const LipschitzSpec& spec) {
  if (spec.radius <= 0.0) throw std::invalid_argument("radius must be positive");
  if (spec.strength < 0.0) throw std::invalid_argument("strength must be nonnegative");
  const int cells = grid.cells();
  const double r =
      spec.mode == Mode::Global ? std::sqrt(static_cast<double>(grid.dim())) : spec.radius;
  const double r2 = r * r;
  Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(cells, cells);
  for (int a = 0; a < cells; ++a)
    for (int b = a + 1; b < cells; ++b) {
      const double d2 = (grid.centers().row(a) - grid.centers().row(b)).squaredNorm();
      if (d2 > 0.0 && d2 <= r2) {
        omega(a, b) = spec.strength;
        omega(b, a) = spec.strength;
      }
    }
  return omega;
}

CouplingMatrices CouplingMatrices::build(const tiling::LatentGrid& grid,
                                         const LipschitzSpec& spec) {
  if (spec.lipschitz_constant <= 0.0)
    throw std::invalid_argument("lipschitz constant must be positive");
  CouplingMatrices cm;
  cm.k = compute_K(grid);
  const double l2 = spec.lipschitz_constant * spec.lipschitz_constant;
  const int cells = grid.cells();
  cm.c.resize(cells, cells);
  for (int a = 0; a < cells; ++a)
    for (int b = 0; b < cells; ++b)
      cm.c(a, b) = grid.prior()[a] * grid.prior()[b] / (l2 * cm.k(a, b));
  cm.omega = build_multipliers(grid, spec);
  cm.w = cm.omega.cwiseProduct(cm.c);
  return cm;
}

namespace {

ProjectionMatrix projection_from_masses(const Eigen::VectorXd& column_mass, int n,
                                        const tiling::LatentGrid& grid, double beta,
                                        const Eigen::MatrixXd& w) {
  const int cells = static_cast<int>(column_mass.size());
  ProjectionMatrix proj;
  if (w.isZero(0.0)) {
    proj.p = Eigen::MatrixXd::Identity(cells, cells);
    proj.condition = 1.0;
    return proj;
  }
  Eigen::MatrixXd lap = -w;
  lap.diagonal() += w.rowwise().sum();
  Eigen::VectorXd d(cells);
  for (int b = 0; b < cells; ++b)
    d[b] = n * beta / (grid.prior()[b] * column_mass[b]);
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(cells, cells) + d.asDiagonal() * lap;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
  const double rcond = lu.rcond();
  proj.condition = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
  if (proj.condition > 1e12)
    throw std::runtime_error(
        "constraint too stiff: condition " + std::to_string(proj.condition) +
        " at beta " + std::to_string(beta));
  proj.p = lu.solve(Eigen::MatrixXd::Identity(cells, cells));
  return proj;
}

}  // namespace

ProjectionMatrix build_projection(const tiling::PosteriorMatrix& m,
                                  const tiling::LatentGrid& grid, double beta,
                                  const Eigen::MatrixXd& w) {
  if (beta <= 0.0) throw std::invalid_argument("beta must be positive");
  const Eigen::VectorXd mass = m.m.colwise().sum();
  if ((mass.array() <= 0.0).any())
    throw std::runtime_error("dead basis cell");
  return projection_from_masses(mass, static_cast<int>(m.m.rows()), grid, beta, w);
}

tiling::FixedPointResult projected_iterate(const tiling::Dataset& data,
                                           const tiling::LatentGrid& grid,
                                           const tiling::IterationConfig& cfg,
                                           const LipschitzSpec& spec,
                                           bool record_trajectory) {
  if (cfg.tol <= 0.0) throw std::invalid_argument("tol must be positive");
  const CouplingMatrices cm = CouplingMatrices::build(grid, spec);
  const int cells = grid.cells();
  const int rebuild = spec.rebuild_every < 1 ? 1 : spec.rebuild_every;

  tiling::FixedPointResult result;
  result.psi = tiling::init_psi(grid, data, cfg);
  if (record_trajectory) result.trajectory.push_back(result.psi.psi);

  Eigen::MatrixXd p;              // projection on the alive subset
  std::vector<int> p_alive;       // alive indices the cached projection refers to

  for (int t = 0; t < cfg.max_iter; ++t) {
    const tiling::PosteriorMatrix m = tiling::posterior_step(result.psi, data, grid, cfg.beta);
    const tiling::ReconstructionSet raw =
        tiling::reconstruction_step(m, data, result.psi, &result.dead_cell_freezes);

    const Eigen::VectorXd mass = m.m.colwise().sum();
    std::vector<int> alive;
    alive.reserve(static_cast<std::size_t>(cells));
    for (int b = 0; b < cells; ++b)
      if (mass[b] > 0.0) alive.push_back(b);

    Eigen::MatrixXd projected = raw.psi;
    if (!alive.empty()) {
      if (t % rebuild == 0 || alive != p_alive) {
        if (static_cast<int>(alive.size()) == cells) {
          p = projection_from_masses(mass, data.size(), grid, cfg.beta, cm.w).p;
        } else {
          const int na = static_cast<int>(alive.size());
          Eigen::VectorXd sub_mass(na);
          Eigen::MatrixXd sub_w(na, na);
          Eigen::MatrixXd sub_centers(na, grid.dim());
          for (int i = 0; i < na; ++i) {
            sub_mass[i] = mass[alive[static_cast<std::size_t>(i)]];
            for (int j = 0; j < na; ++j)
              sub_w(i, j) = cm.w(alive[static_cast<std::size_t>(i)], alive[static_cast<std::size_t>(j)]);
          }
          // restricted system over alive cells
          Eigen::MatrixXd sys = Eigen::MatrixXd::Identity(na, na);
          Eigen::MatrixXd lap = -sub_w;
          lap.diagonal() += sub_w.rowwise().sum();
          Eigen::VectorXd d(na);
          for (int b = 0; b < na; ++b)
            d[b] = data.size() * cfg.beta /
                   (grid.prior()[alive[static_cast<std::size_t>(b)]] * sub_mass[b]);
          sys += d.asDiagonal() * lap;
          Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);
          const double rcond = lu.rcond();
          const double condition = rcond > 0.0 ? 1.0 / rcond : std::numeric_limits<double>::infinity();
          if (condition > 1e12)
            throw std::runtime_error("constraint too stiff: condition " +
                                     std::to_string(condition) + " at beta " +
                                     std::to_string(cfg.beta));
          p = lu.solve(Eigen::MatrixXd::Identity(na, na));
        }
        p_alive = alive;
      }
      if (static_cast<int>(alive.size()) == cells) {
        projected = p.transpose() * raw.psi;
      } else {
        Eigen::MatrixXd sub_raw(static_cast<int>(alive.size()), data.dim());
        for (int i = 0; i < static_cast<int>(alive.size()); ++i)
          sub_raw.row(i) = raw.psi.row(alive[static_cast<std::size_t>(i)]);
        const Eigen::MatrixXd sub_out = p.transpose() * sub_raw;
        for (int i = 0; i < static_cast<int>(alive.size()); ++i)
          projected.row(alive[static_cast<std::size_t>(i)]) = sub_out.row(i);
      }
    }

    Eigen::MatrixXd next = cfg.alpha * result.psi.psi + (1.0 - cfg.alpha) * projected;
    const double step = (next - result.psi.psi).rowwise().norm().maxCoeff();
    result.psi.psi = std::move(next);
    result.iterations = t + 1;
    if (record_trajectory) result.trajectory.push_back(result.psi.psi);
    if (step < cfg.tol) {
      result.converged = true;
      break;
    }
  }
  result.posterior = tiling::posterior_step(result.psi, data, grid, cfg.beta);
  return result;
}

}  // namespace vaelab::lipschitz
