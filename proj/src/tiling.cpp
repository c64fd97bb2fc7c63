#include "vaelab/tiling.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "vaelab/rng.hpp"

namespace vaelab::tiling {

LatentGrid::LatentGrid(int dim, int resolution) : dim_(dim), resolution_(resolution) {
  if (dim < 1 || dim > 3)
    throw std::invalid_argument("latent grid dim must be in [1, 3]; cell count explodes beyond");
  if (resolution < 1) throw std::invalid_argument("grid resolution must be >= 1");

  const int cells = static_cast<int>(std::llround(std::pow(resolution, dim)));
  const double w = width();
  centers_.resize(cells, dim);
  prior_.resize(cells);
  prior_.setConstant(std::pow(w, dim));
  std::vector<int> idx(dim, 0);
  for (int a = 0; a < cells; ++a) {
    for (int d = 0; d < dim; ++d)
      centers_(a, d) = -0.5 + (idx[d] + 0.5) * w;
    for (int d = dim - 1; d >= 0; --d) {
      if (++idx[d] < resolution) break;
      idx[d] = 0;
    }
  }
}

bool LatentGrid::contains(const Eigen::VectorXd& z) const {
  if (z.size() != dim_) return false;
  for (int d = 0; d < dim_; ++d)
    if (!(z[d] >= -0.5 && z[d] <= 0.5)) return false;
  return true;
}

int LatentGrid::cell_of(const Eigen::VectorXd& z) const {
  if (!contains(z)) throw std::runtime_error("latent out of domain");
  int a = 0;
  for (int d = 0; d < dim_; ++d) {
    const double u = (z[d] + 0.5) * resolution_;
    double fl = std::floor(u);
    int k = static_cast<int>(fl);
    // points exactly on an edge belong to the lower-index cell
    if (u == fl && k > 0) k -= 1;
    if (k >= resolution_) k = resolution_ - 1;
    a = a * resolution_ + k;
  }
  return a;
}

ReconstructionSet init_psi(const LatentGrid& grid, const Dataset& data,
                           const IterationConfig& cfg) {
  if (data.size() < 1) throw std::runtime_error("empty dataset");
  if (!data.points.allFinite()) throw std::invalid_argument("non-finite data point");
  const int cells = grid.cells();
  const int d_x = data.dim();
  Rng rng(cfg.seed);
  Eigen::MatrixXd psi(cells, d_x);
  if (d_x == grid.dim()) {
    psi = grid.centers();
  } else {
    for (int a = 0; a < cells; ++a)
      psi.row(a) = data.points.row(rng.uniform_int(data.size()));
  }
  if (cfg.init_noise != 0.0)
    for (int a = 0; a < cells; ++a)
      for (int j = 0; j < d_x; ++j)
        psi(a, j) += rng.uniform(-cfg.init_noise, cfg.init_noise);
  return ReconstructionSet{std::move(psi)};
}

PosteriorMatrix posterior_step(const ReconstructionSet& psi, const Dataset& data,
                               const LatentGrid& grid, double beta) {
  if (beta <= 0.0) throw std::invalid_argument("beta must be positive");
  if (!psi.psi.allFinite()) throw std::runtime_error("diverged reconstruction");
  const int n = data.size();
  const int cells = grid.cells();
  const int d_x = data.dim();
  if (psi.psi.rows() != cells || psi.psi.cols() != d_x)
    throw std::invalid_argument("reconstruction shape mismatch");

  Eigen::MatrixXd m(n, cells);
  const double inv2b = 1.0 / (2.0 * beta);
  for (int i = 0; i < n; ++i) {
    double smax = -std::numeric_limits<double>::infinity();
    for (int b = 0; b < cells; ++b) {
      double d2 = 0.0;
      for (int j = 0; j < d_x; ++j) {
        const double t = data.points(i, j) - psi.psi(b, j);
        d2 += t * t;
      }
      const double s = -d2 * inv2b;
      m(i, b) = s;
      if (s > smax) smax = s;
    }
    double c = 0.0;
    for (int b = 0; b < cells; ++b) {
      const double e = std::exp(m(i, b) - smax);
      m(i, b) = e;
      c += e * grid.prior()[b];
    }
    m.row(i) /= c;
  }
  return PosteriorMatrix{std::move(m)};
}

PosteriorMatrix posterior_step_hard(const ReconstructionSet& psi, const Dataset& data,
                                    const LatentGrid& grid) {
  if (!psi.psi.allFinite()) throw std::runtime_error("diverged reconstruction");
  const int n = data.size();
  const int cells = grid.cells();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, cells);
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_d2 = (data.points.row(i) - psi.psi.row(0)).squaredNorm();
    for (int b = 1; b < cells; ++b) {
      const double d2 = (data.points.row(i) - psi.psi.row(b)).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = b;
      }
    }
    m(i, best) = 1.0 / grid.prior()[best];
  }
  return PosteriorMatrix{std::move(m)};
}

namespace {

ReconstructionSet reconstruction_impl(const PosteriorMatrix& m, const Dataset& data,
                                      const ReconstructionSet* previous, int* frozen) {
  const int n = static_cast<int>(m.m.rows());
  const int cells = static_cast<int>(m.m.cols());
  if (n != data.size()) throw std::invalid_argument("posterior/dataset size mismatch");
  Eigen::MatrixXd psi(cells, data.dim());
  for (int b = 0; b < cells; ++b) {
    const double mass = m.m.col(b).sum();
    if (mass <= 0.0) {
      if (previous == nullptr) throw std::runtime_error("dead basis cell");
      psi.row(b) = previous->psi.row(b);
      if (frozen != nullptr) ++*frozen;
      continue;
    }
    psi.row(b) = (m.m.col(b).transpose() * data.points) / mass;
  }
  return ReconstructionSet{std::move(psi)};
}

}  // namespace

ReconstructionSet reconstruction_step(const PosteriorMatrix& m, const Dataset& data) {
  return reconstruction_impl(m, data, nullptr, nullptr);
}

ReconstructionSet reconstruction_step(const PosteriorMatrix& m, const Dataset& data,
                                      const ReconstructionSet& previous, int* frozen) {
  return reconstruction_impl(m, data, &previous, frozen);
}

FixedPointResult smoothed_iterate(const Dataset& data, const LatentGrid& grid,
                                  const IterationConfig& cfg, bool record_trajectory) {
  if (cfg.tol <= 0.0) throw std::invalid_argument("tol must be positive");
  FixedPointResult result;
  result.psi = init_psi(grid, data, cfg);
  if (record_trajectory) result.trajectory.push_back(result.psi.psi);

  for (int t = 0; t < cfg.max_iter; ++t) {
    const PosteriorMatrix m = posterior_step(result.psi, data, grid, cfg.beta);
    const ReconstructionSet raw =
        reconstruction_step(m, data, result.psi, &result.dead_cell_freezes);
    Eigen::MatrixXd next = cfg.alpha * result.psi.psi + (1.0 - cfg.alpha) * raw.psi;
    const double step = (next - result.psi.psi).rowwise().norm().maxCoeff();
    result.psi.psi = std::move(next);
    result.iterations = t + 1;
    if (record_trajectory) result.trajectory.push_back(result.psi.psi);
    if (step < cfg.tol) {
      result.converged = true;
      break;
    }
  }
  result.posterior = posterior_step(result.psi, data, grid, cfg.beta);
  return result;
}

Eigen::RowVectorXd decode(const Eigen::VectorXd& z, const ReconstructionSet& psi,
                          const LatentGrid& grid) {
  return psi.psi.row(grid.cell_of(z));
}

ObjectiveTerms objective_terms(const PosteriorMatrix& m, const ReconstructionSet& psi,
                               const Dataset& data, const LatentGrid& grid) {
  const int n = data.size();
  const int cells = grid.cells();
  ObjectiveTerms terms;
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < cells; ++a) {
      const double mia = m.m(i, a);
      if (mia <= 0.0) continue;  // 0 ln 0 = 0
      const double w = mia * grid.prior()[a];
      terms.distortion += w * (data.points.row(i) - psi.psi.row(a)).squaredNorm();
      terms.rate += w * std::log(mia);
    }
  }
  terms.distortion /= n;
  terms.rate /= n;
  return terms;
}

Clustering count_distinct_fixed_points(const ReconstructionSet& psi, double merge_radius) {
  if (merge_radius <= 0.0) throw std::invalid_argument("merge_radius must be positive");
  const int cells = static_cast<int>(psi.psi.rows());
  const double r2 = merge_radius * merge_radius;
  Clustering c;
  c.labels.assign(cells, -1);
  std::vector<int> stack;
  for (int a = 0; a < cells; ++a) {
    if (c.labels[a] != -1) continue;
    const int id = c.count++;
    c.labels[a] = id;
    stack.push_back(a);
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < cells; ++v) {
        if (c.labels[v] != -1) continue;
        if ((psi.psi.row(u) - psi.psi.row(v)).squaredNorm() <= r2) {
          c.labels[v] = id;
          stack.push_back(v);
        }
      }
    }
  }
  return c;
}

}  // namespace vaelab::tiling
