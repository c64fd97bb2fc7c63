#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace vaelab::tiling {

/// Regular tiling of the compact latent box [-1/2, 1/2]^dim into
/// resolution^dim axis-aligned cells of width 1/resolution, with the uniform
/// prior mass width^dim per cell. Cells are indexed with axis 0 slowest.
class LatentGrid {
 public:
  LatentGrid(int dim, int resolution);

  int dim() const { return dim_; }
  int resolution() const { return resolution_; }
  int cells() const { return static_cast<int>(centers_.rows()); }
  double width() const { return 1.0 / resolution_; }

  /// A x dim matrix of cell centers.
  const Eigen::MatrixXd& centers() const { return centers_; }
  /// Prior mass per cell (uniform prior on the unit box).
  const Eigen::VectorXd& prior() const { return prior_; }

  /// Index of the cell containing z. Points exactly on an interior cell edge
  /// belong to the lower-index cell along that axis. Throws
  /// "latent out of domain" when z is outside the closed box.
  int cell_of(const Eigen::VectorXd& z) const;

  bool contains(const Eigen::VectorXd& z) const;

 private:
  int dim_;
  int resolution_;
  Eigen::MatrixXd centers_;
  Eigen::VectorXd prior_;
};

struct Dataset {
  Eigen::MatrixXd points;   // n x d_x, one row per point
  std::vector<int> labels;  // optional metadata

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

/// n x A matrix m_ia of per-datum basis coefficients. Rows satisfy
/// sum_a m_ia pi_a = 1.
struct PosteriorMatrix {
  Eigen::MatrixXd m;
};

/// A x d_x matrix of per-cell decoder outputs; row a is the reconstruction
/// attached to basis cell a.
struct ReconstructionSet {
  Eigen::MatrixXd psi;
};

struct IterationConfig {
  double beta = 0.01;
  double alpha = 0.9;       // exponential smoothing on psi
  int max_iter = 400;
  double tol = 1e-3;        // max-over-cells step norm
  double init_noise = 0.1;  // half-width of the uniform init jitter
  std::uint64_t seed = 0;
};

struct FixedPointResult {
  ReconstructionSet psi;
  PosteriorMatrix posterior;  // posterior at the final psi
  int iterations = 0;
  bool converged = false;
  int dead_cell_freezes = 0;  // cells frozen due to zero column mass, summed over iterations
  std::vector<Eigen::MatrixXd> trajectory;  // per-iteration psi when recorded
};

struct ObjectiveTerms {
  double distortion = 0.0;  // (1/n) sum_ia m_ia pi_a |x_i - psi_a|^2
  double rate = 0.0;        // (1/n) sum_ia m_ia pi_a ln m_ia
};

struct Clustering {
  int count = 0;
  std::vector<int> labels;  // cluster id per cell, first-seen order
};

/// Initial reconstructions: grid cell centers when d_x == d_z, otherwise
/// uniformly drawn data points; both jittered per coordinate by uniform noise
/// in [-init_noise, init_noise].
ReconstructionSet init_psi(const LatentGrid& grid, const Dataset& data,
                           const IterationConfig& cfg);

/// One posterior update: m_ib = exp(-|x_i - psi_b|^2 / (2 beta)) / c_i with
/// c_i = sum_b exp(...) pi_b. Exponents are stabilized by per-row max
/// subtraction, so arbitrarily small beta cannot overflow.
PosteriorMatrix posterior_step(const ReconstructionSet& psi, const Dataset& data,
                               const LatentGrid& grid, double beta);

/// beta -> 0 limit of posterior_step: each datum assigns all its mass to the
/// nearest reconstruction (ties to the lower cell index), m = 1/pi there.
PosteriorMatrix posterior_step_hard(const ReconstructionSet& psi, const Dataset& data,
                                    const LatentGrid& grid);

/// One reconstruction update: psi_b = sum_i x_i m_ib / sum_j m_jb. Throws
/// "dead basis cell" when a column has zero mass.
ReconstructionSet reconstruction_step(const PosteriorMatrix& m, const Dataset& data);

/// Sweep-friendly variant: columns with zero mass keep their previous value
/// instead of erroring; the count of frozen cells this call is added to
/// *frozen when given.
ReconstructionSet reconstruction_step(const PosteriorMatrix& m, const Dataset& data,
                                      const ReconstructionSet& previous, int* frozen);

/// Damped fixed-point iteration psi <- alpha psi + (1-alpha) F(psi) with
/// F = reconstruction_step(posterior_step(.)). Stops when the max-over-cells
/// Euclidean step of the smoothed sequence drops below tol.
FixedPointResult smoothed_iterate(const Dataset& data, const LatentGrid& grid,
                                  const IterationConfig& cfg,
                                  bool record_trajectory = false);

/// Decoder g(z) = psi_{a(z)}; errors when z is outside the latent box.
Eigen::RowVectorXd decode(const Eigen::VectorXd& z, const ReconstructionSet& psi,
                          const LatentGrid& grid);

ObjectiveTerms objective_terms(const PosteriorMatrix& m, const ReconstructionSet& psi,
                               const Dataset& data, const LatentGrid& grid);

/// Single-linkage clustering of the reconstruction vectors at the given
/// merge radius; deterministic labels in first-seen order.
Clustering count_distinct_fixed_points(const ReconstructionSet& psi, double merge_radius);

}  // namespace vaelab::tiling
