#pragma once

#include <Eigen/Dense>

#include "vaelab/tiling.hpp"

namespace vaelab::lipschitz {

enum class Mode { Local, Global };

struct LipschitzSpec {
  Mode mode = Mode::Global;
  double radius = 1.0;             // coupling support radius (local mode)
  double strength = 0.0;           // uniform multiplier magnitude omega
  double lipschitz_constant = 1.0; // L
  int rebuild_every = 1;           // projection rebuild period in iterations
};

/// Latent-geometry second moment of cell pairs:
/// K_ab = vol_a vol_b (|mu_a - mu_b|^2 + dim w^2 / 6). vol arguments are kept
/// explicit so the bilinear scaling in the cell volumes is visible.
double pair_kernel_moment(const Eigen::RowVectorXd& center_a,
                          const Eigen::RowVectorXd& center_b, double vol_a,
                          double vol_b, double width, int dim);

/// A x A matrix of pair_kernel_moment over all grid cell pairs.
Eigen::MatrixXd compute_K(const tiling::LatentGrid& grid);

/// Multiplier mask: omega for pairs with 0 < |mu_a - mu_b| <= r, zero
/// elsewhere and on the diagonal. Global mode uses the box diameter as r.
Eigen::MatrixXd build_multipliers(const tiling::LatentGrid& grid, const LipschitzSpec& spec);

struct CouplingMatrices {
  Eigen::MatrixXd k;      // geometry moments
  Eigen::MatrixXd c;      // pi_a pi_b / (L^2 K_ab)
  Eigen::MatrixXd omega;  // multiplier mask
  Eigen::MatrixXd w;      // omega .* c, the coupling weights

  static CouplingMatrices build(const tiling::LatentGrid& grid, const LipschitzSpec& spec);
};

struct ProjectionMatrix {
  Eigen::MatrixXd p;
  double condition = 1.0;  // estimate from the factorization
};

/// Projection for the constrained reconstruction update. Solves
/// (I + D Lambda) P = I with D = diag(n beta / (pi_b sum_i m_ib)) and
/// Lambda the graph Laplacian of W. W = 0 returns the exact identity.
/// Throws "constraint too stiff" when the condition estimate exceeds 1e12.
ProjectionMatrix build_projection(const tiling::PosteriorMatrix& m,
                                  const tiling::LatentGrid& grid, double beta,
                                  const Eigen::MatrixXd& w);

/// smoothed_iterate with each raw update F(psi) replaced by P^T F(psi); P is
/// rebuilt from the current posterior every rebuild_every iterations. Cells
/// with zero column mass stay frozen and are excluded from the solve.
tiling::FixedPointResult projected_iterate(const tiling::Dataset& data,
                                           const tiling::LatentGrid& grid,
                                           const tiling::IterationConfig& cfg,
                                           const LipschitzSpec& spec,
                                           bool record_trajectory = false);

}  // namespace vaelab::lipschitz
