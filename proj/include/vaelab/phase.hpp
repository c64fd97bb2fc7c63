#pragma once

#include <vector>

#include "vaelab/tiling.hpp"

namespace vaelab::phase {

enum class RestartPolicy {
  FreshInit,  // independent init per beta, seed derived from (seed, index)
  WarmStart,  // previous converged psi seeds the next beta (serial only)
};

std::vector<double> log_spaced(double lo, double hi, int count);

struct BetaSweepConfig {
  std::vector<double> betas = log_spaced(1e-4, 1.0, 64);  // strictly increasing
  tiling::IterationConfig iteration;  // template; beta/seed overridden per point
  RestartPolicy restart = RestartPolicy::FreshInit;
  int top_k = 3;
  double merge_radius = 0.05;
};

struct SweepRecord {
  double beta = 0.0;
  double u = 0.0;  // expected squared reconstruction error at the fixed point
  int cluster_count = 0;
  bool converged = false;
  int iterations = 0;
};

struct CriticalPoint {
  double beta = 0.0;
  double height = 0.0;  // |d2u/dbeta2| at the maximum
};

struct SweepResult {
  std::vector<SweepRecord> records;       // ordered by beta
  std::vector<double> d2u;                // aligned with records, endpoints 0
  std::vector<CriticalPoint> critical;    // sorted by height descending
};

/// Nonuniform-grid 3-point central second derivative of u with respect to
/// beta; endpoint entries are 0. Exact for quadratics. Throws on duplicate
/// beta values.
std::vector<double> second_derivative(const std::vector<double>& u,
                                      const std::vector<double>& beta);

/// Strict local maxima of |d2| (plateaus yield their left-most point),
/// sorted by height descending with ties to smaller beta, truncated to top_k.
std::vector<CriticalPoint> detect_critical(const std::vector<double>& d2,
                                           const std::vector<double>& beta, int top_k);

/// Runs the fixed-point iteration at each beta and assembles the order
/// parameter u(beta), its curvature and the detected critical temperatures.
/// Fresh-init sweeps may run on several threads; records merge in beta order
/// so the result is identical to a serial run.
SweepResult sweep(const tiling::Dataset& data, const tiling::LatentGrid& grid,
                  const BetaSweepConfig& cfg, int threads = 1);

}  // namespace vaelab::phase
