#include "vaelab/phase.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "vaelab/rng.hpp"

namespace vaelab::phase {

std::vector<double> log_spaced(double lo, double hi, int count) {
  if (lo <= 0.0 || hi <= lo || count < 2) throw std::invalid_argument("bad log_spaced range");
  std::vector<double> out(count);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int k = 0; k < count; ++k)
    out[k] = std::exp(llo + (lhi - llo) * k / (count - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

std::vector<double> second_derivative(const std::vector<double>& u,
                                      const std::vector<double>& beta) {
  const int n = static_cast<int>(u.size());
  if (n != static_cast<int>(beta.size())) throw std::invalid_argument("u/beta size mismatch");
  if (n < 3) throw std::invalid_argument("need at least 3 grid points");
  std::vector<double> d2(n, 0.0);
  for (int k = 1; k + 1 < n; ++k) {
    const double h0 = beta[k] - beta[k - 1];
    const double h1 = beta[k + 1] - beta[k];
    if (h0 == 0.0 || h1 == 0.0) throw std::invalid_argument("duplicate beta value");
    // difference of one-sided slopes; exactly zero for constant u
    d2[k] = 2.0 * ((u[k + 1] - u[k]) / h1 - (u[k] - u[k - 1]) / h0) / (h0 + h1);
  }
  return d2;
}

std::vector<CriticalPoint> detect_critical(const std::vector<double>& d2,
                                           const std::vector<double>& beta, int top_k) {
  const int n = static_cast<int>(d2.size());
  if (n != static_cast<int>(beta.size())) throw std::invalid_argument("d2/beta size mismatch");
  if (top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  std::vector<CriticalPoint> maxima;
  for (int k = 1; k + 1 < n; ++k) {
    const double v = std::abs(d2[k]);
    if (!(v > std::abs(d2[k - 1]))) continue;
    // scan right across a plateau of equal values; the left-most point wins
    int j = k + 1;
    while (j < n && std::abs(d2[j]) == v) ++j;
    if (j < n && std::abs(d2[j]) < v) maxima.push_back({beta[k], v});
  }
  std::stable_sort(maxima.begin(), maxima.end(), [](const CriticalPoint& a, const CriticalPoint& b) {
    if (a.height != b.height) return a.height > b.height;
    return a.beta < b.beta;
  });
  if (static_cast<int>(maxima.size()) > top_k) maxima.resize(top_k);
  return maxima;
}

namespace {

SweepRecord run_point(const tiling::Dataset& data, const tiling::LatentGrid& grid,
                      const BetaSweepConfig& cfg, int index,
                      tiling::ReconstructionSet* warm) {
  tiling::IterationConfig it = cfg.iteration;
  it.beta = cfg.betas[static_cast<std::size_t>(index)];
  it.seed = derive_seed(cfg.iteration.seed, static_cast<std::uint64_t>(index));

  tiling::FixedPointResult fp;
  if (warm == nullptr) {
    fp = tiling::smoothed_iterate(data, grid, it);
  } else {
    // warm start: run the damped loop from the previous fixed point
    fp.psi = *warm;
    for (int t = 0; t < it.max_iter; ++t) {
      const auto m = tiling::posterior_step(fp.psi, data, grid, it.beta);
      const auto raw = tiling::reconstruction_step(m, data, fp.psi, &fp.dead_cell_freezes);
      Eigen::MatrixXd next = it.alpha * fp.psi.psi + (1.0 - it.alpha) * raw.psi;
      const double step = (next - fp.psi.psi).rowwise().norm().maxCoeff();
      fp.psi.psi = std::move(next);
      fp.iterations = t + 1;
      if (step < it.tol) {
        fp.converged = true;
        break;
      }
    }
    fp.posterior = tiling::posterior_step(fp.psi, data, grid, it.beta);
  }

  SweepRecord rec;
  rec.beta = it.beta;
  rec.u = tiling::objective_terms(fp.posterior, fp.psi, data, grid).distortion;
  rec.cluster_count = tiling::count_distinct_fixed_points(fp.psi, cfg.merge_radius).count;
  rec.converged = fp.converged;
  rec.iterations = fp.iterations;
  if (warm != nullptr) *warm = fp.psi;
  return rec;
}

}  // namespace

SweepResult sweep(const tiling::Dataset& data, const tiling::LatentGrid& grid,
                  const BetaSweepConfig& cfg, int threads) {
  const int n = static_cast<int>(cfg.betas.size());
  if (n < 1) throw std::invalid_argument("empty beta list");
  for (int k = 1; k < n; ++k)
    if (!(cfg.betas[k] > cfg.betas[k - 1]))
      throw std::invalid_argument("beta list must be strictly increasing");
  if (cfg.betas.front() <= 0.0) throw std::invalid_argument("beta values must be positive");

  SweepResult result;
  result.records.resize(n);

  if (cfg.restart == RestartPolicy::WarmStart) {
    tiling::IterationConfig first = cfg.iteration;
    first.beta = cfg.betas.front();
    first.seed = derive_seed(cfg.iteration.seed, 0);
    tiling::ReconstructionSet warm = tiling::init_psi(grid, data, first);
    for (int k = 0; k < n; ++k)
      result.records[static_cast<std::size_t>(k)] = run_point(data, grid, cfg, k, &warm);
  } else if (threads <= 1 || n == 1) {
    for (int k = 0; k < n; ++k)
      result.records[static_cast<std::size_t>(k)] = run_point(data, grid, cfg, k, nullptr);
  } else {
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        const int k = next.fetch_add(1);
        if (k >= n) return;
        result.records[static_cast<std::size_t>(k)] = run_point(data, grid, cfg, k, nullptr);
      }
    };
    std::vector<std::thread> pool;
    const int count = std::min(threads, n);
    pool.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::vector<double> u(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) u[static_cast<std::size_t>(k)] = result.records[static_cast<std::size_t>(k)].u;
  if (n >= 3) {
    result.d2u = second_derivative(u, cfg.betas);
    result.critical = detect_critical(result.d2u, cfg.betas, cfg.top_k);
  } else {
    result.d2u.assign(static_cast<std::size_t>(n), 0.0);
  }
  return result;
}

}  // namespace vaelab::phase
