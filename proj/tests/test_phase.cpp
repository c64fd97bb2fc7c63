#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "vaelab/data.hpp"
#include "vaelab/phase.hpp"
#include "vaelab/tiling.hpp"

using namespace vaelab;

namespace {

// Independent plain-loop fixed-point iteration for tiny 1D datasets: damped
// updates, uniform prior, converged order parameter u(beta). No shared code
// with the library path.
double brute_force_u(const std::vector<double>& xs, const std::vector<double>& centers,
                     double beta, double alpha, double tol, int max_iter) {
  const std::size_t n = xs.size();
  const std::size_t cells = centers.size();
  const double prior = 1.0 / static_cast<double>(cells);
  std::vector<double> psi = centers;
  std::vector<std::vector<double>> m(n, std::vector<double>(cells, 0.0));

  auto posterior = [&]() {
    for (std::size_t i = 0; i < n; ++i) {
      double best = 1e300;
      for (std::size_t b = 0; b < cells; ++b) {
        const double d2 = (xs[i] - psi[b]) * (xs[i] - psi[b]);
        if (d2 < best) best = d2;
      }
      double c = 0.0;
      for (std::size_t b = 0; b < cells; ++b) {
        const double d2 = (xs[i] - psi[b]) * (xs[i] - psi[b]);
        m[i][b] = std::exp(-(d2 - best) / (2.0 * beta));
        c += m[i][b] * prior;
      }
      for (std::size_t b = 0; b < cells; ++b) m[i][b] /= c;
    }
  };

  for (int t = 0; t < max_iter; ++t) {
    posterior();
    double worst = 0.0;
    for (std::size_t b = 0; b < cells; ++b) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        num += xs[i] * m[i][b];
        den += m[i][b];
      }
      const double raw = den > 0.0 ? num / den : psi[b];
      const double next = alpha * psi[b] + (1.0 - alpha) * raw;
      worst = std::max(worst, std::abs(next - psi[b]));
      psi[b] = next;
    }
    if (worst < tol) break;
  }

  posterior();
  double u = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t b = 0; b < cells; ++b)
      u += m[i][b] * prior * (xs[i] - psi[b]) * (xs[i] - psi[b]);
  return u / static_cast<double>(n);
}

}  // namespace

TEST_CASE("log_spaced endpoints and monotonicity") {
  const auto b = phase::log_spaced(1e-4, 1.0, 16);
  CHECK(b.size() == 16);
  CHECK(b.front() == doctest::Approx(1e-4));
  CHECK(b.back() == doctest::Approx(1.0));
  for (std::size_t k = 1; k < b.size(); ++k) CHECK(b[k] > b[k - 1]);
}

TEST_CASE("second_derivative: constants vanish, quadratics are exact") {
  const auto beta = phase::log_spaced(0.1, 2.0, 12);
  std::vector<double> constant(beta.size(), 3.7);
  for (const double v : phase::second_derivative(constant, beta)) CHECK(v == 0.0);

  std::vector<double> quad(beta.size());
  for (std::size_t k = 0; k < beta.size(); ++k) quad[k] = beta[k] * beta[k];
  const auto d2 = phase::second_derivative(quad, beta);
  CHECK(d2.front() == 0.0);
  CHECK(d2.back() == 0.0);
  for (std::size_t k = 1; k + 1 < beta.size(); ++k)
    CHECK(d2[k] == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("second_derivative rejects duplicate grid points") {
  std::vector<double> beta = {0.1, 0.1, 0.2};
  std::vector<double> u = {1.0, 2.0, 3.0};
  CHECK_THROWS(phase::second_derivative(u, beta));
}

TEST_CASE("second_derivative tracks a smooth function within the discretization bound") {
  const auto beta = phase::log_spaced(0.1, 2.0, 24);
  std::vector<double> u(beta.size());
  for (std::size_t k = 0; k < beta.size(); ++k) u[k] = std::sin(3.0 * beta[k]);
  const auto d2 = phase::second_derivative(u, beta);
  auto f = [](double x) { return std::sin(3.0 * x); };
  for (std::size_t k = 1; k + 1 < beta.size(); ++k) {
    const double h0 = beta[k] - beta[k - 1];
    const double h1 = beta[k + 1] - beta[k];
    // Richardson-refined central difference around beta[k]
    auto central = [&](double h) {
      return (f(beta[k] + h) - 2.0 * f(beta[k]) + f(beta[k] - h)) / (h * h);
    };
    const double h = 1e-3;
    const double refined = (4.0 * central(h / 2) - central(h)) / 3.0;
    // leading error of the nonuniform 3-point formula: (h1-h0)/3 u''' + O(h^2)
    const double bound = 27.0 * std::abs(h1 - h0) / 3.0 + 81.0 * (h0 * h0 + h1 * h1) / 6.0;
    CHECK(std::abs(d2[k] - refined) <= bound);
  }
}

TEST_CASE("detect_critical: monotone input yields at most one boundary-adjacent maximum") {
  std::vector<double> beta = {1, 2, 3, 4, 5, 6};
  std::vector<double> d2 = {0.0, 1.0, 2.0, 3.0, 4.0, 0.0};
  const auto crit = phase::detect_critical(d2, beta, 3);
  REQUIRE(crit.size() <= 1);
  if (!crit.empty()) CHECK(crit.front().beta == beta[beta.size() - 2]);
}

TEST_CASE("detect_critical: bumps ordered by height, ties to smaller beta, plateaus leftmost") {
  std::vector<double> beta = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> d2 = {0, 2, 0, -3, 0, 1, 0, 0, 0};  // heights 2, 3, 1 via |.|
  auto crit = phase::detect_critical(d2, beta, 3);
  REQUIRE(crit.size() == 3);
  CHECK(crit[0].height == doctest::Approx(3.0));
  CHECK(crit[0].beta == doctest::Approx(4.0));
  CHECK(crit[1].height == doctest::Approx(2.0));
  CHECK(crit[2].height == doctest::Approx(1.0));

  crit = phase::detect_critical(d2, beta, 2);
  REQUIRE(crit.size() == 2);  // truncation to top_k

  std::vector<double> tie = {0, 5, 0, 5, 0};
  std::vector<double> tb = {1, 2, 3, 4, 5};
  crit = phase::detect_critical(tie, tb, 2);
  REQUIRE(crit.size() == 2);
  CHECK(crit[0].beta == doctest::Approx(2.0));  // equal heights: smaller beta first

  std::vector<double> plateau = {0, 4, 4, 4, 0};
  crit = phase::detect_critical(plateau, tb, 3);
  REQUIRE(crit.size() == 1);
  CHECK(crit[0].beta == doctest::Approx(2.0));  // leftmost point of the plateau
}

TEST_CASE("sweep: single data point gives zero order parameter and no criticals") {
  tiling::Dataset data;
  data.points.resize(1, 2);
  data.points << 0.1, -0.2;
  tiling::LatentGrid grid(2, 4);
  phase::BetaSweepConfig cfg;
  cfg.betas = phase::log_spaced(1e-3, 1.0, 12);
  cfg.iteration.alpha = 0.0;
  cfg.iteration.tol = 1e-12;
  cfg.iteration.seed = 3;
  const auto result = phase::sweep(data, grid, cfg);
  for (const auto& rec : result.records) {
    CHECK(rec.converged);
    CHECK(rec.u <= 1e-20);
    CHECK(rec.cluster_count == 1);
  }
  for (const auto& c : result.critical) CHECK(c.height <= 1e-12);
}

TEST_CASE("sweep: two 1D points at +-1 transition from 0 to the data variance") {
  tiling::Dataset data;
  data.points.resize(2, 1);
  data.points << -1.0, 1.0;
  tiling::LatentGrid grid(1, 32);

  phase::BetaSweepConfig cfg;
  cfg.betas = phase::log_spaced(0.05, 4.0, 48);
  cfg.iteration.alpha = 0.9;
  cfg.iteration.tol = 1e-9;
  cfg.iteration.max_iter = 30000;
  cfg.iteration.init_noise = 0.0;
  cfg.iteration.seed = 1;
  cfg.merge_radius = 0.05;
  const auto result = phase::sweep(data, grid, cfg);

  CHECK(result.records.front().u < 0.05);
  CHECK(result.records.back().u == doctest::Approx(1.0).epsilon(1e-6));
  REQUIRE(!result.critical.empty());

  // dense independent oracle: u(beta) by plain-loop iteration on 512 points
  std::vector<double> xs = {-1.0, 1.0};
  std::vector<double> centers(32);
  for (int a = 0; a < 32; ++a) centers[static_cast<std::size_t>(a)] = -0.5 + (a + 0.5) / 32.0;
  const auto dense = phase::log_spaced(0.05, 4.0, 512);
  std::vector<double> du(dense.size());
  for (std::size_t k = 0; k < dense.size(); ++k)
    du[k] = brute_force_u(xs, centers, dense[k], 0.9, 1e-9, 30000);
  const auto dense_d2 = phase::second_derivative(du, dense);
  std::size_t arg = 1;
  for (std::size_t k = 1; k + 1 < dense.size(); ++k)
    if (std::abs(dense_d2[k]) > std::abs(dense_d2[arg])) arg = k;

  // detected top critical point matches the dense oracle within ~one coarse
  // grid step (log spacing factor about 1.098)
  const double step = std::log(cfg.betas[1] / cfg.betas[0]);
  CHECK(std::abs(std::log(result.critical.front().beta / dense[arg])) <= 1.5 * step);

  // exactly one dominant spike
  if (result.critical.size() > 1)
    CHECK(result.critical[0].height > 3.0 * result.critical[1].height);
}

TEST_CASE("sweep: cluster-count transition coincides with the top critical beta") {
  // two point-mass blobs 0.5 apart in 2D, latent grid in 1D
  const auto data = data::gaussian_blobs({{-0.25, 0.0}, {0.25, 0.0}}, 0.0, 20, 5);
  tiling::LatentGrid grid(1, 32);

  phase::BetaSweepConfig cfg;
  cfg.betas = phase::log_spaced(1e-3, 1.0, 64);
  cfg.iteration.alpha = 0.9;
  cfg.iteration.tol = 1e-10;
  cfg.iteration.max_iter = 20000;
  cfg.iteration.init_noise = 0.0;
  cfg.iteration.seed = 7;
  cfg.merge_radius = 0.05;
  const auto result = phase::sweep(data, grid, cfg);

  CHECK(result.records.front().cluster_count == 2);
  CHECK(result.records.back().cluster_count == 1);

  // cluster-count-transition oracle: last index before the 2 -> 1 drop
  int drop = -1;
  for (std::size_t k = 0; k + 1 < result.records.size(); ++k)
    if (result.records[k].cluster_count == 2 && result.records[k + 1].cluster_count == 1)
      drop = static_cast<int>(k);
  REQUIRE(drop >= 0);
  REQUIRE(!result.critical.empty());
  int top_idx = -1;
  for (std::size_t k = 0; k < cfg.betas.size(); ++k)
    if (cfg.betas[k] == result.critical.front().beta) top_idx = static_cast<int>(k);
  REQUIRE(top_idx >= 0);
  CHECK(std::abs(top_idx - drop) <= 1);

  // order parameter is non-decreasing along the sweep
  for (std::size_t k = 1; k < result.records.size(); ++k)
    CHECK(result.records[k].u >= result.records[k - 1].u - 1e-8);
}

TEST_CASE("sweep: parallel and serial fresh-init sweeps are bitwise identical") {
  const auto data = data::mixture_of_lines(40, 11);
  tiling::LatentGrid grid(2, 6);
  phase::BetaSweepConfig cfg;
  cfg.betas = phase::log_spaced(1e-3, 0.5, 10);
  cfg.iteration.max_iter = 200;
  cfg.iteration.seed = 13;
  const auto serial = phase::sweep(data, grid, cfg, 1);
  const auto parallel = phase::sweep(data, grid, cfg, 4);
  REQUIRE(serial.records.size() == parallel.records.size());
  for (std::size_t k = 0; k < serial.records.size(); ++k) {
    CHECK(serial.records[k].beta == parallel.records[k].beta);
    CHECK(serial.records[k].u == parallel.records[k].u);  // bitwise
    CHECK(serial.records[k].cluster_count == parallel.records[k].cluster_count);
    CHECK(serial.records[k].iterations == parallel.records[k].iterations);
  }
  for (std::size_t k = 0; k < serial.d2u.size(); ++k)
    CHECK(serial.d2u[k] == parallel.d2u[k]);
}

TEST_CASE("sweep defaults: 64 log-spaced betas") {
  phase::BetaSweepConfig cfg;
  CHECK(cfg.betas.size() == 64);
  CHECK(cfg.betas.front() == doctest::Approx(1e-4));
  CHECK(cfg.betas.back() == doctest::Approx(1.0));
  CHECK(cfg.top_k == 3);
}

TEST_CASE("sweep: line-mixture protocol reports up to top-3 criticals sorted by height") {
  const auto data = data::mixture_of_lines(200, 42);
  tiling::LatentGrid grid(2, 16);
  phase::BetaSweepConfig cfg;
  cfg.betas = phase::log_spaced(1e-4, 1.0, 24);
  cfg.iteration.seed = 3;
  cfg.top_k = 3;
  const auto result = phase::sweep(data, grid, cfg);
  REQUIRE(!result.critical.empty());
  CHECK(result.critical.size() <= 3);
  for (std::size_t k = 1; k < result.critical.size(); ++k)
    CHECK(result.critical[k].height <= result.critical[k - 1].height);
  for (const auto& c : result.critical) {
    bool on_grid = false;
    for (const double b : cfg.betas)
      if (b == c.beta) on_grid = true;
    CHECK(on_grid);
  }
}

TEST_CASE("sweep: warm start runs serially and stays ordered") {
  const auto data = data::gaussian_blobs({{-0.25, 0.0}, {0.25, 0.0}}, 0.0, 10, 5);
  tiling::LatentGrid grid(1, 16);
  phase::BetaSweepConfig cfg;
  cfg.betas = phase::log_spaced(1e-3, 1.0, 12);
  cfg.restart = phase::RestartPolicy::WarmStart;
  cfg.iteration.tol = 1e-8;
  cfg.iteration.max_iter = 10000;
  cfg.iteration.init_noise = 0.0;
  cfg.iteration.seed = 19;
  const auto result = phase::sweep(data, grid, cfg, 4);  // threads ignored
  REQUIRE(result.records.size() == cfg.betas.size());
  for (std::size_t k = 0; k < result.records.size(); ++k)
    CHECK(result.records[k].beta == cfg.betas[k]);
  CHECK(result.records.back().cluster_count == 1);
}
