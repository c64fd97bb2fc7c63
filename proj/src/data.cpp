#include "vaelab/data.hpp"

#include <cmath>
#include <stdexcept>

#include "vaelab/rng.hpp"

namespace vaelab::data {

tiling::Dataset gaussian_blobs(const std::vector<std::vector<double>>& centers,
                               double sigma, int per_blob, std::uint64_t seed) {
  if (centers.empty() || per_blob < 1) throw std::invalid_argument("empty blob spec");
  const int d = static_cast<int>(centers.front().size());
  tiling::Dataset ds;
  ds.points.resize(static_cast<int>(centers.size()) * per_blob, d);
  Rng rng(seed);
  int row = 0;
  for (int c = 0; c < static_cast<int>(centers.size()); ++c) {
    for (int k = 0; k < per_blob; ++k, ++row) {
      for (int j = 0; j < d; ++j)
        ds.points(row, j) = centers[c][static_cast<std::size_t>(j)] + sigma * rng.normal();
      ds.labels.push_back(c);
    }
  }
  return ds;
}

tiling::Dataset mixture_of_lines(int n, std::uint64_t seed, double noise) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  static const double seg[3][4] = {
      // x0, y0, x1, y1
      {-0.42, -0.40, 0.00, -0.36},
      {-0.40, 0.12, -0.10, 0.42},
      {0.22, 0.38, 0.42, -0.10},
  };
  tiling::Dataset ds;
  ds.points.resize(n, 2);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int s = rng.uniform_int(3);
    const double t = rng.uniform();
    ds.points(i, 0) = seg[s][0] + t * (seg[s][2] - seg[s][0]) + noise * rng.normal();
    ds.points(i, 1) = seg[s][1] + t * (seg[s][3] - seg[s][1]) + noise * rng.normal();
    ds.labels.push_back(s);
  }
  return ds;
}

tiling::Dataset mixture_of_circles(int n, std::uint64_t seed, double noise) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  static const double circle[2][3] = {
      // cx, cy, r
      {-0.22, -0.18, 0.20},
      {0.20, 0.20, 0.22},
  };
  tiling::Dataset ds;
  ds.points.resize(n, 2);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int c = rng.uniform_int(2);
    const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double r = circle[c][2] + noise * rng.normal();
    ds.points(i, 0) = circle[c][0] + r * std::cos(theta);
    ds.points(i, 1) = circle[c][1] + r * std::sin(theta);
    ds.labels.push_back(c);
  }
  return ds;
}

tiling::Dataset micro_bars(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const int side = kMicroBarsSide;
  tiling::Dataset ds;
  ds.points.resize(n, side * side);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    // a pair of parallel bright bars half an image apart, so every quadrant
    // patch carries bar structure; intensity varies per image
    const bool horizontal = rng.uniform_int(2) == 0;
    const int pos = rng.uniform_int(side);
    const int twin = (pos + side / 2) % side;
    const double bright = 0.85 + 0.15 * rng.uniform();
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const int line = horizontal ? r : c;
        const bool on = line == pos || line == twin;
        ds.points(i, r * side + c) = on ? bright : 0.0;
      }
    ds.labels.push_back(horizontal ? pos : side + pos);
  }
  return ds;
}

}  // namespace vaelab::data
