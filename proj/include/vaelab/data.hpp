#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vaelab/tiling.hpp"

namespace vaelab::data {

/// Isotropic Gaussian blobs, per_blob points around each center.
tiling::Dataset gaussian_blobs(const std::vector<std::vector<double>>& centers,
                               double sigma, int per_blob, std::uint64_t seed);

/// Points along three fixed line segments inside the unit box, with isotropic
/// Gaussian jitter of the given scale.
tiling::Dataset mixture_of_lines(int n, std::uint64_t seed, double noise = 0.01);

/// Points on two fixed circles inside the unit box, with radial jitter.
tiling::Dataset mixture_of_circles(int n, std::uint64_t seed, double noise = 0.01);

/// 8x8 near-binary images: one horizontal or vertical bright bar at a random
/// position over a faint noise background. Flattened row-major to 64 dims.
tiling::Dataset micro_bars(int n, std::uint64_t seed);

constexpr int kMicroBarsSide = 8;

}  // namespace vaelab::data
