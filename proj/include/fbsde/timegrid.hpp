#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fbsde {

enum class GridKind { Uniform, Chebyshev };

/// Discretisation of [0,T]: t_0 = 0 < t_1 < ... < t_N = T.
/// Immutable after construction and safe to share across threads.
struct TimeGrid {
  double horizon = 0.0;
  GridKind kind = GridKind::Uniform;
  std::vector<double> points;

  std::size_t steps() const { return points.empty() ? 0 : points.size() - 1; }
  double dt(std::size_t n) const { return points[n + 1] - points[n]; }
};

// N+1 equally spaced points, spacing T/N.
TimeGrid uniform_grid(double T, std::size_t N);

// Chebyshev-Lobatto nodes mapped from [-1,1] to [0,T]; endpoints land
// exactly on 0 and T and the node set is symmetric about T/2.
TimeGrid chebyshev_grid(double T, std::size_t N);

// Index of the nearest grid point at or before t; rejects t outside [0,T].
std::size_t locate(const TimeGrid& grid, double t);

// Piecewise constant extension of node values to [0,T].
double interpolate_constant(const TimeGrid& grid, std::span<const double> values, double t);

// Piecewise linear extension (continuous, but not adapted).
double interpolate_linear(const TimeGrid& grid, std::span<const double> values, double t);

}  // namespace fbsde
