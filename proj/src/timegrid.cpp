#include "fbsde/timegrid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fbsde {

namespace {

void check_horizon(double T) {
  if (!std::isfinite(T) || T <= 0.0) throw std::invalid_argument("timegrid: horizon must be finite and positive");
}

}  // namespace

TimeGrid uniform_grid(double T, std::size_t N) {
  check_horizon(T);
  if (N < 1) throw std::invalid_argument("timegrid: uniform grid needs N >= 1");
  TimeGrid g;
  g.horizon = T;
  g.kind = GridKind::Uniform;
  g.points.resize(N + 1);
  for (std::size_t n = 0; n < N; ++n) g.points[n] = static_cast<double>(n) * T / static_cast<double>(N);
  g.points[N] = T;
  return g;
}

TimeGrid chebyshev_grid(double T, std::size_t N) {
  check_horizon(T);
  if (N < 2) throw std::invalid_argument("timegrid: chebyshev grid needs N >= 2 (no interior node otherwise)");
  TimeGrid g;
  g.horizon = T;
  g.kind = GridKind::Chebyshev;
  g.points.resize(N + 1);
  const double pi = 3.14159265358979323846;
  // Build the lower half and mirror so symmetry about T/2 is exact.
  for (std::size_t k = 0; k <= N / 2; ++k) {
    const double t = 0.5 * T * (1.0 - std::cos(pi * static_cast<double>(k) / static_cast<double>(N)));
    g.points[k] = t;
    g.points[N - k] = T - t;
  }
  g.points[0] = 0.0;
  g.points[N] = T;
  if (N % 2 == 0) g.points[N / 2] = 0.5 * T;
  return g;
}

std::size_t locate(const TimeGrid& grid, double t) {
  if (!(t >= 0.0 && t <= grid.horizon)) throw std::invalid_argument("timegrid: t outside [0, T]");
  auto it = std::upper_bound(grid.points.begin(), grid.points.end(), t);
  return static_cast<std::size_t>(it - grid.points.begin()) - 1;
}

double interpolate_constant(const TimeGrid& grid, std::span<const double> values, double t) {
  if (values.size() != grid.points.size())
    throw std::invalid_argument("timegrid: value count does not match grid");
  return values[locate(grid, t)];
}

double interpolate_linear(const TimeGrid& grid, std::span<const double> values, double t) {
  if (values.size() != grid.points.size())
    throw std::invalid_argument("timegrid: value count does not match grid");
  const std::size_t n = locate(grid, t);
  if (n + 1 >= grid.points.size()) return values[n];
  const double w = (t - grid.points[n]) / (grid.points[n + 1] - grid.points[n]);
  return values[n] + w * (values[n + 1] - values[n]);
}

}  // namespace fbsde
