#include "fbsde/brownian.hpp"

#include <cmath>
#include <stdexcept>

#include "fbsde/rng.hpp"

namespace fbsde {

BrownianLattice sample_lattice(std::uint64_t seed, int max_level, std::size_t paths, int dim,
                               double horizon, std::size_t scalar_cap) {
  if (max_level < 0) throw std::invalid_argument("brownian: max_level must be >= 0");
  if (paths < 1) throw std::invalid_argument("brownian: need at least one path");
  if (dim < 1) throw std::invalid_argument("brownian: dimension must be >= 1");
  if (!(horizon > 0.0)) throw std::invalid_argument("brownian: horizon must be positive");
  if (max_level >= 62) throw std::invalid_argument("brownian: max_level too large");

  const std::size_t slots = std::size_t{1} << max_level;
  if (paths > scalar_cap / slots || paths * slots > scalar_cap / static_cast<std::size_t>(dim))
    throw std::invalid_argument("brownian: lattice of M*2^L*d scalars exceeds the memory cap");

  BrownianLattice lat;
  lat.max_level = max_level;
  lat.paths = paths;
  lat.dim = dim;
  lat.horizon = horizon;
  lat.seed = seed;
  lat.z.resize(paths * slots * static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < lat.z.size(); ++i) lat.z[i] = rng::normal(seed, i);
  return lat;
}

IncrementSet increments_at_level(const BrownianLattice& lattice, int level) {
  if (level < 0 || level > lattice.max_level)
    throw std::invalid_argument("brownian: level outside [0, max_level]");
  IncrementSet out;
  out.level = level;
  out.paths = lattice.paths;
  out.dim = lattice.dim;
  out.horizon = lattice.horizon;
  const std::size_t steps = std::size_t{1} << level;
  out.n_steps = steps;
  const std::size_t block = std::size_t{1} << (lattice.max_level - level);
  const int d = lattice.dim;
  const double scale = std::sqrt(lattice.horizon) * std::pow(2.0, -0.5 * lattice.max_level);
  out.dw.assign(lattice.paths * steps * static_cast<std::size_t>(d), 0.0);
  for (std::size_t m = 0; m < lattice.paths; ++m) {
    for (std::size_t n = 0; n < steps; ++n) {
      double* inc = out.at(m, n);
      for (std::size_t k = 0; k < block; ++k) {
        const double* g = lattice.gaussian(m, n * block + k);
        for (int c = 0; c < d; ++c) inc[c] += g[c];
      }
      for (int c = 0; c < d; ++c) inc[c] *= scale;
    }
  }
  return out;
}

IncrementSet coarse_from_fine(const IncrementSet& fine) {
  if (fine.steps() < 2 || fine.steps() % 2 != 0)
    throw std::invalid_argument("brownian: coarse_from_fine needs an even number of fine steps");
  IncrementSet out;
  out.level = fine.level > 0 ? fine.level - 1 : -1;
  out.paths = fine.paths;
  out.dim = fine.dim;
  out.horizon = fine.horizon;
  const std::size_t steps = fine.steps() / 2;
  out.n_steps = steps;
  out.dw.resize(fine.dw.size() / 2);
  for (std::size_t m = 0; m < fine.paths; ++m) {
    for (std::size_t n = 0; n < steps; ++n) {
      const double* a = fine.at(m, 2 * n);
      const double* b = fine.at(m, 2 * n + 1);
      double* c = out.at(m, n);
      for (int k = 0; k < fine.dim; ++k) c[k] = a[k] + b[k];
    }
  }
  return out;
}

IncrementSet antithetic_reflect(const IncrementSet& incs) {
  IncrementSet out = incs;
  for (double& v : out.dw) v = -v;
  return out;
}

IncrementSet antithetic_twin(const IncrementSet& fine) {
  if (fine.steps() % 2 != 0)
    throw std::invalid_argument("brownian: antithetic_twin needs an even number of steps");
  IncrementSet out = fine;
  for (std::size_t m = 0; m < fine.paths; ++m) {
    for (std::size_t n = 0; n + 1 < fine.steps(); n += 2) {
      const double* a = fine.at(m, n);
      const double* b = fine.at(m, n + 1);
      double* oa = out.at(m, n);
      double* ob = out.at(m, n + 1);
      for (int k = 0; k < fine.dim; ++k) {
        oa[k] = b[k];
        ob[k] = a[k];
      }
    }
  }
  return out;
}

IncrementSet sample_increments_for_grid(std::uint64_t seed, const TimeGrid& grid, std::size_t paths, int dim) {
  if (paths < 1 || dim < 1) throw std::invalid_argument("brownian: need paths >= 1 and dim >= 1");
  const std::size_t steps = grid.steps();
  if (steps < 1) throw std::invalid_argument("brownian: grid has no steps");
  IncrementSet out;
  out.level = -1;  // not lattice-derived
  out.n_steps = steps;
  out.paths = paths;
  out.dim = dim;
  out.horizon = grid.horizon;
  out.dw.resize(paths * steps * static_cast<std::size_t>(dim));
  std::size_t idx = 0;
  for (std::size_t m = 0; m < paths; ++m)
    for (std::size_t n = 0; n < steps; ++n) {
      const double s = std::sqrt(grid.dt(n));
      double* inc = out.at(m, n);
      for (int c = 0; c < dim; ++c, ++idx) inc[c] = s * rng::normal(seed, idx);
    }
  return out;
}

}  // namespace fbsde
