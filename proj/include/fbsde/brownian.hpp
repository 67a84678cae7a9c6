#pragma once

#include <cstdint>
#include <vector>

#include "fbsde/timegrid.hpp"

namespace fbsde {

/// The finest-level Gaussian lattice: M * 2^L standard-Gaussian vectors of
/// dimension d, reproducible from the seed. Every coarser set of Brownian
/// increments is an aggregate view of these values, so coarse and fine
/// paths built from one lattice are coupled by construction.
struct BrownianLattice {
  int max_level = 0;      // L
  std::size_t paths = 0;  // M
  int dim = 1;            // d
  double horizon = 1.0;   // T
  std::uint64_t seed = 0;
  std::vector<double> z;  // M * 2^L * d, path-major

  std::size_t slots_per_path() const { return std::size_t{1} << max_level; }
  const double* gaussian(std::size_t path, std::size_t slot) const {
    return &z[(path * slots_per_path() + slot) * dim];
  }
};

/// Brownian increments for one discretisation. Lattice-derived sets have
/// 2^level steps per path and per-component variance T * 2^-level; sets
/// sampled directly for a non-uniform grid carry level = -1.
struct IncrementSet {
  int level = 0;
  std::size_t paths = 0;
  int dim = 1;
  double horizon = 1.0;
  std::size_t n_steps = 0;
  std::vector<double> dw;  // M * n_steps * d, path-major

  std::size_t steps() const { return n_steps; }
  const double* at(std::size_t path, std::size_t step) const { return &dw[(path * n_steps + step) * dim]; }
  double* at(std::size_t path, std::size_t step) { return &dw[(path * n_steps + step) * dim]; }
};

inline constexpr std::size_t kDefaultLatticeCap = std::size_t{1} << 31;

// Draw the finest-level Gaussians. Deterministic in (seed, L, M, d);
// refuses to allocate more than `scalar_cap` doubles.
BrownianLattice sample_lattice(std::uint64_t seed, int max_level, std::size_t paths, int dim,
                               double horizon, std::size_t scalar_cap = kDefaultLatticeCap);

// Level-l increments: increment n of path m sums the 2^(L-l) finest
// Gaussians of block kappa(n,m,l) = 2^L m + n 2^(L-l), scaled by
// sqrt(T) * 2^(-L/2).
IncrementSet increments_at_level(const BrownianLattice& lattice, int level);

// Pairwise sums: the coarse increments coupled to `fine`.
IncrementSet coarse_from_fine(const IncrementSet& fine);

// Antithetic reflection: every increment negated (U -> 1-U through the
// Gaussian inverse CDF).
IncrementSet antithetic_reflect(const IncrementSet& incs);

// Antithetic twins: consecutive increment pairs swapped in order; the
// coupled coarse increments are unchanged.
IncrementSet antithetic_twin(const IncrementSet& fine);

// Increments for an arbitrary (possibly non-uniform) grid, sampled directly
// with per-step variance dt_n. Not lattice-coupled.
IncrementSet sample_increments_for_grid(std::uint64_t seed, const TimeGrid& grid, std::size_t paths, int dim);

}  // namespace fbsde
