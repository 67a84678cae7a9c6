#pragma once

#include <cstdint>

namespace fbsde::rng {

// Stateless counter-based generator: slot k of stream `seed` is addressable
// directly, so parallel consumers see the same values regardless of thread
// count or evaluation order.
std::uint64_t mix64(std::uint64_t seed, std::uint64_t counter);

// Uniform in the open interval (0,1), 53-bit resolution.
double uniform01(std::uint64_t seed, std::uint64_t counter);

// Standard Gaussian via the inverse CDF (Wichura's PPND16). Using the
// inverse transform keeps antithetic reflection exact: 1-U maps to -Z.
double normal(std::uint64_t seed, std::uint64_t counter);

// Inverse of the standard normal CDF, |relative error| < 1e-15 on (0,1).
double inverse_normal_cdf(double p);

// Derive an independent substream seed (e.g. one per training iteration).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

// k-th point of a d-dimensional Kronecker (additive recurrence) sequence in
// [0,1)^d; quasi-uniform, used for evaluation clouds.
void kronecker_point(std::uint64_t k, int dim, double* out);

}  // namespace fbsde::rng
