#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "fbsde/brownian.hpp"
#include "fbsde/rng.hpp"

using namespace fbsde;

TEST_CASE("lattice is deterministic in the seed") {
  const BrownianLattice a = sample_lattice(42, 3, 4, 2, 1.0);
  const BrownianLattice b = sample_lattice(42, 3, 4, 2, 1.0);
  CHECK(a.z == b.z);
  const BrownianLattice c = sample_lattice(43, 3, 4, 2, 1.0);
  CHECK(a.z != c.z);
}

TEST_CASE("lattice shapes and the memory cap") {
  const BrownianLattice one = sample_lattice(1, 0, 1, 1, 1.0);
  CHECK(one.z.size() == 1);
  CHECK_THROWS_AS(sample_lattice(1, 20, 1 << 20, 4, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_lattice(1, -1, 1, 1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_lattice(1, 0, 0, 1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_lattice(1, 0, 1, 0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_lattice(1, 0, 1, 1, 0.0), std::invalid_argument);
}

TEST_CASE("gaussian moments over 1e6 draws") {
  const std::size_t n = 1'000'000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = rng::normal(987, i);
    s += z;
    s2 += z * z;
  }
  const double mean = s / static_cast<double>(n);
  const double var = s2 / static_cast<double>(n) - mean * mean;
  const double se_mean = 1.0 / std::sqrt(static_cast<double>(n));
  const double se_var = std::sqrt(2.0 / static_cast<double>(n));
  CHECK(std::fabs(mean) < 4.0 * se_mean);
  CHECK(std::fabs(var - 1.0) < 4.0 * se_var);
}

TEST_CASE("kappa block indexing matches the closed form") {
  // kappa(n, m, l) = 2^L (m-1) + n 2^(L-l) in the paper's 1-based path index;
  // the lattice stores path-major blocks so increment (m, n) at level l sums
  // slots [n 2^(L-l), (n+1) 2^(L-l)) of path m.
  const int L = 3;
  const BrownianLattice lat = sample_lattice(7, L, 3, 1, 1.0);
  const IncrementSet lvl2 = increments_at_level(lat, 2);
  // path index 1 (0-based; the paper's m = 2), n = 1, l = 2: slots 10, 11 in
  // the flat 1-based numbering -> path 1, local slots 2 and 3.
  const double scale = std::pow(2.0, -0.5 * L);
  const double want = scale * (*lat.gaussian(1, 2) + *lat.gaussian(1, 3));
  CHECK(*lvl2.at(1, 1) == doctest::Approx(want).epsilon(1e-15));

  // kappa(0, m=1, l) = 0 for any l: first increment always starts at slot 0.
  for (int l = 0; l <= L; ++l) {
    const IncrementSet inc = increments_at_level(lat, l);
    double sum0 = 0.0;
    for (std::size_t k = 0; k < (std::size_t{1} << (L - l)); ++k) sum0 += *lat.gaussian(0, k);
    CHECK(*inc.at(0, 0) == doctest::Approx(scale * sum0).epsilon(1e-15));
  }
}

TEST_CASE("finest level is the raw gaussians scaled by 2^(-L/2)") {
  const int L = 4;
  const BrownianLattice lat = sample_lattice(11, L, 2, 1, 1.0);
  const IncrementSet fine = increments_at_level(lat, L);
  const double scale = std::pow(2.0, -0.5 * L);
  for (std::size_t n = 0; n < fine.steps(); ++n)
    CHECK(*fine.at(0, n) == doctest::Approx(scale * *lat.gaussian(0, n)).epsilon(1e-15));
}

TEST_CASE("coarse increments equal summed fine increments at every level") {
  const int L = 10;
  const BrownianLattice lat = sample_lattice(99, L, 4, 1, 1.0);
  for (int l = L; l >= 1; --l) {
    const IncrementSet fine = increments_at_level(lat, l);
    const IncrementSet coarse = coarse_from_fine(fine);
    const IncrementSet direct = increments_at_level(lat, l - 1);
    REQUIRE(coarse.steps() == direct.steps());
    for (std::size_t m = 0; m < lat.paths; ++m)
      for (std::size_t n = 0; n < coarse.steps(); ++n)
        CHECK(std::fabs(*coarse.at(m, n) - *direct.at(m, n)) <= 1e-12);
  }
}

TEST_CASE("total displacement is level independent") {
  const int L = 6;
  const BrownianLattice lat = sample_lattice(5, L, 8, 2, 2.0);
  std::vector<double> base(2, 0.0);
  const IncrementSet finest = increments_at_level(lat, L);
  for (std::size_t n = 0; n < finest.steps(); ++n)
    for (int c = 0; c < 2; ++c) base[c] += finest.at(3, n)[c];
  for (int l = 0; l <= L; ++l) {
    const IncrementSet inc = increments_at_level(lat, l);
    std::vector<double> tot(2, 0.0);
    for (std::size_t n = 0; n < inc.steps(); ++n)
      for (int c = 0; c < 2; ++c) tot[c] += inc.at(3, n)[c];
    for (int c = 0; c < 2; ++c) CHECK(std::fabs(tot[c] - base[c]) <= 1e-12);
  }
}

TEST_CASE("repeated coarsening telescopes to one increment") {
  const int L = 5;
  const BrownianLattice lat = sample_lattice(13, L, 2, 1, 1.0);
  IncrementSet cur = increments_at_level(lat, L);
  double total = 0.0;
  for (std::size_t n = 0; n < cur.steps(); ++n) total += *cur.at(1, n);
  for (int l = L; l >= 1; --l) cur = coarse_from_fine(cur);
  REQUIRE(cur.steps() == 1);
  CHECK(*cur.at(1, 0) == doctest::Approx(total).epsilon(1e-12));
}

TEST_CASE("per-component variance scales as T 2^-l") {
  const double T = 2.0;
  const int L = 5;
  const std::size_t M = 4096;
  const BrownianLattice lat = sample_lattice(21, L, M, 1, T);
  for (int l = 3; l <= L; ++l) {
    const IncrementSet inc = increments_at_level(lat, l);
    double s2 = 0.0;
    std::size_t n_samples = 0;
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t n = 0; n < inc.steps(); ++n) {
        s2 += *inc.at(m, n) * *inc.at(m, n);
        ++n_samples;
      }
    const double var = s2 / static_cast<double>(n_samples);
    const double want = T * std::pow(2.0, -l);
    CHECK(std::fabs(var - want) / want < 0.05);
  }
}

TEST_CASE("antithetic reflection negates and involutes") {
  const BrownianLattice lat = sample_lattice(3, 3, 2, 2, 1.0);
  const IncrementSet inc = increments_at_level(lat, 3);
  const IncrementSet ref = antithetic_reflect(inc);
  for (std::size_t i = 0; i < inc.dw.size(); ++i) CHECK(ref.dw[i] == -inc.dw[i]);
  const IncrementSet back = antithetic_reflect(ref);
  CHECK(back.dw == inc.dw);
  // the path-sum of an original+reflected pair vanishes exactly
  for (std::size_t m = 0; m < inc.paths; ++m) {
    double s = 0.0;
    for (std::size_t n = 0; n < inc.steps(); ++n) s += *inc.at(m, n) + *ref.at(m, n);
    CHECK(s == 0.0);
  }
}

TEST_CASE("antithetic twins swap pairs and preserve the coarse path") {
  const BrownianLattice lat = sample_lattice(17, 3, 2, 1, 1.0);
  const IncrementSet inc = increments_at_level(lat, 3);
  const IncrementSet twin = antithetic_twin(inc);
  for (std::size_t m = 0; m < inc.paths; ++m)
    for (std::size_t n = 0; n + 1 < inc.steps(); n += 2) {
      CHECK(*twin.at(m, n) == *inc.at(m, n + 1));
      CHECK(*twin.at(m, n + 1) == *inc.at(m, n));
    }
  const IncrementSet c1 = coarse_from_fine(inc);
  const IncrementSet c2 = coarse_from_fine(twin);
  for (std::size_t i = 0; i < c1.dw.size(); ++i) CHECK(c1.dw[i] == doctest::Approx(c2.dw[i]).epsilon(1e-15));
  const IncrementSet twintwin = antithetic_twin(twin);
  CHECK(twintwin.dw == inc.dw);
}

TEST_CASE("odd step counts are rejected") {
  IncrementSet odd;
  odd.level = -1;
  odd.paths = 1;
  odd.dim = 1;
  odd.n_steps = 3;
  odd.dw = {0.1, 0.2, 0.3};
  CHECK_THROWS_AS(coarse_from_fine(odd), std::invalid_argument);
  CHECK_THROWS_AS(antithetic_twin(odd), std::invalid_argument);
}

TEST_CASE("level bounds are enforced") {
  const BrownianLattice lat = sample_lattice(1, 2, 1, 1, 1.0);
  CHECK_THROWS_AS(increments_at_level(lat, 3), std::invalid_argument);
  CHECK_THROWS_AS(increments_at_level(lat, -1), std::invalid_argument);
}

TEST_CASE("grid-sampled increments have per-step variance dt") {
  const TimeGrid cheb = chebyshev_grid(1.0, 8);
  const IncrementSet inc = sample_increments_for_grid(33, cheb, 20000, 1);
  for (std::size_t n = 0; n < 8; ++n) {
    double s2 = 0.0;
    for (std::size_t m = 0; m < inc.paths; ++m) s2 += *inc.at(m, n) * *inc.at(m, n);
    const double var = s2 / static_cast<double>(inc.paths);
    CHECK(std::fabs(var - cheb.dt(n)) / cheb.dt(n) < 0.06);
  }
}

TEST_CASE("dW^2 - dt is centred with variance 2 dt^2") {
  const double T = 1.0;
  const int l = 4;
  const double dt = T * std::pow(2.0, -l);
  const std::size_t M = 62500;  // M * 2^l = 1e6 increments
  const BrownianLattice lat = sample_lattice(77, l, M, 1, T);
  const IncrementSet inc = increments_at_level(lat, l);
  double s = 0.0, s2 = 0.0;
  std::size_t n_samples = 0;
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t n = 0; n < inc.steps(); ++n) {
      const double v = *inc.at(m, n) * *inc.at(m, n) - dt;
      s += v;
      s2 += v * v;
      ++n_samples;
    }
  const double n = static_cast<double>(n_samples);
  const double mean = s / n;
  const double var = (s2 - s * s / n) / (n - 1.0);
  const double se_mean = std::sqrt(var / n);
  CHECK(std::fabs(mean) <= 3.0 * se_mean);
  CHECK(std::fabs(var - 2.0 * dt * dt) / (2.0 * dt * dt) < 0.05);
}
