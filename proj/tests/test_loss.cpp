#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include "fbsde/loss.hpp"
#include "fbsde/mlmc.hpp"
#include "test_helpers.hpp"

using namespace fbsde;

namespace {

ProblemSpec default_bsb() {
  const double x0 = 1.0;
  return bsb_problem(1, 0.05, 0.4, 1.0, std::span<const double>(&x0, 1));
}

PathBundle linear_bundle(const ProblemSpec& lin, const Mlp& net, const IncrementSet& incs) {
  const TimeGrid grid = uniform_grid(lin.horizon, incs.steps());
  return generate_paths(lin, grid, incs, &net);
}

}  // namespace

TEST_CASE("manufactured linear problem has zero residuals") {
  const ProblemSpec lin = testing::linear_problem(0.4, -0.3, 1.2, 0.7, 1.0);
  const Mlp net = testing::linear_net(0.4, -0.3, 1.2);
  const BrownianLattice lat = sample_lattice(3, 4, 32, 1, 1.0);
  const IncrementSet incs = increments_at_level(lat, 4);
  const PathBundle bundle = linear_bundle(lin, net, incs);
  const LossBreakdown loss = pathwise_loss(bundle, lin, incs);
  for (double r : loss.per_step_residuals) CHECK(std::fabs(r) <= 1e-12);
  CHECK(loss.terminal_term <= 1e-20);
  CHECK(loss.total <= 1e-20);
}

TEST_CASE("loss total equals the sum of its parts") {
  const ProblemSpec bsb = default_bsb();
  MlpOptions mo;
  mo.hidden = {8};
  mo.init_seed = 3;
  const Mlp net = make_mlp(1, mo);
  const BrownianLattice lat = sample_lattice(9, 4, 16, 1, 1.0);
  const IncrementSet incs = increments_at_level(lat, 4);
  const TimeGrid grid = uniform_grid(1.0, 16);
  GenerateOptions gopt;
  gopt.exact_track = false;
  const PathBundle bundle = generate_paths(bsb, grid, incs, &net, gopt);

  LossOptions lopt;
  lopt.include_terminal_gradient = true;
  lopt.terminal_gradient_weight = 0.5;
  const LossBreakdown loss = pathwise_loss(bundle, bsb, incs, lopt);
  double sum = 0.0;
  for (double r : loss.per_step_residuals) sum += r * r;
  sum += loss.terminal_term + 0.5 * *loss.terminal_gradient_term;
  CHECK(std::fabs(loss.total - sum) <= 1e-12 * (1.0 + std::fabs(sum)));
  CHECK(loss.total >= 0.0);
}

TEST_CASE("loss is invariant under path permutation") {
  const ProblemSpec bsb = default_bsb();
  MlpOptions mo;
  mo.hidden = {6};
  mo.init_seed = 5;
  const Mlp net = make_mlp(1, mo);
  const BrownianLattice lat = sample_lattice(11, 3, 8, 1, 1.0);
  IncrementSet incs = increments_at_level(lat, 3);
  const TimeGrid grid = uniform_grid(1.0, 8);
  GenerateOptions gopt;
  gopt.exact_track = false;

  const PathBundle b1 = generate_paths(bsb, grid, incs, &net, gopt);
  const double t1 = pathwise_loss(b1, bsb, incs).total;

  // reverse the path order
  IncrementSet rev = incs;
  for (std::size_t m = 0; m < incs.paths; ++m)
    for (std::size_t n = 0; n < incs.steps(); ++n) *rev.at(m, n) = *incs.at(incs.paths - 1 - m, n);
  const PathBundle b2 = generate_paths(bsb, grid, rev, &net, gopt);
  const double t2 = pathwise_loss(b2, bsb, rev).total;
  CHECK(t1 == doctest::Approx(t2).epsilon(1e-12));
}

TEST_CASE("terminal term vanishes when Y_N matches g and counts otherwise") {
  const ProblemSpec lin = testing::linear_problem(0.0, 0.0, 1.0, 0.5, 1.0);
  // u(t,x) = x, g(x) = x: exact net -> terminal term 0 handled above.
  // direct arithmetic case: g(x)=x^2, X_N=1, Z_N=0 -> (0 - 2)^2 = 4
  const ProblemSpec bsb = default_bsb();
  PathBundle bundle;
  bundle.grid = uniform_grid(1.0, 1);
  bundle.paths = 1;
  bundle.dim = 1;
  bundle.surrogate.present = true;
  bundle.surrogate.x = {1.0, 1.0};
  bundle.surrogate.y = {0.0, 0.0};
  bundle.surrogate.z = {0.0, 0.0};
  CHECK(terminal_gradient_term(bundle, bsb) == 4.0);

  ProblemSpec no_grad = bsb;
  no_grad.terminal_grad = nullptr;
  CHECK_THROWS_AS(terminal_gradient_term(bundle, no_grad), std::invalid_argument);
}

TEST_CASE("terminal gradient term is invariant under path reordering") {
  const ProblemSpec bsb = default_bsb();
  PathBundle bundle;
  bundle.grid = uniform_grid(1.0, 1);
  bundle.paths = 3;
  bundle.dim = 1;
  bundle.surrogate.present = true;
  bundle.surrogate.x = {1.0, 0.5, 1.0, 2.0, 1.0, 1.5};
  bundle.surrogate.y = {0, 0, 0, 0, 0, 0};
  bundle.surrogate.z = {0.0, 0.3, 0.0, -0.2, 0.0, 0.9};
  const double a = terminal_gradient_term(bundle, bsb);
  std::swap(bundle.surrogate.x[1], bundle.surrogate.x[5]);
  std::swap(bundle.surrogate.z[1], bundle.surrogate.z[5]);
  CHECK(terminal_gradient_term(bundle, bsb) == doctest::Approx(a).epsilon(1e-15));
}

TEST_CASE("higher-order loss equals pathwise loss when the hessian vanishes") {
  const ProblemSpec lin = testing::linear_problem(0.2, 0.4, -0.9, 0.6, 1.0);
  const Mlp net = testing::linear_net(0.15, 0.3, -0.8);  // deliberately not equal to u
  const BrownianLattice lat = sample_lattice(21, 3, 16, 1, 1.0);
  const IncrementSet incs = increments_at_level(lat, 3);
  const PathBundle bundle = linear_bundle(lin, net, incs);
  const LossBreakdown pw = pathwise_loss(bundle, lin, incs);
  const LossBreakdown ho = higher_order_loss(bundle, lin, incs, net);
  CHECK(pw.total == doctest::Approx(ho.total).epsilon(1e-14));
  for (std::size_t i = 0; i < pw.per_step_residuals.size(); ++i)
    CHECK(pw.per_step_residuals[i] == doctest::Approx(ho.per_step_residuals[i]).epsilon(1e-13));
}

TEST_CASE("higher-order correction vanishes when dW^2 = dt") {
  const ProblemSpec bsb = default_bsb();
  MlpOptions mo;
  mo.hidden = {6};
  mo.init_seed = 2;
  const Mlp net = make_mlp(1, mo);
  const TimeGrid grid = uniform_grid(1.0, 4);
  IncrementSet incs;
  incs.level = 2;
  incs.paths = 2;
  incs.dim = 1;
  incs.horizon = 1.0;
  incs.n_steps = 4;
  const double dt = 0.25;
  incs.dw.assign(8, std::sqrt(dt));  // dW^2 == dt on every step
  GenerateOptions gopt;
  gopt.exact_track = false;
  const PathBundle bundle = generate_paths(bsb, grid, incs, &net, gopt);
  const LossBreakdown pw = pathwise_loss(bundle, bsb, incs);
  const LossBreakdown ho = higher_order_loss(bundle, bsb, incs, net);
  CHECK(pw.total == doctest::Approx(ho.total).epsilon(1e-14));
}

TEST_CASE("higher-order loss rejects relu activations and d > 1") {
  const ProblemSpec bsb = default_bsb();
  MlpOptions mo;
  mo.hidden = {4};
  mo.activation = Activation::ReLU;
  const Mlp relu_net = make_mlp(1, mo);
  const BrownianLattice lat = sample_lattice(5, 2, 4, 1, 1.0);
  const IncrementSet incs = increments_at_level(lat, 2);
  const TimeGrid grid = uniform_grid(1.0, 4);
  GenerateOptions gopt;
  gopt.exact_track = false;
  const PathBundle bundle = generate_paths(bsb, grid, incs, &relu_net, gopt);
  CHECK_THROWS_AS(higher_order_loss(bundle, bsb, incs, relu_net), std::invalid_argument);
}

TEST_CASE("remainder decomposition identities") {
  const ProblemSpec lin = testing::linear_problem(0.3, 0.5, -1.1, 0.8, 1.0);
  SUBCASE("linear surrogate matching u zeroes every explicit term") {
    const Mlp net = testing::linear_net(0.3, 0.5, -1.1);
    const double x = 0.7;
    const double y = lin.u(0.25, std::span<const double>(&x, 1));
    const double z = 0.8 * -1.1;
    const auto rep = remainder_decomposition(lin, net, 0.25, x, y, z, 0.125, 0.21);
    CHECK(std::fabs(rep.r1) <= 1e-14);
    CHECK(std::fabs(rep.r2) <= 1e-14);
    CHECK(std::fabs(rep.r3) <= 1e-14);
    CHECK(rep.r4 == 0.0);
    CHECK(rep.r5 == 0.0);
    CHECK(rep.r6 == 0.0);
    CHECK(std::fabs(rep.r_tail) <= 1e-13);
    CHECK(std::fabs(rep.residual) <= 1e-13);
  }
  SUBCASE("shifting Y by c moves exactly r1") {
    MlpOptions mo;
    mo.hidden = {6};
    mo.init_seed = 8;
    const Mlp net = make_mlp(1, mo);
    const double x = 0.7, y = 0.9, z = -0.2, dt = 0.125, dw = 0.3;
    const auto base = remainder_decomposition(lin, net, 0.25, x, y, z, dt, dw);
    const double c = 0.77;
    const auto shifted = remainder_decomposition(lin, net, 0.25, x, y + c, z, dt, dw);
    CHECK(shifted.r1 == doctest::Approx(base.r1 + c).epsilon(1e-13));
    CHECK(shifted.r2 == base.r2);
    CHECK(shifted.r4 == base.r4);
    CHECK(shifted.r5 == base.r5);
    CHECK(shifted.r6 == base.r6);
  }
  SUBCASE("terms sum to an independently recomputed residual") {
    MlpOptions mo;
    mo.hidden = {7, 5};
    mo.init_seed = 15;
    const Mlp net = make_mlp(1, mo);
    MlpWorkspace ws;
    const double x = 1.1, y = 0.4, z = 0.6, dt = 0.2, dw = -0.35, t = 0.3;
    const auto rep = remainder_decomposition(lin, net, t, x, y, z, dt, dw);
    // independent recomputation of the Euler-Maruyama composition
    std::span<const double> xv(&x, 1), zv(&z, 1);
    const double phi = lin.driver(t, xv, y, zv);
    const double x_next = x + 0.8 * dw;  // a = 0, b = 0.8
    const double y_em = y + phi * dt + z * dw;
    const double expect = y_em - forward(net, t + dt, std::span<const double>(&x_next, 1), ws);
    CHECK(rep.residual == doctest::Approx(expect).epsilon(1e-14));
    CHECK(rep.r1 + rep.r2 + rep.r3 + rep.r4 + rep.r5 + rep.r6 + rep.r_tail ==
          doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("loss scaling scan shows the table-one separation") {
  const ProblemSpec bsb = default_bsb();
  const int levels[] = {2, 3, 4, 5, 6};
  const auto rows = loss_scaling_scan(bsb, levels, 2048, 99);
  REQUIRE(rows.size() == 10);

  std::vector<int> ls;
  std::vector<double> pw_abs, ho_abs;
  for (const auto& row : rows) {
    if (row.variant == "pathwise") {
      ls.push_back(row.level);
      pw_abs.push_back(row.mean_abs);
    } else {
      ho_abs.push_back(row.mean_abs);
    }
  }
  const FitResult fpw = convergence_fit(ls, pw_abs);
  const FitResult fho = convergence_fit(ls, ho_abs);
  // slopes in dt are the negated per-level slopes
  CHECK(-fpw.slope == doctest::Approx(1.0).epsilon(0.3));
  CHECK(-fho.slope == doctest::Approx(1.5).epsilon(0.3));
  // absolute means grow monotonically with dt on the fitted trend
  CHECK(fpw.slope < 0.0);
  CHECK(fho.slope < 0.0);

  CHECK_THROWS_AS(loss_scaling_scan(bsb, levels, 1, 99), std::invalid_argument);
  const std::vector<int> none;
  CHECK_THROWS_AS(loss_scaling_scan(bsb, none, 128, 99), std::invalid_argument);
}
