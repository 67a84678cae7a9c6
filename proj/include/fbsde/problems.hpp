#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fbsde/surrogate.hpp"

namespace fbsde {

/// FBSDE problem data. Throughout, z is the hidden process in the
/// convention Z = b^T grad u (the process that multiplies dW in the
/// backward equation); drift and driver receive it in that form.
/// Immutable after registration; all evaluations are pure.
struct ProblemSpec {
  std::string name;
  int dim = 1;
  double horizon = 1.0;
  std::vector<double> x0;

  std::function<void(double t, std::span<const double> x, double y, std::span<const double> z,
                     std::span<double> out)> drift;                                    // a -> R^d
  std::function<void(double t, std::span<const double> x, double y, std::span<double> out)>
      diffusion;                                                                       // b -> R^{d*d} row-major
  std::function<double(double t, std::span<const double> x, double y, std::span<const double> z)>
      driver;                                                                          // phi -> R
  std::function<double(std::span<const double> x)> terminal;                           // g
  std::function<void(std::span<const double> x, std::span<double> out)> terminal_grad; // optional

  // Driver partials; required by gradient-based training so the chain rule
  // through phi stays exact (no finite differences in the production path).
  std::function<double(double, std::span<const double>, double, std::span<const double>)> driver_dy;
  std::function<void(double, std::span<const double>, double, std::span<const double>, std::span<double>)>
      driver_dz;

  // Exact solution and derivatives (the oracle), all optional.
  std::function<double(double, std::span<const double>)> u;
  std::function<double(double, std::span<const double>)> u_t;
  std::function<void(double, std::span<const double>, std::span<double>)> grad_u;
  std::function<void(double, std::span<const double>, std::span<double>)> hess_u;  // d*d row-major

  // Exact forward state given the Brownian value at time t, when available.
  std::function<void(double t, std::span<const double> w, std::span<double> out)> exact_state;

  bool has_exact_solution() const { return static_cast<bool>(u); }
  bool has_exact_derivatives() const { return u && u_t && grad_u && hess_u; }
};

/// Terminal condition g with optional analytic derivatives.
struct TerminalFunction {
  std::function<double(std::span<const double>)> g;
  std::function<void(std::span<const double>, std::span<double>)> grad;
  std::function<void(std::span<const double>, std::span<double>)> hess;  // d*d row-major
};

// g(x) = sum_i x_i^2 with analytic derivatives.
TerminalFunction square_terminal();

// Probe-evaluates all callables for shape consistency and, when an exact
// solution is present, checks u(T, x) = g(x) at random states.
void validate_problem(const ProblemSpec& spec, std::uint64_t seed = 0x5EED);

// Constant-volatility Black-Scholes-Barenblatt instance: a = 0,
// b = sigma diag(x), exact solution exp((r + sigma^2)(T - t)) g(x), and a
// driftless-GBM exact forward state.
ProblemSpec bsb_problem(int dim, double r, double sigma, double horizon,
                        std::span<const double> x0, const TerminalFunction& g = square_terminal());

// Componentwise exact driftless GBM state X0_i exp(-sigma^2 t / 2 + sigma W_i).
void gbm_exact_state(std::span<const double> x0, double sigma, double t,
                     std::span<const double> w, std::span<double> out);

// Feynman-Kac operator residual L u - phi from the supplied exact
// derivatives; zero (to rounding) for a true solution.
double pde_residual(const ProblemSpec& spec, double t, std::span<const double> x);

struct OperatorValues {
  double l0u = 0.0;  // du/dt + a du/dx + b^2/2 d2u/dx2
  double l1u = 0.0;  // b du/dx
};

// The one-dimensional Ito-Taylor operators applied to the exact solution.
OperatorValues l0_l1_apply(const ProblemSpec& spec, double t, double x);

// |u - u_hat| at one point.
double surrogate_residual(const ProblemSpec& spec, const Mlp& net, double t, std::span<const double> x);

struct EvalCloud {
  std::size_t count = 10000;
  std::vector<double> x_lo, x_hi;  // box per component
};

// Box covering the bulk of the default problem's visited states.
EvalCloud default_eval_cloud(const ProblemSpec& spec, double sigma_spread = 2.0);

// Operational epsilon_theta estimate: max |u - u_hat| over a quasi-uniform
// cloud of (t, x) points in the box.
double surrogate_sup_error(const ProblemSpec& spec, const Mlp& net, const EvalCloud& cloud);

}  // namespace fbsde
