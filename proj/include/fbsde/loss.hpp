#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fbsde/brownian.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/simulate.hpp"

namespace fbsde {

enum class LossVariant { Pathwise, PathwisePlusTerminalGrad, HigherOrder };

struct LossOptions {
  Track track = Track::Surrogate;
  bool include_terminal_gradient = false;
  double terminal_gradient_weight = 1.0;
  int threads = 1;
};

/// Loss pieces: total = sum of squared per-step residuals + terminal term
/// (+ the weighted terminal-gradient term when enabled).
struct LossBreakdown {
  std::vector<double> per_step_residuals;  // M*N raw residuals, path-major
  double terminal_term = 0.0;
  std::optional<double> terminal_gradient_term;
  double total = 0.0;
};

// Path-wise loss: per step |Y_{n+1} - Y_n - phi_n dt - Z_n . dW_n|^2 summed
// over paths and steps, plus |Y_N - g(X_N)|^2 per path. phi_n is evaluated
// at step-n states.
LossBreakdown pathwise_loss(const PathBundle& bundle, const ProblemSpec& spec,
                            const IncrementSet& incs, const LossOptions& opts = {});

// sum_m ||Z_N - grad g(X_N)||^2.
double terminal_gradient_term(const PathBundle& bundle, const ProblemSpec& spec,
                              Track track = Track::Surrogate);

using HessianFn =
    std::function<void(double t, std::span<const double> x, std::span<double> hess)>;

// One-dimensional higher-order loss: the per-step residual additionally
// subtracts 0.5 b^2 H_n (dW^2 - dt), H_n being the spatial second derivative
// of the solution surface at the step-n state.
LossBreakdown higher_order_loss(const PathBundle& bundle, const ProblemSpec& spec,
                                const IncrementSet& incs, const HessianFn& hessian,
                                const LossOptions& opts = {});
LossBreakdown higher_order_loss(const PathBundle& bundle, const ProblemSpec& spec,
                                const IncrementSet& incs, const Mlp& net,
                                const LossOptions& opts = {});

/// One-step difference between the Euler-Maruyama composition of Y and the
/// surrogate at the stepped state, split into its explicit leading terms.
/// The tail lumps the mean-value-point remainders, defined by subtraction so
/// r1 + ... + r6 + r_tail = residual holds exactly.
struct RemainderReport {
  double r1 = 0, r2 = 0, r3 = 0, r4 = 0, r5 = 0, r6 = 0;
  double r_tail = 0;
  double residual = 0;
};

RemainderReport remainder_decomposition(const ProblemSpec& spec, const Mlp& net, double t_n,
                                        double x, double y, double z, double dt, double dw);

struct LossScaleRow {
  int level = 0;
  double dt = 0.0;
  std::string variant;  // "pathwise" or "higher_order"
  double mean_signed = 0.0, se_signed = 0.0;
  double mean_abs = 0.0, se_abs = 0.0;
  std::size_t count = 0;
};

// Monte Carlo scan of the one-step residual statistics per level with the
// surrogate replaced by the exact solution, isolating discretisation
// effects. Two rows per level, one per loss variant.
std::vector<LossScaleRow> loss_scaling_scan(const ProblemSpec& spec, std::span<const int> levels,
                                            std::size_t paths, std::uint64_t seed, int threads = 1);

}  // namespace fbsde
