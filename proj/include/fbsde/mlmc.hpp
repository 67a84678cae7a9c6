#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fbsde/brownian.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/simulate.hpp"

namespace fbsde {

enum class StrongErrorKind { L1Terminal, L2Terminal, SupOutsideL2, SupInsideL2, SupInsideLp };

// Strong-error statistics over paths x nodes matrices (path-major). The
// L2/Lp variants return the rooted value, so every variant carries the same
// convergence order as the L1 one.
double strong_error(std::span<const double> exact, std::span<const double> approx,
                    std::size_t paths, std::size_t nodes, StrongErrorKind kind, double p = 2.0);

using PayoffFn = std::function<double(const PathBundle&, Track, std::size_t)>;

// Terminal backward value Y_N, the default payoff all scans are built from.
PayoffFn terminal_y_payoff();

std::vector<double> payoff(const PathBundle& bundle, Track track, const PayoffFn& fn = terminal_y_payoff());

// How a per-path scalar is read off a node-wise difference:
//   Terminal -> signed difference at t = T;
//   SupAbs   -> signed difference at the node of largest magnitude, so the
//               mean of |value| is the sup-inside L1 strong error while
//               swapping the inputs still flips every sign.
enum class NodeSelection { Terminal, SupAbs };

enum class SourceKind {
  ExactPath,    // u evaluated on the exact forward state (needs exact_state)
  EmExact,      // u evaluated along the Euler-Maruyama path
  EmSurrogate,  // u_hat evaluated along its own Euler-Maruyama path
};

struct EvalSource {
  SourceKind kind = SourceKind::EmExact;
  int level = 0;
  const Mlp* net = nullptr;  // EmSurrogate only
};

/// Per-path signed differences of two coupled simulations; all samples of
/// one experiment share a single lattice, which is what enforces coupling.
struct DifferenceSample {
  std::string kind_label;
  int level_fine = 0;
  int level_coarse = 0;
  NodeSelection selection = NodeSelection::SupAbs;
  std::size_t cost_steps = 0;  // simulated steps per path
  std::vector<double> values;
};

DifferenceSample two_way_difference(const ProblemSpec& spec, const BrownianLattice& lattice,
                                    const EvalSource& fine, const EvalSource& coarse,
                                    NodeSelection selection = NodeSelection::SupAbs, int threads = 1);

// u_hat(theta') on its fine and coarse paths minus the same combination for
// theta; vanishes identically when theta' = theta or the levels coincide.
DifferenceSample four_way_difference(const ProblemSpec& spec, const BrownianLattice& lattice,
                                     int level_fine, int level_coarse, const Mlp& theta,
                                     const Mlp& theta_prime,
                                     NodeSelection selection = NodeSelection::SupAbs, int threads = 1);

struct LevelEstimate {
  int level = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double variance = 0.0;
};

struct MlmcResult {
  double estimate = 0.0;
  std::vector<LevelEstimate> levels;
};

// Telescoped estimator: sum over contiguous levels 0..L of the mean level
// difference, the level-0 entry being the plain payoff.
MlmcResult mlmc_estimate(std::span<const DifferenceSample> samples);

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Least squares of log2(error) against level.
FitResult convergence_fit(std::span<const int> levels, std::span<const double> errors);

struct VarianceScanRow {
  std::string kind;
  int level = 0;
  double dt = 0.0;
  std::size_t n_samples = 0;
  double l1_error = 0.0, l1_se = 0.0;
  double variance = 0.0, var_se = 0.0;
  std::size_t cost_steps = 0;
};

struct VarianceScanOptions {
  std::vector<int> levels{1, 2, 3, 4, 5, 6, 7, 8};
  std::size_t paths = 4096;
  std::uint64_t seed = 1;
  NodeSelection selection = NodeSelection::SupAbs;
  int threads = 1;
};

// The variance-structure experiment: every two-way and four-way difference
// kind per level, all sharing one lattice. Rows whose sources are missing
// (no exact solution, no checkpoint) are skipped with a warning.
std::vector<VarianceScanRow> variance_structure_scan(const ProblemSpec& spec, const Mlp* theta,
                                                     const Mlp* theta_prime,
                                                     const VarianceScanOptions& opts,
                                                     std::vector<std::string>* warnings = nullptr);

}  // namespace fbsde
