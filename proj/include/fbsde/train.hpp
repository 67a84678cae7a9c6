#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fbsde/brownian.hpp"
#include "fbsde/loss.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/surrogate.hpp"
#include "fbsde/timegrid.hpp"

namespace fbsde {

struct TrainConfig {
  std::size_t batch_paths = 256;  // M
  int level = 4;                  // single level, or the maximum level L for the multilevel run
  std::size_t iterations = 2000;  // K
  AdamOptions adam{3e-3, 0.9, 0.999, 1e-8};
  LossVariant variant = LossVariant::Pathwise;
  double terminal_grad_weight = 1.0;
  bool resample_paths = true;  // fresh Brownian batch per iteration
  std::uint64_t seed = 7;
  GridKind grid_kind = GridKind::Uniform;
  int threads = 1;
  bool record_timings = false;  // per-iteration wall clock (off: zeros, reproducible output)
  std::vector<std::size_t> snapshot_at;  // iteration counts after which snapshot_hook fires
  std::function<void(std::size_t, const Mlp&)> snapshot_hook;
};

struct TrainReport {
  std::vector<double> loss_history;        // one entry per iteration
  std::vector<int> level_of_iteration;     // matching segment labels
  std::vector<double> wall_ms_per_iteration;  // zeros unless record_timings
  std::vector<double> wall_ms_per_level;   // measured, not part of any reproducibility contract
  double eps_hat_initial = -1.0;           // sup-cloud |u - u_hat| when exact u is available
  double eps_hat_final = -1.0;
};

// Loss value and exact parameter gradient of one batch. The gradient treats
// the simulated forward states as fixed, which is the exact gradient
// whenever the forward process is decoupled (a and b free of y and z).
// Pathwise variants run a fused double-backprop sweep; the higher-order
// variant runs through the tape (one-dimensional problems only).
double loss_and_gradient(const ProblemSpec& spec, const Mlp& net, const TimeGrid& grid,
                         const IncrementSet& incs, LossVariant variant,
                         double terminal_grad_weight, int threads, std::span<double> grad_out);

// K Adam iterations on the selected loss at one discretisation level.
// resample_paths draws a fresh counter-seeded batch per iteration; otherwise
// the iteration-0 batch is reused unchanged.
TrainReport train_single_level(const ProblemSpec& spec, Mlp& net, const TrainConfig& cfg);

// The multilevel-inspired schedule: one lattice sampled once, then for each
// level l in {0..L} the coupled level-l increments drive K/(L+1) iterations,
// warm-starting from the previous level's parameters. Remainder iterations
// (when K is not divisible) go to the finest level.
TrainReport train_multilevel_inspired(const ProblemSpec& spec, Mlp& net, const TrainConfig& cfg);

struct TwoLevelResult {
  Mlp theta_coarse;
  Mlp theta_fine;
  std::vector<double> param_difference;  // theta_fine - theta_coarse
  TrainReport report_coarse;
  TrainReport report_fine;
};

// Two independent trainings from the shared prior on increments coupled
// through one lattice per iteration; the per-replica difference supports the
// telescoped estimator E(theta_c | prior) + E(theta_f - theta_c | prior).
TwoLevelResult train_two_level_telescoping(const ProblemSpec& spec, const Mlp& prior,
                                           const TrainConfig& coarse_cfg,
                                           const TrainConfig& fine_cfg);

}  // namespace fbsde
