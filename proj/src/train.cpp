#include "fbsde/train.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

#include "fbsde/parallel.hpp"
#include "fbsde/rng.hpp"

namespace fbsde {

namespace {

// Per-path scratch for the fused loss/gradient sweep.
struct PathScratch {
  std::vector<double> x;       // (N+1)*d states
  std::vector<double> y;       // (N+1)
  std::vector<double> z;       // (N+1)*d
  std::vector<double> bmat;    // (N+1)*d*d diffusion at each node
  std::vector<double> caches;  // (N+1)*cache_size forward caches
  std::vector<double> res;     // N residuals
  std::vector<double> phi_y;   // N
  std::vector<double> phi_z;   // N*d
  std::vector<double> a, grad, dldz, gadj, ggrad;
  MlpWorkspace ws;

  void resize(const Mlp& net, const ProblemSpec& spec, std::size_t N) {
    const std::size_t d = static_cast<std::size_t>(spec.dim);
    x.resize((N + 1) * d);
    y.resize(N + 1);
    z.resize((N + 1) * d);
    bmat.resize((N + 1) * d * d);
    caches.resize((N + 1) * forward_cache_size(net));
    res.resize(N);
    phi_y.resize(N);
    phi_z.resize(N * d);
    a.resize(d);
    grad.resize(d);
    dldz.resize(d);
    gadj.resize(d + 1);
    ggrad.resize(d);
    ws.resize_for(net);
  }
};

// Simulates the surrogate track of one path keeping forward caches, then
// backpropagates the loss adjoints through every evaluation point.
double fused_path_loss_grad(const ProblemSpec& spec, const Mlp& net, const TimeGrid& grid,
                            const IncrementSet& incs, std::size_t m, bool terminal_gradient,
                            double tg_weight, PathScratch& s, std::span<double> grad_out) {
  const int d = spec.dim;
  const std::size_t N = grid.steps();
  const std::size_t csz = forward_cache_size(net);

  // forward simulation, Y and Z read from the surrogate at every node
  for (int i = 0; i < d; ++i) s.x[i] = spec.x0[i];
  for (std::size_t n = 0; n <= N; ++n) {
    const double t = grid.points[n];
    double* xn = &s.x[n * d];
    double* cache = &s.caches[n * csz];
    s.y[n] = forward_cached(net, t, std::span<const double>(xn, d), cache);
    double du_dt;
    input_gradient_cached(net, cache, s.ws, du_dt, s.grad);
    double* b = &s.bmat[n * d * d];
    spec.diffusion(t, std::span<const double>(xn, d), s.y[n], std::span<double>(b, d * d));
    double* zn = &s.z[n * d];
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += b[static_cast<std::size_t>(j) * d + i] * s.grad[j];
      zn[i] = acc;
    }
    bool ok = std::isfinite(s.y[n]);
    for (int i = 0; ok && i < d; ++i) ok = std::isfinite(xn[i]) && std::isfinite(zn[i]);
    if (!ok)
      throw std::runtime_error("train: state exploded at path " + std::to_string(m) + ", step " +
                               std::to_string(n));
    if (n == N) break;

    const double dt = grid.dt(n);
    const double* dw = incs.at(m, n);
    spec.drift(t, std::span<const double>(xn, d), s.y[n], std::span<const double>(zn, d), s.a);
    double* xn1 = &s.x[(n + 1) * d];
    for (int i = 0; i < d; ++i) {
      double acc = xn[i] + s.a[i] * dt;
      const double* brow = &b[static_cast<std::size_t>(i) * d];
      for (int j = 0; j < d; ++j) acc += brow[j] * dw[j];
      xn1[i] = acc;
    }
  }

  // residuals and driver partials
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const double t = grid.points[n];
    const double dt = grid.dt(n);
    const double* dw = incs.at(m, n);
    std::span<const double> xn(&s.x[n * d], d);
    std::span<const double> zn(&s.z[n * d], d);
    double r = s.y[n + 1] - s.y[n] - spec.driver(t, xn, s.y[n], zn) * dt;
    for (int i = 0; i < d; ++i) r -= zn[i] * dw[i];
    s.res[n] = r;
    loss += r * r;
    s.phi_y[n] = spec.driver_dy(t, xn, s.y[n], zn);
    spec.driver_dz(t, xn, s.y[n], zn, std::span<double>(&s.phi_z[n * d], d));
  }
  std::span<const double> xN(&s.x[N * d], d);
  const double term = s.y[N] - spec.terminal(xN);
  loss += term * term;
  double tg_term = 0.0;
  if (terminal_gradient) {
    spec.terminal_grad(xN, s.ggrad);
    for (int i = 0; i < d; ++i) {
      const double diff = s.z[N * d + i] - s.ggrad[i];
      tg_term += diff * diff;
    }
    loss += tg_weight * tg_term;
  }

  // adjoints per node, pushed through the network
  for (std::size_t n = 0; n <= N; ++n) {
    const double* b = &s.bmat[n * d * d];
    double val_adj = 0.0;
    for (int i = 0; i < d; ++i) s.dldz[i] = 0.0;
    if (n < N) {
      const double dt = grid.dt(n);
      const double* dw = incs.at(m, n);
      val_adj += 2.0 * s.res[n] * (-1.0 - s.phi_y[n] * dt);
      for (int i = 0; i < d; ++i) s.dldz[i] += 2.0 * s.res[n] * (-s.phi_z[n * d + i] * dt - dw[i]);
    }
    if (n > 0) val_adj += 2.0 * s.res[n - 1];
    if (n == N) {
      val_adj += 2.0 * term;
      if (terminal_gradient) {
        for (int i = 0; i < d; ++i)
          s.dldz[i] += 2.0 * tg_weight * (s.z[N * d + i] - s.ggrad[i]);
      }
    }
    s.gadj[0] = 0.0;  // the loss never reads du/dt
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int i = 0; i < d; ++i) acc += b[static_cast<std::size_t>(j) * d + i] * s.dldz[i];
      s.gadj[1 + j] = acc;
    }
    backprop_point(net, &s.caches[n * csz], val_adj, s.gadj, s.ws, grad_out);
  }
  return loss;
}

// Taped loss/gradient for one path of the higher-order variant (d = 1).
double taped_path_loss_grad_ho(const ProblemSpec& spec, const Mlp& net, const TimeGrid& grid,
                               const IncrementSet& incs, std::size_t m, std::span<double> grad_out) {
  const std::size_t N = grid.steps();

  // simulate states first (plain fast evaluation)
  std::vector<double> xs(N + 1), ys(N + 1), zs(N + 1), bs(N + 1);
  MlpWorkspace ws;
  ws.resize_for(net);
  xs[0] = spec.x0[0];
  for (std::size_t n = 0; n <= N; ++n) {
    const double t = grid.points[n];
    std::span<const double> xv(&xs[n], 1);
    ys[n] = forward_cached(net, t, xv, ws.cache.data());
    double du_dt, du_dx;
    input_gradient_cached(net, ws.cache.data(), ws, du_dt, std::span<double>(&du_dx, 1));
    spec.diffusion(t, xv, ys[n], std::span<double>(&bs[n], 1));
    zs[n] = bs[n] * du_dx;
    if (!std::isfinite(xs[n]) || !std::isfinite(ys[n]) || !std::isfinite(zs[n]))
      throw std::runtime_error("train: state exploded at path " + std::to_string(m) + ", step " +
                               std::to_string(n));
    if (n == N) break;
    double a;
    spec.drift(t, xv, ys[n], std::span<const double>(&zs[n], 1), std::span<double>(&a, 1));
    xs[n + 1] = xs[n] + a * grid.dt(n) + bs[n] * *incs.at(m, n);
  }

  // taped pass over the same states
  autodiff::Tape tape;
  TapeNet tn(tape, net);
  std::vector<autodiff::Var> yv(N + 1), zv(N + 1), hv(N);
  for (std::size_t n = 0; n <= N; ++n) {
    std::span<const double> xv(&xs[n], 1);
    if (n < N) {
      auto vgh = tn.value_grad_hess(grid.points[n], xv);
      yv[n] = vgh.value;
      zv[n] = vgh.grad_x[0] * bs[n];
      hv[n] = vgh.hess[0];
    } else {
      auto vg = tn.value_grad(grid.points[n], xv);
      yv[n] = vg.value;
      zv[n] = vg.grad_x[0] * bs[n];
    }
  }
  autodiff::Var loss = tape.leaf(0.0);
  for (std::size_t n = 0; n < N; ++n) {
    const double t = grid.points[n];
    const double dt = grid.dt(n);
    const double dw = *incs.at(m, n);
    std::span<const double> xv(&xs[n], 1);
    std::span<const double> zpt(&zs[n], 1);
    const double phi0 = spec.driver(t, xv, ys[n], zpt);
    const double py = spec.driver_dy(t, xv, ys[n], zpt);
    double pz;
    spec.driver_dz(t, xv, ys[n], zpt, std::span<double>(&pz, 1));
    // driver linearised at the evaluated point: value and gradient both exact
    autodiff::Var phi = tape.leaf(phi0 - py * ys[n] - pz * zs[n]) + py * yv[n] + pz * zv[n];
    autodiff::Var r = yv[n + 1] - yv[n] - phi * dt - zv[n] * dw -
                      0.5 * bs[n] * bs[n] * (dw * dw - dt) * hv[n];
    loss = loss + square(r);
  }
  std::span<const double> xN(&xs[N], 1);
  loss = loss + square(yv[N] - spec.terminal(xN));

  const std::vector<double> g = tn.parameter_adjoints(loss);
  for (std::size_t i = 0; i < g.size(); ++i) grad_out[i] += g[i];
  return loss.value();
}

}  // namespace

double loss_and_gradient(const ProblemSpec& spec, const Mlp& net, const TimeGrid& grid,
                         const IncrementSet& incs, LossVariant variant,
                         double terminal_grad_weight, int threads, std::span<double> grad_out) {
  if (grad_out.size() != net.param_count())
    throw std::invalid_argument("train: gradient buffer size mismatch");
  if (incs.steps() != grid.steps()) throw std::invalid_argument("train: increments do not match grid");
  if (incs.dim != spec.dim) throw std::invalid_argument("train: increment dimension mismatch");
  if (!spec.driver_dy || !spec.driver_dz)
    throw std::invalid_argument("train: gradient-based training needs analytic driver partials");
  const bool tg = variant == LossVariant::PathwisePlusTerminalGrad;
  if (tg && !spec.terminal_grad)
    throw std::invalid_argument("train: terminal-gradient loss needs grad g");
  if (variant == LossVariant::HigherOrder) {
    if (spec.dim != 1) throw std::invalid_argument("train: higher-order loss is one-dimensional only");
    if (net.activation == Activation::ReLU)
      throw std::invalid_argument("train: higher-order loss needs a twice-differentiable activation");
  }

  const std::size_t M = incs.paths;
  const std::size_t P = net.param_count();
  const std::size_t block = 64;
  const std::size_t n_blocks = (M + block - 1) / block;
  std::vector<std::vector<double>> grad_parts(n_blocks);
  std::vector<double> loss_parts(n_blocks, 0.0);

  parallel_for_blocks(M, threads, block, [&](std::size_t bi, std::size_t lo, std::size_t hi) {
    grad_parts[bi].assign(P, 0.0);
    double local = 0.0;
    if (variant == LossVariant::HigherOrder) {
      for (std::size_t m = lo; m < hi; ++m)
        local += taped_path_loss_grad_ho(spec, net, grid, incs, m, grad_parts[bi]);
    } else {
      PathScratch scratch;
      scratch.resize(net, spec, grid.steps());
      for (std::size_t m = lo; m < hi; ++m)
        local += fused_path_loss_grad(spec, net, grid, incs, m, tg, terminal_grad_weight, scratch,
                                      grad_parts[bi]);
    }
    loss_parts[bi] = local;
  });

  double loss = 0.0;
  for (double& g : grad_out) g = 0.0;
  for (std::size_t bi = 0; bi < n_blocks; ++bi) {
    loss += loss_parts[bi];
    for (std::size_t i = 0; i < P; ++i) grad_out[i] += grad_parts[bi][i];
  }
  return loss;
}

namespace {

TimeGrid grid_for(const TrainConfig& cfg, double horizon) {
  const std::size_t N = std::size_t{1} << cfg.level;
  return cfg.grid_kind == GridKind::Uniform ? uniform_grid(horizon, N) : chebyshev_grid(horizon, N);
}

IncrementSet draw_increments(const ProblemSpec& spec, const TrainConfig& cfg, const TimeGrid& grid,
                             std::uint64_t iteration_seed) {
  if (cfg.grid_kind == GridKind::Uniform) {
    const BrownianLattice lat =
        sample_lattice(iteration_seed, cfg.level, cfg.batch_paths, spec.dim, spec.horizon);
    return increments_at_level(lat, cfg.level);
  }
  return sample_increments_for_grid(iteration_seed, grid, cfg.batch_paths, spec.dim);
}

void run_iterations(const ProblemSpec& spec, Mlp& net, const TrainConfig& cfg, const TimeGrid& grid,
                    std::size_t iterations, int level_label,
                    const std::function<const IncrementSet&(std::size_t)>& incs_for_iter,
                    AdamState& adam, TrainReport& report) {
  std::vector<double> grad(net.param_count());
  const auto t0 = std::chrono::steady_clock::now();
  auto iter_start = t0;
  for (std::size_t it = 0; it < iterations; ++it) {
    if (cfg.record_timings) iter_start = std::chrono::steady_clock::now();
    const IncrementSet& incs = incs_for_iter(it);
    const double loss = loss_and_gradient(spec, net, grid, incs, cfg.variant,
                                          cfg.terminal_grad_weight, cfg.threads, grad);
    if (!std::isfinite(loss)) throw std::runtime_error("train: non-finite loss, aborting");
    if (!report.loss_history.empty()) {
      const double first = report.loss_history.front();
      if (loss > 1e6 * std::max(first, 1e-300))
        throw std::runtime_error("train: loss diverged beyond 1e6x its initial value");
    }
    report.loss_history.push_back(loss);
    report.level_of_iteration.push_back(level_label);
    adam_step(adam, net.params, grad);
    if (cfg.record_timings) {
      const auto iter_end = std::chrono::steady_clock::now();
      report.wall_ms_per_iteration.push_back(
          std::chrono::duration<double, std::milli>(iter_end - iter_start).count());
    } else {
      report.wall_ms_per_iteration.push_back(0.0);
    }
    const std::size_t done = report.loss_history.size();
    if (cfg.snapshot_hook)
      for (std::size_t s : cfg.snapshot_at)
        if (s == done) cfg.snapshot_hook(done, net);
  }
  const auto t1 = std::chrono::steady_clock::now();
  report.wall_ms_per_level.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
}

}  // namespace

TrainReport train_single_level(const ProblemSpec& spec, Mlp& net, const TrainConfig& cfg) {
  if (cfg.batch_paths < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (net.state_dim() != spec.dim) throw std::invalid_argument("train: network/problem dimension mismatch");

  TrainReport report;
  if (spec.has_exact_solution())
    report.eps_hat_initial = surrogate_sup_error(spec, net, default_eval_cloud(spec));

  const TimeGrid grid = grid_for(cfg, spec.horizon);
  IncrementSet fixed;
  if (!cfg.resample_paths) fixed = draw_increments(spec, cfg, grid, rng::derive_seed(cfg.seed, 0));
  IncrementSet scratch;
  auto provider = [&](std::size_t it) -> const IncrementSet& {
    if (!cfg.resample_paths) return fixed;
    scratch = draw_increments(spec, cfg, grid, rng::derive_seed(cfg.seed, it));
    return scratch;
  };

  AdamState adam = make_adam(net.param_count(), cfg.adam);
  run_iterations(spec, net, cfg, grid, cfg.iterations, cfg.level, provider, adam, report);

  if (spec.has_exact_solution())
    report.eps_hat_final = surrogate_sup_error(spec, net, default_eval_cloud(spec));
  return report;
}

TrainReport train_multilevel_inspired(const ProblemSpec& spec, Mlp& net, const TrainConfig& cfg) {
  if (cfg.grid_kind != GridKind::Uniform)
    throw std::invalid_argument("train: the multilevel schedule requires dyadic uniform grids");
  const int L = cfg.level;
  if (cfg.iterations < static_cast<std::size_t>(L) + 1)
    throw std::invalid_argument("train: need at least L+1 iterations for L+1 levels");
  if (net.state_dim() != spec.dim) throw std::invalid_argument("train: network/problem dimension mismatch");

  TrainReport report;
  if (spec.has_exact_solution())
    report.eps_hat_initial = surrogate_sup_error(spec, net, default_eval_cloud(spec));

  // One lattice for the whole run; every level aggregates the same Gaussians.
  const BrownianLattice lattice =
      sample_lattice(rng::derive_seed(cfg.seed, 0), L, cfg.batch_paths, spec.dim, spec.horizon);

  const std::size_t per_level = cfg.iterations / static_cast<std::size_t>(L + 1);
  AdamState adam = make_adam(net.param_count(), cfg.adam);
  for (int l = 0; l <= L; ++l) {
    const TimeGrid grid = uniform_grid(spec.horizon, std::size_t{1} << l);
    const IncrementSet incs = increments_at_level(lattice, l);
    std::size_t iters = per_level;
    if (l == L) iters += cfg.iterations - per_level * static_cast<std::size_t>(L + 1);
    auto provider = [&](std::size_t) -> const IncrementSet& { return incs; };
    run_iterations(spec, net, cfg, grid, iters, l, provider, adam, report);
  }

  if (spec.has_exact_solution())
    report.eps_hat_final = surrogate_sup_error(spec, net, default_eval_cloud(spec));
  return report;
}

TwoLevelResult train_two_level_telescoping(const ProblemSpec& spec, const Mlp& prior,
                                           const TrainConfig& coarse_cfg,
                                           const TrainConfig& fine_cfg) {
  if (coarse_cfg.batch_paths != fine_cfg.batch_paths)
    throw std::invalid_argument("train: coupled trainings need a common batch size");
  if (coarse_cfg.seed != fine_cfg.seed)
    throw std::invalid_argument("train: coupled trainings need a common seed (one lattice)");
  if (coarse_cfg.grid_kind != GridKind::Uniform || fine_cfg.grid_kind != GridKind::Uniform)
    throw std::invalid_argument("train: coupled trainings require dyadic uniform grids");
  if (prior.state_dim() != spec.dim)
    throw std::invalid_argument("train: network/problem dimension mismatch");

  const int max_level = std::max(coarse_cfg.level, fine_cfg.level);

  // Increments for both runs come from one lattice per iteration, so the
  // coarse and fine batches stay coupled at every step of training.
  auto run = [&](const TrainConfig& cfg, Mlp& net) {
    TrainReport report;
    if (spec.has_exact_solution())
      report.eps_hat_initial = surrogate_sup_error(spec, net, default_eval_cloud(spec));
    const TimeGrid grid = uniform_grid(spec.horizon, std::size_t{1} << cfg.level);
    IncrementSet current;
    BrownianLattice fixed_lat;
    bool have_fixed = false;
    auto provider = [&](std::size_t it) -> const IncrementSet& {
      if (!cfg.resample_paths) {
        if (!have_fixed) {
          fixed_lat = sample_lattice(rng::derive_seed(cfg.seed, 0), max_level, cfg.batch_paths,
                                     spec.dim, spec.horizon);
          current = increments_at_level(fixed_lat, cfg.level);
          have_fixed = true;
        }
        return current;
      }
      const BrownianLattice lat = sample_lattice(rng::derive_seed(cfg.seed, it), max_level,
                                                 cfg.batch_paths, spec.dim, spec.horizon);
      current = increments_at_level(lat, cfg.level);
      return current;
    };
    AdamState adam = make_adam(net.param_count(), cfg.adam);
    run_iterations(spec, net, cfg, grid, cfg.iterations, cfg.level, provider, adam, report);
    if (spec.has_exact_solution())
      report.eps_hat_final = surrogate_sup_error(spec, net, default_eval_cloud(spec));
    return report;
  };

  TwoLevelResult out;
  out.theta_coarse = prior;
  out.theta_fine = prior;
  out.report_coarse = run(coarse_cfg, out.theta_coarse);
  out.report_fine = run(fine_cfg, out.theta_fine);
  out.param_difference.resize(prior.param_count());
  for (std::size_t i = 0; i < prior.param_count(); ++i)
    out.param_difference[i] = out.theta_fine.params[i] - out.theta_coarse.params[i];
  return out;
}

}  // namespace fbsde
