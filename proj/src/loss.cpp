#include "fbsde/loss.hpp"

#include <cmath>
#include <stdexcept>

#include "fbsde/parallel.hpp"

namespace fbsde {

namespace {

// Residuals for one path, with an optional Hessian correction source.
void path_residuals(const PathBundle& bundle, const ProblemSpec& spec, const IncrementSet& incs,
                    Track track, std::size_t m, const HessianFn* hessian, double* out) {
  const int d = bundle.dim;
  const std::size_t N = bundle.grid.steps();
  std::vector<double> b(static_cast<std::size_t>(d) * d), h(static_cast<std::size_t>(d) * d);
  for (std::size_t n = 0; n < N; ++n) {
    const double t = bundle.grid.points[n];
    const double dt = bundle.grid.dt(n);
    std::span<const double> x(bundle.x_at(track, m, n), d);
    std::span<const double> z(bundle.z_at(track, m, n), d);
    const double* dw = incs.at(m, n);
    const double y = bundle.y_at(track, m, n);
    double r = bundle.y_at(track, m, n + 1) - y - spec.driver(t, x, y, z) * dt;
    for (int i = 0; i < d; ++i) r -= z[i] * dw[i];
    if (hessian != nullptr) {
      spec.diffusion(t, x, y, b);
      (*hessian)(t, x, h);
      r -= 0.5 * b[0] * b[0] * h[0] * (dw[0] * dw[0] - dt);
    }
    out[n] = r;
  }
}

LossBreakdown assemble(const PathBundle& bundle, const ProblemSpec& spec, const IncrementSet& incs,
                       const HessianFn* hessian, const LossOptions& opts) {
  if (!bundle.track(opts.track).present)
    throw std::invalid_argument("loss: requested track is not present in the bundle");
  if (incs.steps() != bundle.grid.steps() || incs.paths != bundle.paths)
    throw std::invalid_argument("loss: increments do not match the bundle");
  if (hessian != nullptr && bundle.dim != 1)
    throw std::invalid_argument("loss: the higher-order variant is one-dimensional only");

  const std::size_t M = bundle.paths;
  const std::size_t N = bundle.grid.steps();
  LossBreakdown out;
  out.per_step_residuals.resize(M * N);

  parallel_for_blocks(M, opts.threads, 64, [&](std::size_t, std::size_t lo, std::size_t hi) {
    for (std::size_t m = lo; m < hi; ++m)
      path_residuals(bundle, spec, incs, opts.track, m, hessian, &out.per_step_residuals[m * N]);
  });

  double step_sq = 0.0;
  for (double r : out.per_step_residuals) step_sq += r * r;

  double terminal = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    std::span<const double> xN(bundle.x_at(opts.track, m, N), bundle.dim);
    const double diff = bundle.y_at(opts.track, m, N) - spec.terminal(xN);
    terminal += diff * diff;
  }
  out.terminal_term = terminal;
  out.total = step_sq + terminal;
  if (opts.include_terminal_gradient) {
    const double tg = terminal_gradient_term(bundle, spec, opts.track);
    out.terminal_gradient_term = tg;
    out.total += opts.terminal_gradient_weight * tg;
  }
  return out;
}

}  // namespace

LossBreakdown pathwise_loss(const PathBundle& bundle, const ProblemSpec& spec,
                            const IncrementSet& incs, const LossOptions& opts) {
  return assemble(bundle, spec, incs, nullptr, opts);
}

double terminal_gradient_term(const PathBundle& bundle, const ProblemSpec& spec, Track track) {
  if (!spec.terminal_grad)
    throw std::invalid_argument("loss: terminal gradient term requested but grad g is unavailable");
  if (!bundle.track(track).present)
    throw std::invalid_argument("loss: requested track is not present in the bundle");
  const int d = bundle.dim;
  const std::size_t N = bundle.grid.steps();
  std::vector<double> gg(d);
  double total = 0.0;
  for (std::size_t m = 0; m < bundle.paths; ++m) {
    std::span<const double> xN(bundle.x_at(track, m, N), d);
    spec.terminal_grad(xN, gg);
    const double* zN = bundle.z_at(track, m, N);
    for (int i = 0; i < d; ++i) {
      const double diff = zN[i] - gg[i];
      total += diff * diff;
    }
  }
  return total;
}

LossBreakdown higher_order_loss(const PathBundle& bundle, const ProblemSpec& spec,
                                const IncrementSet& incs, const HessianFn& hessian,
                                const LossOptions& opts) {
  if (!hessian) throw std::invalid_argument("loss: higher_order_loss needs a Hessian source");
  return assemble(bundle, spec, incs, &hessian, opts);
}

LossBreakdown higher_order_loss(const PathBundle& bundle, const ProblemSpec& spec,
                                const IncrementSet& incs, const Mlp& net, const LossOptions& opts) {
  if (net.activation == Activation::ReLU)
    throw std::invalid_argument("loss: higher_order_loss needs a twice-differentiable activation");
  HessianFn h = [&net](double t, std::span<const double> x, std::span<double> hess) {
    thread_local MlpWorkspace ws;
    input_hessian(net, t, x, ws, hess);
  };
  return assemble(bundle, spec, incs, &h, opts);
}

RemainderReport remainder_decomposition(const ProblemSpec& spec, const Mlp& net, double t_n,
                                        double x, double y, double z, double dt, double dw) {
  if (spec.dim != 1) throw std::invalid_argument("loss: remainder_decomposition is one-dimensional only");

  MlpWorkspace ws;
  ws.resize_for(net);
  std::span<const double> xv(&x, 1);
  const double uhat = forward_cached(net, t_n, xv, ws.cache.data());
  double du_dt, du_dx, d2u_dx2;
  input_gradient_cached(net, ws.cache.data(), ws, du_dt, std::span<double>(&du_dx, 1));
  input_hessian(net, t_n, xv, ws, std::span<double>(&d2u_dx2, 1));

  double a, b;
  std::span<const double> zv(&z, 1);
  spec.drift(t_n, xv, y, zv, std::span<double>(&a, 1));
  spec.diffusion(t_n, xv, y, std::span<double>(&b, 1));
  const double phi = spec.driver(t_n, xv, y, zv);

  RemainderReport rep;
  rep.r1 = y - uhat;
  rep.r2 = (z - b * du_dx) * dw;
  rep.r3 = (phi - du_dt - a * du_dx - 0.5 * b * b * d2u_dx2) * dt;
  rep.r4 = -0.5 * b * b * d2u_dx2 * (dw * dw - dt);
  rep.r5 = -0.5 * a * a * d2u_dx2 * dt * dt;
  rep.r6 = -a * b * d2u_dx2 * dw * dt;

  const double x_next = x + a * dt + b * dw;
  const double y_em = y + phi * dt + z * dw;
  rep.residual = y_em - forward_cached(net, t_n + dt, std::span<const double>(&x_next, 1), ws.cache.data());
  rep.r_tail = rep.residual - (rep.r1 + rep.r2 + rep.r3 + rep.r4 + rep.r5 + rep.r6);
  return rep;
}

std::vector<LossScaleRow> loss_scaling_scan(const ProblemSpec& spec, std::span<const int> levels,
                                            std::size_t paths, std::uint64_t seed, int threads) {
  if (spec.dim != 1) throw std::invalid_argument("loss: scaling scan is one-dimensional only");
  if (!spec.has_exact_derivatives())
    throw std::invalid_argument("loss: scaling scan needs the exact solution and derivatives");
  if (paths < 2) throw std::invalid_argument("loss: too few paths for standard errors");
  if (levels.empty()) throw std::invalid_argument("loss: no levels requested");

  int max_level = 0;
  for (int l : levels) {
    if (l < 0) throw std::invalid_argument("loss: negative level");
    max_level = std::max(max_level, l);
  }
  const BrownianLattice lattice = sample_lattice(seed, max_level, paths, 1, spec.horizon);

  HessianFn exact_hess = [&spec](double t, std::span<const double> x, std::span<double> h) {
    spec.hess_u(t, x, h);
  };

  std::vector<LossScaleRow> rows;
  for (int l : levels) {
    const TimeGrid grid = uniform_grid(spec.horizon, std::size_t{1} << l);
    const IncrementSet incs = increments_at_level(lattice, l);
    GenerateOptions gopt;
    gopt.surrogate_track = false;
    gopt.threads = threads;
    const PathBundle bundle = generate_paths(spec, grid, incs, nullptr, gopt);

    LossOptions lopt;
    lopt.track = Track::ExactU;
    lopt.threads = threads;
    const LossBreakdown pw = pathwise_loss(bundle, spec, incs, lopt);
    const LossBreakdown ho = higher_order_loss(bundle, spec, incs, exact_hess, lopt);

    for (int variant = 0; variant < 2; ++variant) {
      const auto& res = variant == 0 ? pw.per_step_residuals : ho.per_step_residuals;
      double s = 0.0, s2 = 0.0, sa = 0.0, sa2 = 0.0;
      for (double r : res) {
        s += r;
        s2 += r * r;
        sa += std::fabs(r);
        sa2 += r * r;
      }
      const double n = static_cast<double>(res.size());
      LossScaleRow row;
      row.level = l;
      row.dt = spec.horizon / static_cast<double>(std::size_t{1} << l);
      row.variant = variant == 0 ? "pathwise" : "higher_order";
      row.count = res.size();
      row.mean_signed = s / n;
      row.mean_abs = sa / n;
      const double var_signed = std::max(0.0, (s2 - s * s / n) / (n - 1.0));
      const double var_abs = std::max(0.0, (sa2 - sa * sa / n) / (n - 1.0));
      row.se_signed = std::sqrt(var_signed / n);
      row.se_abs = std::sqrt(var_abs / n);
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace fbsde
