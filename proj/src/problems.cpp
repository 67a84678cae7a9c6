#include "fbsde/problems.hpp"

#include <cmath>
#include <stdexcept>

#include "fbsde/rng.hpp"

namespace fbsde {

TerminalFunction square_terminal() {
  TerminalFunction f;
  f.g = [](std::span<const double> x) {
    double s = 0.0;
    for (double xi : x) s += xi * xi;
    return s;
  };
  f.grad = [](std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 2.0 * x[i];
  };
  f.hess = [](std::span<const double> x, std::span<double> out) {
    const std::size_t d = x.size();
    for (std::size_t i = 0; i < d * d; ++i) out[i] = 0.0;
    for (std::size_t i = 0; i < d; ++i) out[i * d + i] = 2.0;
  };
  return f;
}

void validate_problem(const ProblemSpec& spec, std::uint64_t seed) {
  const int d = spec.dim;
  if (d < 1) throw std::invalid_argument("problem: dimension must be >= 1");
  if (!(spec.horizon > 0.0)) throw std::invalid_argument("problem: horizon must be positive");
  if (static_cast<int>(spec.x0.size()) != d) throw std::invalid_argument("problem: x0 has wrong dimension");
  if (!spec.drift || !spec.diffusion || !spec.driver || !spec.terminal)
    throw std::invalid_argument("problem: drift, diffusion, driver, and terminal are required");

  std::vector<double> x = spec.x0, z(d, 0.1), a(d), b(static_cast<std::size_t>(d) * d), g(d);
  spec.drift(0.5 * spec.horizon, x, 1.0, z, a);
  spec.diffusion(0.5 * spec.horizon, x, 1.0, b);
  (void)spec.driver(0.5 * spec.horizon, x, 1.0, z);
  (void)spec.terminal(x);
  if (spec.terminal_grad) spec.terminal_grad(x, g);
  if (spec.grad_u) spec.grad_u(0.5 * spec.horizon, x, g);
  if (spec.hess_u) {
    std::vector<double> h(static_cast<std::size_t>(d) * d);
    spec.hess_u(0.5 * spec.horizon, x, h);
  }
  if (spec.exact_state) {
    std::vector<double> w(d, 0.0), xs(d);
    spec.exact_state(0.5 * spec.horizon, w, xs);
  }

  // Terminal consistency of the exact solution: u(T, .) = g(.).
  if (spec.u) {
    std::uint64_t c = 0;
    for (int k = 0; k < 100; ++k) {
      for (int i = 0; i < d; ++i) {
        const double base = spec.x0[i] != 0.0 ? std::fabs(spec.x0[i]) : 1.0;
        x[i] = spec.x0[i] + base * (2.0 * rng::uniform01(seed, c++) - 1.0);
      }
      const double uT = spec.u(spec.horizon, x);
      const double gv = spec.terminal(x);
      if (std::fabs(uT - gv) > 1e-10 * (1.0 + std::fabs(gv)))
        throw std::invalid_argument("problem: exact solution violates u(T, x) = g(x)");
    }
  }
}

void gbm_exact_state(std::span<const double> x0, double sigma, double t,
                     std::span<const double> w, std::span<double> out) {
  if (t < 0.0) throw std::invalid_argument("gbm: time must be non-negative");
  for (std::size_t i = 0; i < x0.size(); ++i)
    out[i] = x0[i] * std::exp(-0.5 * sigma * sigma * t + sigma * w[i]);
}

ProblemSpec bsb_problem(int dim, double r, double sigma, double horizon,
                        std::span<const double> x0, const TerminalFunction& g) {
  if (sigma <= 0.0) throw std::invalid_argument("bsb: sigma must be positive");
  if (r < 0.0) throw std::invalid_argument("bsb: rate must be non-negative");
  if (!g.g) throw std::invalid_argument("bsb: terminal functional required");

  ProblemSpec spec;
  spec.name = "bsb";
  spec.dim = dim;
  spec.horizon = horizon;
  spec.x0.assign(x0.begin(), x0.end());

  spec.drift = [](double, std::span<const double>, double, std::span<const double>, std::span<double> out) {
    for (auto& v : out) v = 0.0;
  };
  spec.diffusion = [sigma, dim](double, std::span<const double> x, double, std::span<double> out) {
    for (auto& v : out) v = 0.0;
    for (int i = 0; i < dim; ++i) out[static_cast<std::size_t>(i) * dim + i] = sigma * x[i];
  };
  // The driver of the BSB system written for the hidden process Z = b^T grad u:
  // with b = sigma diag(x), sum_i z_i / sigma recovers x . grad u, so
  // phi(t,x,y,z) = r (y - x . grad u) as the equation requires.
  spec.driver = [r, sigma](double, std::span<const double>, double y, std::span<const double> z) {
    double s = 0.0;
    for (double zi : z) s += zi;
    return r * (y - s / sigma);
  };
  spec.driver_dy = [r](double, std::span<const double>, double, std::span<const double>) { return r; };
  spec.driver_dz = [r, sigma](double, std::span<const double>, double, std::span<const double>,
                              std::span<double> out) {
    for (auto& v : out) v = -r / sigma;
  };
  spec.terminal = g.g;
  if (g.grad) spec.terminal_grad = g.grad;

  const double growth = r + sigma * sigma;
  auto amp = [growth, horizon](double t) { return std::exp(growth * (horizon - t)); };
  auto gfun = g.g;
  spec.u = [amp, gfun](double t, std::span<const double> x) { return amp(t) * gfun(x); };
  spec.u_t = [amp, gfun, growth](double t, std::span<const double> x) { return -growth * amp(t) * gfun(x); };
  if (g.grad) {
    auto ggrad = g.grad;
    spec.grad_u = [amp, ggrad](double t, std::span<const double> x, std::span<double> out) {
      ggrad(x, out);
      const double e = amp(t);
      for (auto& v : out) v *= e;
    };
  }
  if (g.hess) {
    auto ghess = g.hess;
    spec.hess_u = [amp, ghess](double t, std::span<const double> x, std::span<double> out) {
      ghess(x, out);
      const double e = amp(t);
      for (auto& v : out) v *= e;
    };
  }
  spec.exact_state = [sigma, x0v = spec.x0](double t, std::span<const double> w, std::span<double> out) {
    gbm_exact_state(x0v, sigma, t, w, out);
  };

  validate_problem(spec);
  return spec;
}

double pde_residual(const ProblemSpec& spec, double t, std::span<const double> x) {
  if (!spec.u || !spec.u_t || !spec.grad_u || !spec.hess_u)
    throw std::invalid_argument("problem: pde_residual needs exact derivatives");
  const int d = spec.dim;
  const double uv = spec.u(t, x);
  const double ut = spec.u_t(t, x);
  std::vector<double> gu(d), b(static_cast<std::size_t>(d) * d), hu(static_cast<std::size_t>(d) * d);
  spec.grad_u(t, x, gu);
  spec.hess_u(t, x, hu);
  spec.diffusion(t, x, uv, b);

  std::vector<double> z(d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) z[i] += b[static_cast<std::size_t>(j) * d + i] * gu[j];

  std::vector<double> a(d);
  spec.drift(t, x, uv, z, a);

  double lu = ut;
  for (int i = 0; i < d; ++i) lu += a[i] * gu[i];
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      double bbt = 0.0;
      for (int k = 0; k < d; ++k)
        bbt += b[static_cast<std::size_t>(i) * d + k] * b[static_cast<std::size_t>(j) * d + k];
      lu += 0.5 * bbt * hu[static_cast<std::size_t>(i) * d + j];
    }
  return lu - spec.driver(t, x, uv, z);
}

OperatorValues l0_l1_apply(const ProblemSpec& spec, double t, double x) {
  if (spec.dim != 1) throw std::invalid_argument("problem: l0_l1_apply is one-dimensional only");
  if (!spec.u || !spec.u_t || !spec.grad_u || !spec.hess_u)
    throw std::invalid_argument("problem: l0_l1_apply needs exact derivatives");
  const double xs[1] = {x};
  std::span<const double> xv(xs, 1);
  const double uv = spec.u(t, xv);
  double gu, hu, b;
  spec.grad_u(t, xv, std::span<double>(&gu, 1));
  spec.hess_u(t, xv, std::span<double>(&hu, 1));
  spec.diffusion(t, xv, uv, std::span<double>(&b, 1));
  const double z = b * gu;
  double a;
  spec.drift(t, xv, uv, std::span<const double>(&z, 1), std::span<double>(&a, 1));
  OperatorValues out;
  out.l0u = spec.u_t(t, xv) + a * gu + 0.5 * b * b * hu;
  out.l1u = b * gu;
  return out;
}

double surrogate_residual(const ProblemSpec& spec, const Mlp& net, double t, std::span<const double> x) {
  if (!spec.u) throw std::invalid_argument("problem: surrogate_residual needs the exact solution");
  MlpWorkspace ws;
  return std::fabs(spec.u(t, x) - forward(net, t, x, ws));
}

EvalCloud default_eval_cloud(const ProblemSpec& spec, double spread) {
  EvalCloud c;
  c.x_lo.resize(spec.dim);
  c.x_hi.resize(spec.dim);
  for (int i = 0; i < spec.dim; ++i) {
    const double base = spec.x0[i] != 0.0 ? spec.x0[i] : 1.0;
    const double lo = base / (1.0 + spread);
    const double hi = base * (1.0 + spread);
    c.x_lo[i] = std::min(lo, hi);
    c.x_hi[i] = std::max(lo, hi);
  }
  return c;
}

double surrogate_sup_error(const ProblemSpec& spec, const Mlp& net, const EvalCloud& cloud) {
  if (!spec.u) throw std::invalid_argument("problem: surrogate_sup_error needs the exact solution");
  const int d = spec.dim;
  MlpWorkspace ws;
  ws.resize_for(net);
  std::vector<double> pt(d + 1), x(d);
  double worst = 0.0;
  for (std::size_t k = 0; k < cloud.count; ++k) {
    rng::kronecker_point(k, d + 1, pt.data());
    const double t = pt[0] * spec.horizon;
    for (int i = 0; i < d; ++i) x[i] = cloud.x_lo[i] + pt[1 + i] * (cloud.x_hi[i] - cloud.x_lo[i]);
    const double diff = std::fabs(spec.u(t, x) - forward_cached(net, t, x, ws.cache.data()));
    if (diff > worst) worst = diff;
  }
  return worst;
}

}  // namespace fbsde
