#include "fbsde/simulate.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include "fbsde/parallel.hpp"

namespace fbsde {

namespace {

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

void em_forward_step(const ProblemSpec& spec, double t, std::span<const double> x, double y,
                     std::span<const double> z, double dt, std::span<const double> dw,
                     std::span<double> x_next) {
  const int d = spec.dim;
  if (static_cast<int>(x.size()) != d || static_cast<int>(dw.size()) != d ||
      static_cast<int>(x_next.size()) != d)
    throw std::invalid_argument("simulate: state/increment dimension mismatch");
  if (!all_finite(x) || !std::isfinite(y) || !all_finite(z) || !all_finite(dw))
    throw std::invalid_argument("simulate: non-finite inputs to em_forward_step");

  std::vector<double> a(d), b(static_cast<std::size_t>(d) * d);
  spec.drift(t, x, y, z, a);
  spec.diffusion(t, x, y, b);
  for (int i = 0; i < d; ++i) {
    double acc = x[i] + a[i] * dt;
    const double* brow = &b[static_cast<std::size_t>(i) * d];
    for (int j = 0; j < d; ++j) acc += brow[j] * dw[j];
    x_next[i] = acc;
  }
}

double em_backward_step(const ProblemSpec& spec, double t, std::span<const double> x, double y,
                        std::span<const double> z, double dt, std::span<const double> dw) {
  if (!all_finite(x) || !std::isfinite(y) || !all_finite(z) || !all_finite(dw))
    throw std::invalid_argument("simulate: non-finite inputs to em_backward_step");
  double acc = y + spec.driver(t, x, y, z) * dt;
  for (std::size_t i = 0; i < z.size(); ++i) acc += z[i] * dw[i];
  return acc;
}

double milstein_step_1d(const std::function<double(double, double)>& a,
                        const std::function<double(double, double)>& b,
                        const std::function<double(double, double)>& db_dx, double t, double x,
                        double dt, double dw) {
  const double bv = b(t, x);
  return x + a(t, x) * dt + bv * dw + 0.5 * bv * db_dx(t, x) * (dw * dw - dt);
}

InitialStates init_states(const ProblemSpec& spec, const Mlp* net, std::span<const double> x0) {
  const int d = spec.dim;
  InitialStates s;
  s.z0.resize(d);
  std::vector<double> grad(d), b(static_cast<std::size_t>(d) * d);
  if (net != nullptr) {
    MlpWorkspace ws;
    ws.resize_for(*net);
    double du_dt = 0.0;
    forward_cached(*net, 0.0, x0, ws.cache.data());
    s.y0 = ws.cache[forward_cache_size(*net) - 1];
    input_gradient_cached(*net, ws.cache.data(), ws, du_dt, grad);
  } else {
    if (!spec.u || !spec.grad_u)
      throw std::invalid_argument("simulate: no surrogate given and the problem has no exact solution");
    s.y0 = spec.u(0.0, x0);
    spec.grad_u(0.0, x0, grad);
  }
  spec.diffusion(0.0, x0, s.y0, b);
  for (int i = 0; i < d; ++i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) acc += b[static_cast<std::size_t>(j) * d + i] * grad[j];
    s.z0[i] = acc;
  }
  return s;
}

namespace {

// Steps one track over one path. `value`/`gradient` read the solution
// surface (exact u or surrogate); buffers are caller-provided scratch.
struct TrackStepper {
  const ProblemSpec& spec;
  const TimeGrid& grid;
  std::function<double(double, std::span<const double>)> value;
  std::function<void(double, std::span<const double>, std::span<double>)> gradient;

  void run(std::size_t m, const IncrementSet& incs, PathBundle::TrackData& out, int dim,
           std::size_t nodes) const {
    const int d = dim;
    std::vector<double> a(d), b(static_cast<std::size_t>(d) * d), grad(d);
    double* x = &out.x[(m * nodes) * d];
    double* y = &out.y[m * nodes];
    double* z = &out.z[(m * nodes) * d];

    for (int i = 0; i < d; ++i) x[i] = spec.x0[i];
    y[0] = value(0.0, std::span<const double>(x, d));
    gradient(0.0, std::span<const double>(x, d), grad);
    spec.diffusion(0.0, std::span<const double>(x, d), y[0], b);
    for (int i = 0; i < d; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) acc += b[static_cast<std::size_t>(j) * d + i] * grad[j];
      z[i] = acc;
    }

    const std::size_t N = grid.steps();
    for (std::size_t n = 0; n < N; ++n) {
      const double t = grid.points[n];
      const double dt = grid.dt(n);
      const double* dw = incs.at(m, n);
      const double* xn = x + n * d;
      const double* zn = z + n * d;
      double* xn1 = x + (n + 1) * d;

      spec.drift(t, std::span<const double>(xn, d), y[n], std::span<const double>(zn, d), a);
      spec.diffusion(t, std::span<const double>(xn, d), y[n], b);
      for (int i = 0; i < d; ++i) {
        double acc = xn[i] + a[i] * dt;
        const double* brow = &b[static_cast<std::size_t>(i) * d];
        for (int j = 0; j < d; ++j) acc += brow[j] * dw[j];
        xn1[i] = acc;
      }

      const double t1 = grid.points[n + 1];
      y[n + 1] = value(t1, std::span<const double>(xn1, d));
      gradient(t1, std::span<const double>(xn1, d), grad);
      spec.diffusion(t1, std::span<const double>(xn1, d), y[n + 1], b);
      double* zn1 = z + (n + 1) * d;
      for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += b[static_cast<std::size_t>(j) * d + i] * grad[j];
        zn1[i] = acc;
      }

      bool ok = std::isfinite(y[n + 1]);
      for (int i = 0; ok && i < d; ++i) ok = std::isfinite(xn1[i]) && std::isfinite(zn1[i]);
      if (!ok)
        throw std::runtime_error("simulate: state exploded at path " + std::to_string(m) +
                                 ", step " + std::to_string(n + 1));
    }
  }
};

}  // namespace

PathBundle generate_paths(const ProblemSpec& spec, const TimeGrid& grid, const IncrementSet& incs,
                          const Mlp* net, const GenerateOptions& opts) {
  if (incs.steps() != grid.steps())
    throw std::invalid_argument("simulate: increment steps do not match the grid");
  if (incs.dim != spec.dim) throw std::invalid_argument("simulate: increment dimension mismatch");
  const bool want_exact = opts.exact_track;
  const bool want_surrogate = opts.surrogate_track && net != nullptr;
  if (want_exact && (!spec.u || !spec.grad_u))
    throw std::invalid_argument("simulate: exact track requested but the problem has no exact solution");
  if (!want_exact && !want_surrogate)
    throw std::invalid_argument("simulate: no track can be generated");
  if (net != nullptr && net->state_dim() != spec.dim)
    throw std::invalid_argument("simulate: surrogate dimension does not match the problem");

  PathBundle bundle;
  bundle.grid = grid;
  bundle.paths = incs.paths;
  bundle.dim = spec.dim;
  const std::size_t nodes = grid.points.size();
  const std::size_t M = incs.paths;

  auto alloc = [&](PathBundle::TrackData& tr) {
    tr.present = true;
    tr.x.resize(M * nodes * static_cast<std::size_t>(spec.dim));
    tr.y.resize(M * nodes);
    tr.z.resize(M * nodes * static_cast<std::size_t>(spec.dim));
  };
  if (want_exact) alloc(bundle.exact_u);
  if (want_surrogate) alloc(bundle.surrogate);

  parallel_for_blocks(M, opts.threads, 64, [&](std::size_t, std::size_t lo, std::size_t hi) {
    MlpWorkspace ws;
    std::vector<double> hgrad;
    if (want_surrogate) {
      ws.resize_for(*net);
      hgrad.resize(spec.dim);
    }
    if (want_exact) {
      TrackStepper stepper{spec, grid, spec.u,
                           [&spec](double t, std::span<const double> x, std::span<double> g) {
                             spec.grad_u(t, x, g);
                           }};
      for (std::size_t m = lo; m < hi; ++m) stepper.run(m, incs, bundle.exact_u, spec.dim, nodes);
    }
    if (want_surrogate) {
      TrackStepper stepper{spec, grid,
                           [&](double t, std::span<const double> x) {
                             return forward_cached(*net, t, x, ws.cache.data());
                           },
                           [&](double t, std::span<const double> x, std::span<double> g) {
                             double du_dt;
                             forward_cached(*net, t, x, ws.cache.data());
                             input_gradient_cached(*net, ws.cache.data(), ws, du_dt, g);
                           }};
      for (std::size_t m = lo; m < hi; ++m) stepper.run(m, incs, bundle.surrogate, spec.dim, nodes);
    }
  });
  return bundle;
}

void write_paths_csv(const PathBundle& bundle, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("simulate: cannot open '" + path + "' for writing");
  const int d = bundle.dim;
  out << "path,step,t,track";
  for (int i = 0; i < d; ++i) out << ",x" << i;
  out << ",y";
  for (int i = 0; i < d; ++i) out << ",z" << i;
  out << "\n";
  char buf[32];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << ',' << buf;
  };
  for (int tr = 0; tr < 2; ++tr) {
    const Track track = tr == 0 ? Track::ExactU : Track::Surrogate;
    const char* label = tr == 0 ? "exact_u" : "surrogate";
    if (!bundle.track(track).present) continue;
    for (std::size_t m = 0; m < bundle.paths; ++m)
      for (std::size_t n = 0; n < bundle.nodes(); ++n) {
        out << m << ',' << n;
        std::snprintf(buf, sizeof buf, "%.17g", bundle.grid.points[n]);
        out << ',' << buf << ',' << label;
        const double* x = bundle.x_at(track, m, n);
        for (int i = 0; i < d; ++i) emit(x[i]);
        emit(bundle.y_at(track, m, n));
        const double* z = bundle.z_at(track, m, n);
        for (int i = 0; i < d; ++i) emit(z[i]);
        out << "\n";
      }
  }
  if (!out) throw std::runtime_error("simulate: write failed for '" + path + "'");
}

}  // namespace fbsde
