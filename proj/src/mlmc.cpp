#include "fbsde/mlmc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fbsde/parallel.hpp"

namespace fbsde {

double strong_error(std::span<const double> exact, std::span<const double> approx,
                    std::size_t paths, std::size_t nodes, StrongErrorKind kind, double p) {
  if (exact.size() != approx.size() || exact.size() != paths * nodes || paths == 0 || nodes == 0)
    throw std::invalid_argument("mlmc: strong_error shape mismatch");
  if (kind == StrongErrorKind::SupInsideLp && p < 1.0)
    throw std::invalid_argument("mlmc: L^p strong error needs p >= 1");

  const double M = static_cast<double>(paths);
  switch (kind) {
    case StrongErrorKind::L1Terminal: {
      double s = 0.0;
      for (std::size_t m = 0; m < paths; ++m)
        s += std::fabs(exact[m * nodes + nodes - 1] - approx[m * nodes + nodes - 1]);
      return s / M;
    }
    case StrongErrorKind::L2Terminal: {
      double s = 0.0;
      for (std::size_t m = 0; m < paths; ++m) {
        const double d = exact[m * nodes + nodes - 1] - approx[m * nodes + nodes - 1];
        s += d * d;
      }
      return std::sqrt(s / M);
    }
    case StrongErrorKind::SupOutsideL2: {
      double worst = 0.0;
      for (std::size_t n = 0; n < nodes; ++n) {
        double s = 0.0;
        for (std::size_t m = 0; m < paths; ++m) {
          const double d = exact[m * nodes + n] - approx[m * nodes + n];
          s += d * d;
        }
        worst = std::max(worst, s / M);
      }
      return std::sqrt(worst);
    }
    case StrongErrorKind::SupInsideL2: {
      double s = 0.0;
      for (std::size_t m = 0; m < paths; ++m) {
        double sup = 0.0;
        for (std::size_t n = 0; n < nodes; ++n)
          sup = std::max(sup, std::fabs(exact[m * nodes + n] - approx[m * nodes + n]));
        s += sup * sup;
      }
      return std::sqrt(s / M);
    }
    case StrongErrorKind::SupInsideLp: {
      double s = 0.0;
      for (std::size_t m = 0; m < paths; ++m) {
        double sup = 0.0;
        for (std::size_t n = 0; n < nodes; ++n)
          sup = std::max(sup, std::fabs(exact[m * nodes + n] - approx[m * nodes + n]));
        s += std::pow(sup, p);
      }
      return std::pow(s / M, 1.0 / p);
    }
  }
  return 0.0;
}

PayoffFn terminal_y_payoff() {
  return [](const PathBundle& b, Track t, std::size_t m) { return b.y_at(t, m, b.grid.steps()); };
}

std::vector<double> payoff(const PathBundle& bundle, Track track, const PayoffFn& fn) {
  if (!bundle.track(track).present)
    throw std::invalid_argument("mlmc: requested track is not present in the bundle");
  std::vector<double> out(bundle.paths);
  for (std::size_t m = 0; m < bundle.paths; ++m) out[m] = fn(bundle, track, m);
  return out;
}

namespace {

// Node readings of one source at one level: value[m * (2^l + 1) + n].
std::vector<double> source_readings(const ProblemSpec& spec, const BrownianLattice& lattice,
                                    const EvalSource& src, int threads) {
  if (src.level < 0 || src.level > lattice.max_level)
    throw std::invalid_argument("mlmc: source level outside the lattice range");
  const std::size_t N = std::size_t{1} << src.level;
  const TimeGrid grid = uniform_grid(lattice.horizon, N);
  const IncrementSet incs = increments_at_level(lattice, src.level);
  const std::size_t M = lattice.paths;
  std::vector<double> out(M * (N + 1));

  switch (src.kind) {
    case SourceKind::ExactPath: {
      if (!spec.exact_state || !spec.u)
        throw std::invalid_argument("mlmc: exact-path readings need exact_state and u");
      parallel_for_blocks(M, threads, 64, [&](std::size_t, std::size_t lo, std::size_t hi) {
        const int d = spec.dim;
        std::vector<double> w(d, 0.0), x(d);
        for (std::size_t m = lo; m < hi; ++m) {
          std::fill(w.begin(), w.end(), 0.0);
          spec.exact_state(0.0, w, x);
          out[m * (N + 1)] = spec.u(0.0, x);
          for (std::size_t n = 0; n < N; ++n) {
            const double* dw = incs.at(m, n);
            for (int i = 0; i < d; ++i) w[i] += dw[i];
            const double t = grid.points[n + 1];
            spec.exact_state(t, w, x);
            out[m * (N + 1) + n + 1] = spec.u(t, x);
          }
        }
      });
      return out;
    }
    case SourceKind::EmExact:
    case SourceKind::EmSurrogate: {
      GenerateOptions gopt;
      gopt.threads = threads;
      gopt.exact_track = src.kind == SourceKind::EmExact;
      gopt.surrogate_track = src.kind == SourceKind::EmSurrogate;
      const Mlp* net = src.kind == SourceKind::EmSurrogate ? src.net : nullptr;
      if (gopt.surrogate_track && net == nullptr)
        throw std::invalid_argument("mlmc: surrogate readings need a network");
      const PathBundle bundle = generate_paths(spec, grid, incs, net, gopt);
      const Track track = src.kind == SourceKind::EmExact ? Track::ExactU : Track::Surrogate;
      // Algorithm 1 sets Y_n = u(t_n, X_n), i.e. exactly the reading we want.
      out = bundle.track(track).y;
      return out;
    }
  }
  throw std::logic_error("mlmc: unknown source kind");
}

void reduce_difference(const std::vector<double>& fine, int level_fine,
                       const std::vector<double>& coarse, int level_coarse, NodeSelection sel,
                       std::vector<double>& values) {
  if (level_fine < level_coarse) throw std::invalid_argument("mlmc: fine level below coarse level");
  const std::size_t nc = (std::size_t{1} << level_coarse) + 1;
  const std::size_t stride = std::size_t{1} << (level_fine - level_coarse);
  const std::size_t nf = (std::size_t{1} << level_fine) + 1;
  const std::size_t M = values.size();
  for (std::size_t m = 0; m < M; ++m) {
    const double* f = &fine[m * nf];
    const double* c = &coarse[m * nc];
    if (sel == NodeSelection::Terminal) {
      values[m] = f[nf - 1] - c[nc - 1];
    } else {
      double best = 0.0, best_abs = -1.0;
      for (std::size_t n = 0; n < nc; ++n) {
        const double d = f[n * stride] - c[n];
        const double a = std::fabs(d);
        if (a > best_abs) {
          best_abs = a;
          best = d;
        }
      }
      values[m] = best;
    }
  }
}

}  // namespace

DifferenceSample two_way_difference(const ProblemSpec& spec, const BrownianLattice& lattice,
                                    const EvalSource& fine, const EvalSource& coarse,
                                    NodeSelection selection, int threads) {
  if (fine.level < coarse.level)
    throw std::invalid_argument("mlmc: fine level must be >= coarse level");
  const std::vector<double> rf = source_readings(spec, lattice, fine, threads);
  const std::vector<double> rc = source_readings(spec, lattice, coarse, threads);
  DifferenceSample out;
  out.kind_label = "two_way";
  out.level_fine = fine.level;
  out.level_coarse = coarse.level;
  out.selection = selection;
  out.cost_steps = (std::size_t{1} << fine.level) + (std::size_t{1} << coarse.level);
  out.values.resize(lattice.paths);
  reduce_difference(rf, fine.level, rc, coarse.level, selection, out.values);
  return out;
}

DifferenceSample four_way_difference(const ProblemSpec& spec, const BrownianLattice& lattice,
                                     int level_fine, int level_coarse, const Mlp& theta,
                                     const Mlp& theta_prime, NodeSelection selection, int threads) {
  if (theta.dims != theta_prime.dims || theta.activation != theta_prime.activation)
    throw std::invalid_argument("mlmc: four-way difference needs checkpoints of one architecture");
  if (level_fine < level_coarse)
    throw std::invalid_argument("mlmc: fine level must be >= coarse level");

  const std::vector<double> fp = source_readings(spec, lattice, {SourceKind::EmSurrogate, level_fine, &theta_prime}, threads);
  const std::vector<double> cp = source_readings(spec, lattice, {SourceKind::EmSurrogate, level_coarse, &theta_prime}, threads);
  const std::vector<double> ft = source_readings(spec, lattice, {SourceKind::EmSurrogate, level_fine, &theta}, threads);
  const std::vector<double> ct = source_readings(spec, lattice, {SourceKind::EmSurrogate, level_coarse, &theta}, threads);

  const std::size_t nc = (std::size_t{1} << level_coarse) + 1;
  const std::size_t nf = (std::size_t{1} << level_fine) + 1;
  const std::size_t stride = std::size_t{1} << (level_fine - level_coarse);

  DifferenceSample out;
  out.kind_label = "four_way";
  out.level_fine = level_fine;
  out.level_coarse = level_coarse;
  out.selection = selection;
  out.cost_steps = 2 * ((std::size_t{1} << level_fine) + (std::size_t{1} << level_coarse));
  out.values.resize(lattice.paths);
  for (std::size_t m = 0; m < lattice.paths; ++m) {
    const double* a = &fp[m * nf];
    const double* b = &cp[m * nc];
    const double* c = &ft[m * nf];
    const double* d = &ct[m * nc];
    if (selection == NodeSelection::Terminal) {
      out.values[m] = a[nf - 1] - b[nc - 1] - c[nf - 1] + d[nc - 1];
    } else {
      double best = 0.0, best_abs = -1.0;
      for (std::size_t n = 0; n < nc; ++n) {
        const double v = a[n * stride] - b[n] - c[n * stride] + d[n];
        if (std::fabs(v) > best_abs) {
          best_abs = std::fabs(v);
          best = v;
        }
      }
      out.values[m] = best;
    }
  }
  return out;
}

MlmcResult mlmc_estimate(std::span<const DifferenceSample> samples) {
  if (samples.empty()) throw std::invalid_argument("mlmc: no samples");
  MlmcResult out;
  int expect = 0;
  for (const auto& s : samples) {
    if (s.level_fine != expect)
      throw std::invalid_argument("mlmc: level gap in the telescoping sum (expected level " +
                                  std::to_string(expect) + ")");
    if (s.values.empty()) throw std::invalid_argument("mlmc: a level has no samples");
    double sum = 0.0, ssq = 0.0;
    for (double v : s.values) {
      sum += v;
      ssq += v * v;
    }
    const double n = static_cast<double>(s.values.size());
    LevelEstimate le;
    le.level = s.level_fine;
    le.count = s.values.size();
    le.mean = sum / n;
    le.variance = s.values.size() > 1 ? std::max(0.0, (ssq - sum * sum / n) / (n - 1.0)) : 0.0;
    out.levels.push_back(le);
    out.estimate += le.mean;
    ++expect;
  }
  return out;
}

FitResult convergence_fit(std::span<const int> levels, std::span<const double> errors) {
  if (levels.size() != errors.size() || levels.size() < 3)
    throw std::invalid_argument("mlmc: convergence fit needs at least three levels");
  for (double e : errors)
    if (!(e > 0.0)) throw std::invalid_argument("mlmc: convergence fit needs positive errors");

  const double n = static_cast<double>(levels.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double x = static_cast<double>(levels[i]);
    const double y = std::log2(errors[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }
  FitResult fit;
  const double den = n * sxx - sx * sx;
  fit.slope = (n * sxy - sx * sy) / den;
  fit.intercept = (sy - fit.slope * sx) / n;
  const double ss_tot = syy - sy * sy / n;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double y = std::log2(errors[i]);
    const double f = fit.intercept + fit.slope * static_cast<double>(levels[i]);
    ss_res += (y - f) * (y - f);
  }
  fit.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return fit;
}

std::vector<VarianceScanRow> variance_structure_scan(const ProblemSpec& spec, const Mlp* theta,
                                                     const Mlp* theta_prime,
                                                     const VarianceScanOptions& opts,
                                                     std::vector<std::string>* warnings) {
  if (opts.levels.empty()) throw std::invalid_argument("mlmc: scan needs at least one level");
  int max_level = 0;
  for (int l : opts.levels) {
    if (l < 0) throw std::invalid_argument("mlmc: negative level");
    max_level = std::max(max_level, l);
  }
  const BrownianLattice lattice =
      sample_lattice(opts.seed, max_level, opts.paths, spec.dim, spec.horizon);

  const bool have_exact = spec.has_exact_solution() && spec.grad_u;
  const bool have_exact_path = have_exact && static_cast<bool>(spec.exact_state);
  auto warn = [&](const std::string& msg) {
    if (warnings != nullptr) warnings->push_back(msg);
  };
  if (!have_exact) warn("rows using the exact solution skipped: problem has no exact u");
  if (have_exact && !have_exact_path) warn("exact-path row skipped: problem has no exact state sampler");
  if (theta == nullptr) warn("surrogate rows skipped: no checkpoint");
  if (theta_prime == nullptr) warn("network-pair rows skipped: no second checkpoint");

  // Readings cached for the current and previous level.
  struct LevelReadings {
    int level = -1;
    std::vector<double> exact_path, em_exact, surr_theta, surr_theta_prime;
  };
  LevelReadings prev, cur;
  auto fill = [&](int level, LevelReadings& lr) {
    lr.level = level;
    if (have_exact_path)
      lr.exact_path = source_readings(spec, lattice, {SourceKind::ExactPath, level, nullptr}, opts.threads);
    if (have_exact)
      lr.em_exact = source_readings(spec, lattice, {SourceKind::EmExact, level, nullptr}, opts.threads);
    if (theta != nullptr)
      lr.surr_theta = source_readings(spec, lattice, {SourceKind::EmSurrogate, level, theta}, opts.threads);
    if (theta_prime != nullptr)
      lr.surr_theta_prime =
          source_readings(spec, lattice, {SourceKind::EmSurrogate, level, theta_prime}, opts.threads);
  };

  std::vector<VarianceScanRow> rows;
  std::vector<double> values(opts.paths);
  auto push_row = [&](const std::string& kind, int level, int level_coarse,
                      const std::vector<double>& fine, const std::vector<double>& coarse) {
    reduce_difference(fine, level, coarse, level_coarse, opts.selection, values);
    VarianceScanRow row;
    row.kind = kind;
    row.level = level;
    row.dt = spec.horizon / static_cast<double>(std::size_t{1} << level);
    row.n_samples = values.size();
    double sa = 0.0, s = 0.0, ssq = 0.0, saa = 0.0;
    for (double v : values) {
      sa += std::fabs(v);
      saa += v * v;
      s += v;
      ssq += v * v;
    }
    const double n = static_cast<double>(values.size());
    row.l1_error = sa / n;
    const double var_abs = std::max(0.0, (saa - sa * sa / n) / (n - 1.0));
    row.l1_se = std::sqrt(var_abs / n);
    row.variance = std::max(0.0, (ssq - s * s / n) / (n - 1.0));
    row.var_se = row.variance * std::sqrt(2.0 / (n - 1.0));
    row.cost_steps = (std::size_t{1} << level) + (level_coarse == level ? (std::size_t{1} << level)
                                                                        : (std::size_t{1} << level_coarse));
    rows.push_back(row);
  };

  std::vector<int> levels = opts.levels;
  std::sort(levels.begin(), levels.end());
  for (int l : levels) {
    if (prev.level != l - 1 || cur.level != l) {
      if (cur.level == l - 1) {
        prev = std::move(cur);
      } else if (l > 0) {
        fill(l - 1, prev);
      }
      fill(l, cur);
    }
    const bool have_prev = l > 0;
    if (have_exact_path && have_exact) push_row("u_exact_vs_u_em", l, l, cur.exact_path, cur.em_exact);
    if (have_exact && have_prev) push_row("u_em_fine_vs_coarse", l, l - 1, cur.em_exact, prev.em_exact);
    if (have_exact && theta != nullptr) push_row("u_em_vs_surrogate", l, l, cur.em_exact, cur.surr_theta);
    if (theta != nullptr && have_prev)
      push_row("surrogate_fine_vs_coarse", l, l - 1, cur.surr_theta, prev.surr_theta);
    if (have_exact_path && theta != nullptr)
      push_row("u_exact_vs_surrogate", l, l, cur.exact_path, cur.surr_theta);
    if (theta != nullptr && theta_prime != nullptr) {
      push_row("net_pair_same_level", l, l, cur.surr_theta_prime, cur.surr_theta);
      if (have_prev) {
        push_row("net_pair_mixed_level", l, l - 1, cur.surr_theta_prime, prev.surr_theta);
        // four-way: (theta' fine - theta' coarse) - (theta fine - theta coarse)
        std::vector<double> fw(opts.paths);
        const std::size_t nf = (std::size_t{1} << l) + 1;
        const std::size_t nc = (std::size_t{1} << (l - 1)) + 1;
        for (std::size_t m = 0; m < opts.paths; ++m) {
          const double* a = &cur.surr_theta_prime[m * nf];
          const double* b = &prev.surr_theta_prime[m * nc];
          const double* c = &cur.surr_theta[m * nf];
          const double* d = &prev.surr_theta[m * nc];
          if (opts.selection == NodeSelection::Terminal) {
            fw[m] = a[nf - 1] - b[nc - 1] - c[nf - 1] + d[nc - 1];
          } else {
            double best = 0.0, best_abs = -1.0;
            for (std::size_t n = 0; n < nc; ++n) {
              const double v = a[n * 2] - b[n] - c[n * 2] + d[n];
              if (std::fabs(v) > best_abs) {
                best_abs = std::fabs(v);
                best = v;
              }
            }
            fw[m] = best;
          }
        }
        VarianceScanRow row;
        row.kind = "four_way";
        row.level = l;
        row.dt = spec.horizon / static_cast<double>(std::size_t{1} << l);
        row.n_samples = fw.size();
        double sa = 0.0, s = 0.0, ssq = 0.0, saa = 0.0;
        for (double v : fw) {
          sa += std::fabs(v);
          saa += v * v;
          s += v;
          ssq += v * v;
        }
        const double n = static_cast<double>(fw.size());
        row.l1_error = sa / n;
        row.l1_se = std::sqrt(std::max(0.0, (saa - sa * sa / n) / (n - 1.0)) / n);
        row.variance = std::max(0.0, (ssq - s * s / n) / (n - 1.0));
        row.var_se = row.variance * std::sqrt(2.0 / (n - 1.0));
        row.cost_steps = 2 * ((std::size_t{1} << l) + (std::size_t{1} << (l - 1)));
        rows.push_back(row);
      }
    }
  }
  return rows;
}

}  // namespace fbsde
