// Experiment driver: training, path generation, loss scaling scans, the
// variance-structure scan, and one-step remainder diagnostics. Every run
// writes CSV outputs plus a manifest sufficient to reproduce it.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "fbsde/config.hpp"
#include "fbsde/loss.hpp"
#include "fbsde/mlmc.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/rng.hpp"
#include "fbsde/simulate.hpp"
#include "fbsde/surrogate.hpp"
#include "fbsde/train.hpp"

namespace {

constexpr const char* kVersion = "fbsde 1.0.0";

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

const std::map<std::string, std::set<std::string>> kSchema = {
    {"problem", {"name", "d", "r", "sigma", "x0", "T", "g"}},
    {"grid", {"kind"}},
    {"network", {"hidden", "activation", "init_seed", "t_scale", "x_scale"}},
    {"train",
     {"mode", "iterations", "batch", "level", "learning_rate", "beta1", "beta2", "epsilon", "loss",
      "resample", "terminal_grad_weight", "seed", "snapshots"}},
    {"experiment", {"levels", "paths", "seed", "selection", "tracks", "level", "diag_paths"}},
};

struct Run {
  fbsde::Config cfg;
  std::filesystem::path out;
  std::uint64_t master_seed = 1234;
  std::uint64_t train_seed = 0;
  std::uint64_t experiment_seed = 0;
  std::uint64_t init_seed = 0;
  int threads = 1;
  bool timing = false;
  std::vector<std::string> checkpoints;
};

fbsde::ProblemSpec problem_from(const fbsde::Config& cfg) {
  const std::string name = cfg.get_string("problem", "name", "bsb");
  if (name != "bsb")
    throw fbsde::ConfigError("config: unknown problem '" + name + "' (available: bsb)");
  const int d = static_cast<int>(cfg.get_int("problem", "d", 1));
  const double r = cfg.get_double("problem", "r", 0.05);
  const double sigma = cfg.get_double("problem", "sigma", 0.4);
  const double T = cfg.get_double("problem", "T", 1.0);
  const double x0v = cfg.get_double("problem", "x0", 1.0);
  const std::string g = cfg.get_string("problem", "g", "square");
  if (g != "square")
    throw fbsde::ConfigError("config: unknown terminal functional '" + g + "' (available: square)");
  if (d < 1) throw fbsde::ConfigError("config: problem dimension must be >= 1");
  std::vector<double> x0(d, x0v);
  return fbsde::bsb_problem(d, r, sigma, T, x0);
}

fbsde::Mlp network_from(const fbsde::Config& cfg, const fbsde::ProblemSpec& spec,
                        std::uint64_t init_seed) {
  fbsde::MlpOptions opts;
  const auto hidden = cfg.get_int_list("network", "hidden", {32, 32, 32, 32});
  opts.hidden.assign(hidden.begin(), hidden.end());
  const std::string act = cfg.get_string("network", "activation", "tanh");
  if (act == "tanh") opts.activation = fbsde::Activation::Tanh;
  else if (act == "sine") opts.activation = fbsde::Activation::Sine;
  else if (act == "relu") opts.activation = fbsde::Activation::ReLU;
  else if (act == "identity") opts.activation = fbsde::Activation::Identity;
  else throw fbsde::ConfigError("config: unknown activation '" + act + "'");
  opts.init_seed = cfg.get_uint("network", "init_seed", init_seed);
  opts.t_scale = cfg.get_double("network", "t_scale", spec.horizon);
  double xs = 1.0;
  for (double x : spec.x0) xs = std::max(xs, std::fabs(x));
  opts.x_scale = cfg.get_double("network", "x_scale", 2.0 * xs);
  return fbsde::make_mlp(spec.dim, opts);
}

fbsde::GridKind grid_kind_from(const fbsde::Config& cfg) {
  const std::string kind = cfg.get_string("grid", "kind", "uniform");
  if (kind == "uniform") return fbsde::GridKind::Uniform;
  if (kind == "chebyshev") return fbsde::GridKind::Chebyshev;
  throw fbsde::ConfigError("config: unknown grid kind '" + kind + "'");
}

fbsde::TrainConfig train_config_from(const Run& run) {
  const fbsde::Config& cfg = run.cfg;
  fbsde::TrainConfig tc;
  tc.iterations = cfg.get_uint("train", "iterations", 2000);
  tc.batch_paths = cfg.get_uint("train", "batch", 256);
  tc.level = static_cast<int>(cfg.get_int("train", "level", 4));
  tc.adam.learning_rate = cfg.get_double("train", "learning_rate", 3e-3);
  tc.adam.beta1 = cfg.get_double("train", "beta1", 0.9);
  tc.adam.beta2 = cfg.get_double("train", "beta2", 0.999);
  tc.adam.epsilon = cfg.get_double("train", "epsilon", 1e-8);
  const std::string loss = cfg.get_string("train", "loss", "pathwise");
  if (loss == "pathwise") tc.variant = fbsde::LossVariant::Pathwise;
  else if (loss == "pathwise_terminal_grad") tc.variant = fbsde::LossVariant::PathwisePlusTerminalGrad;
  else if (loss == "higher_order") tc.variant = fbsde::LossVariant::HigherOrder;
  else throw fbsde::ConfigError("config: unknown loss variant '" + loss + "'");
  tc.resample_paths = cfg.get_bool("train", "resample", true);
  tc.terminal_grad_weight = cfg.get_double("train", "terminal_grad_weight", 1.0);
  tc.seed = cfg.get_uint("train", "seed", run.train_seed);
  tc.grid_kind = grid_kind_from(cfg);
  tc.threads = run.threads;
  tc.record_timings = run.timing;
  return tc;
}

void write_manifest(const Run& run, const std::string& command,
                    const std::vector<std::string>& extra = {}) {
  std::ofstream out(run.out / "manifest.txt");
  if (!out) throw std::runtime_error("cli: cannot write manifest in '" + run.out.string() + "'");
  out << "tool = " << kVersion << "\n";
  out << "command = " << command << "\n";
  out << "config_fnv1a = " << fnv1a(run.cfg.text()) << "\n";
  out << "master_seed = " << run.master_seed << "\n";
  out << "train_seed = " << run.cfg.get_uint("train", "seed", run.train_seed) << "\n";
  out << "experiment_seed = " << run.cfg.get_uint("experiment", "seed", run.experiment_seed) << "\n";
  out << "network_init_seed = " << run.cfg.get_uint("network", "init_seed", run.init_seed) << "\n";
  out << "threads = " << run.threads << "\n";
  for (const auto& line : extra) out << line << "\n";
  out << "--- config ---\n" << run.cfg.text();
  if (!run.cfg.text().empty() && run.cfg.text().back() != '\n') out << "\n";
}

int cmd_train(const Run& run) {
  const fbsde::ProblemSpec spec = problem_from(run.cfg);
  fbsde::Mlp net = network_from(run.cfg, spec, run.init_seed);
  fbsde::TrainConfig tc = train_config_from(run);

  const std::string mode = run.cfg.get_string("train", "mode", "single");
  const auto snaps = run.cfg.get_int_list("train", "snapshots", {});
  for (int s : snaps) {
    if (s <= 0) throw fbsde::ConfigError("config: snapshot iterations must be positive");
    tc.snapshot_at.push_back(static_cast<std::size_t>(s));
  }
  const std::filesystem::path outdir = run.out;
  tc.snapshot_hook = [&outdir](std::size_t iter, const fbsde::Mlp& n) {
    fbsde::save_checkpoint(n, (outdir / ("checkpoint_iter" + std::to_string(iter) + ".bin")).string());
  };

  fbsde::TrainReport report;
  if (mode == "single") report = fbsde::train_single_level(spec, net, tc);
  else if (mode == "multilevel") report = fbsde::train_multilevel_inspired(spec, net, tc);
  else throw fbsde::ConfigError("config: unknown train mode '" + mode + "' (single|multilevel)");

  fbsde::save_checkpoint(net, (run.out / "checkpoint.bin").string());

  std::ofstream csv(run.out / "train_history.csv");
  csv << "iteration,level,loss,wall_ms\n";
  for (std::size_t i = 0; i < report.loss_history.size(); ++i)
    csv << i << ',' << report.level_of_iteration[i] << ',' << fmt17(report.loss_history[i]) << ','
        << fmt17(report.wall_ms_per_iteration[i]) << "\n";

  std::vector<std::string> extra;
  if (report.eps_hat_initial >= 0.0) {
    extra.push_back("eps_hat_initial = " + fmt17(report.eps_hat_initial));
    extra.push_back("eps_hat_final = " + fmt17(report.eps_hat_final));
  }
  write_manifest(run, "train", extra);
  std::cout << "trained " << report.loss_history.size() << " iterations";
  if (!report.loss_history.empty())
    std::cout << ", loss " << fmt17(report.loss_history.front()) << " -> "
              << fmt17(report.loss_history.back());
  std::cout << "\n";
  return 0;
}

int cmd_paths(const Run& run) {
  const fbsde::ProblemSpec spec = problem_from(run.cfg);
  const int level = static_cast<int>(run.cfg.get_int("experiment", "level", 4));
  const std::size_t paths = run.cfg.get_uint("experiment", "paths", 128);
  const std::uint64_t seed = run.cfg.get_uint("experiment", "seed", run.experiment_seed);
  const std::size_t N = std::size_t{1} << level;

  const fbsde::GridKind kind = grid_kind_from(run.cfg);
  const fbsde::TimeGrid grid = kind == fbsde::GridKind::Uniform
                                   ? fbsde::uniform_grid(spec.horizon, N)
                                   : fbsde::chebyshev_grid(spec.horizon, N);
  fbsde::IncrementSet incs;
  if (kind == fbsde::GridKind::Uniform) {
    const fbsde::BrownianLattice lat = fbsde::sample_lattice(seed, level, paths, spec.dim, spec.horizon);
    incs = fbsde::increments_at_level(lat, level);
  } else {
    incs = fbsde::sample_increments_for_grid(seed, grid, paths, spec.dim);
  }

  fbsde::Mlp net;
  const bool have_net = !run.checkpoints.empty();
  if (have_net) net = fbsde::load_checkpoint(run.checkpoints.front());

  const std::string tracks = run.cfg.get_string("experiment", "tracks", have_net ? "both" : "exact");
  fbsde::GenerateOptions opts;
  opts.threads = run.threads;
  if (tracks == "both") {
    opts.exact_track = true;
    opts.surrogate_track = true;
  } else if (tracks == "exact") {
    opts.exact_track = true;
    opts.surrogate_track = false;
  } else if (tracks == "surrogate") {
    opts.exact_track = false;
    opts.surrogate_track = true;
  } else {
    throw fbsde::ConfigError("config: unknown tracks selection '" + tracks + "'");
  }
  if (opts.surrogate_track && !have_net)
    throw fbsde::ConfigError("cli: surrogate track requested but no --checkpoint given");

  const fbsde::PathBundle bundle =
      fbsde::generate_paths(spec, grid, incs, have_net ? &net : nullptr, opts);
  fbsde::write_paths_csv(bundle, (run.out / "paths.csv").string());
  write_manifest(run, "paths");
  std::cout << "wrote " << bundle.paths << " paths x " << bundle.nodes() << " nodes\n";
  return 0;
}

int cmd_loss_scan(const Run& run) {
  const fbsde::ProblemSpec spec = problem_from(run.cfg);
  if (!spec.has_exact_derivatives())
    throw fbsde::ConfigError("cli: loss-scan needs a problem with an exact solution");
  const auto levels = run.cfg.get_int_list("experiment", "levels", {2, 3, 4, 5, 6, 7, 8});
  const std::size_t paths = run.cfg.get_uint("experiment", "paths", 8192);
  const std::uint64_t seed = run.cfg.get_uint("experiment", "seed", run.experiment_seed);

  const auto rows = fbsde::loss_scaling_scan(spec, levels, paths, seed, run.threads);

  std::ofstream csv(run.out / "loss_scan.csv");
  csv << "level,dt,variant,mean_signed,se_signed,mean_abs,se_abs\n";
  for (const auto& r : rows)
    csv << r.level << ',' << fmt17(r.dt) << ',' << r.variant << ',' << fmt17(r.mean_signed) << ','
        << fmt17(r.se_signed) << ',' << fmt17(r.mean_abs) << ',' << fmt17(r.se_abs) << "\n";

  for (const std::string variant : {"pathwise", "higher_order"}) {
    std::vector<int> ls;
    std::vector<double> abs_means;
    for (const auto& r : rows)
      if (r.variant == variant) {
        ls.push_back(r.level);
        abs_means.push_back(r.mean_abs);
      }
    if (ls.size() >= 3) {
      const fbsde::FitResult fit = fbsde::convergence_fit(ls, abs_means);
      csv << "# fitted_abs_slope_dt," << variant << ',' << fmt17(-fit.slope) << ",r2,"
          << fmt17(fit.r2) << "\n";
      std::cout << variant << ": |residual| ~ dt^" << fmt17(-fit.slope) << " (r2 " << fmt17(fit.r2)
                << ")\n";
    }
  }
  write_manifest(run, "loss-scan");
  return 0;
}

int cmd_variance_scan(const Run& run) {
  const fbsde::ProblemSpec spec = problem_from(run.cfg);
  fbsde::VarianceScanOptions opts;
  opts.levels = run.cfg.get_int_list("experiment", "levels", {1, 2, 3, 4, 5, 6, 7, 8});
  opts.paths = run.cfg.get_uint("experiment", "paths", 4096);
  opts.seed = run.cfg.get_uint("experiment", "seed", run.experiment_seed);
  opts.threads = run.threads;
  const std::string sel = run.cfg.get_string("experiment", "selection", "sup");
  if (sel == "sup") opts.selection = fbsde::NodeSelection::SupAbs;
  else if (sel == "terminal") opts.selection = fbsde::NodeSelection::Terminal;
  else throw fbsde::ConfigError("config: unknown node selection '" + sel + "'");

  fbsde::Mlp theta, theta_prime;
  const fbsde::Mlp* tp = nullptr;
  const fbsde::Mlp* tpp = nullptr;
  if (!run.checkpoints.empty()) {
    theta = fbsde::load_checkpoint(run.checkpoints[0]);
    tp = &theta;
  }
  if (run.checkpoints.size() >= 2) {
    theta_prime = fbsde::load_checkpoint(run.checkpoints[1]);
    tpp = &theta_prime;
  }

  std::vector<std::string> warnings;
  const auto rows = fbsde::variance_structure_scan(spec, tp, tpp, opts, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  std::ofstream csv(run.out / "variance_scan.csv");
  csv << "kind,level,dt,n_samples,l1_error,l1_se,variance,var_se,cost_steps\n";
  std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> by_kind;
  for (const auto& r : rows) {
    csv << r.kind << ',' << r.level << ',' << fmt17(r.dt) << ',' << r.n_samples << ','
        << fmt17(r.l1_error) << ',' << fmt17(r.l1_se) << ',' << fmt17(r.variance) << ','
        << fmt17(r.var_se) << ',' << r.cost_steps << "\n";
    by_kind[r.kind].first.push_back(r.level);
    by_kind[r.kind].second.push_back(r.l1_error);
  }
  for (const auto& [kind, data] : by_kind) {
    if (data.first.size() < 3) continue;
    bool positive = true;
    for (double e : data.second) positive = positive && e > 0.0;
    if (!positive) continue;
    const fbsde::FitResult fit = fbsde::convergence_fit(data.first, data.second);
    csv << "# fit," << kind << ",slope_per_level," << fmt17(fit.slope) << ",r2," << fmt17(fit.r2)
        << "\n";
  }
  write_manifest(run, "variance-scan",
                 {"lattice_seed = " + std::to_string(opts.seed)});
  std::cout << "wrote " << rows.size() << " scan rows\n";
  return 0;
}

int cmd_loss_diagnostics(const Run& run) {
  const fbsde::ProblemSpec spec = problem_from(run.cfg);
  if (spec.dim != 1) throw fbsde::ConfigError("cli: loss-diagnostics is one-dimensional only");
  if (run.checkpoints.empty())
    throw fbsde::ConfigError("cli: loss-diagnostics needs a --checkpoint");
  const fbsde::Mlp net = fbsde::load_checkpoint(run.checkpoints.front());

  const int level = static_cast<int>(run.cfg.get_int("experiment", "level", 4));
  const std::size_t paths = run.cfg.get_uint("experiment", "diag_paths", 4);
  const std::uint64_t seed = run.cfg.get_uint("experiment", "seed", run.experiment_seed);
  const std::size_t N = std::size_t{1} << level;

  const fbsde::TimeGrid grid = fbsde::uniform_grid(spec.horizon, N);
  const fbsde::BrownianLattice lat = fbsde::sample_lattice(seed, level, paths, 1, spec.horizon);
  const fbsde::IncrementSet incs = fbsde::increments_at_level(lat, level);
  fbsde::GenerateOptions gopt;
  gopt.exact_track = false;
  gopt.threads = run.threads;
  const fbsde::PathBundle bundle = fbsde::generate_paths(spec, grid, incs, &net, gopt);

  std::ofstream csv(run.out / "loss_diagnostics.csv");
  csv << "path,step,t,x,y,z,dt,dw,r1,r2,r3,r4,r5,r6,r_tail,residual\n";
  for (std::size_t m = 0; m < paths; ++m)
    for (std::size_t n = 0; n < N; ++n) {
      const double t = grid.points[n];
      const double x = *bundle.x_at(fbsde::Track::Surrogate, m, n);
      const double y = bundle.y_at(fbsde::Track::Surrogate, m, n);
      const double z = *bundle.z_at(fbsde::Track::Surrogate, m, n);
      const double dt = grid.dt(n);
      const double dw = *incs.at(m, n);
      const auto rep = fbsde::remainder_decomposition(spec, net, t, x, y, z, dt, dw);
      csv << m << ',' << n << ',' << fmt17(t) << ',' << fmt17(x) << ',' << fmt17(y) << ','
          << fmt17(z) << ',' << fmt17(dt) << ',' << fmt17(dw) << ',' << fmt17(rep.r1) << ','
          << fmt17(rep.r2) << ',' << fmt17(rep.r3) << ',' << fmt17(rep.r4) << ',' << fmt17(rep.r5)
          << ',' << fmt17(rep.r6) << ',' << fmt17(rep.r_tail) << ',' << fmt17(rep.residual) << "\n";
    }
  write_manifest(run, "loss-diagnostics");
  std::cout << "wrote " << paths * N << " remainder rows\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-surrogate FBSDE simulation and multilevel Monte Carlo experiments"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 1234;
  int threads = 1;
  bool timing = false;
  std::vector<std::string> checkpoints;

  app.add_option("--config", config_path, "configuration file")->required();
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--checkpoint", checkpoints, "surrogate checkpoint (repeatable)");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--timing", timing, "record wall-clock columns (non-reproducible)");

  auto* train = app.add_subcommand("train", "train a surrogate");
  auto* paths = app.add_subcommand("paths", "generate sample paths");
  auto* loss_scan = app.add_subcommand("loss-scan", "one-step residual scaling scan");
  auto* var_scan = app.add_subcommand("variance-scan", "two- and four-way difference scan");
  auto* diag = app.add_subcommand("loss-diagnostics", "one-step remainder decomposition dump");
  for (auto* sc : {train, paths, loss_scan, var_scan, diag}) sc->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    Run run;
    run.cfg = fbsde::Config::parse_file(config_path);
    run.cfg.require_known(kSchema);
    run.out = out_dir;
    std::filesystem::create_directories(run.out);
    run.master_seed = seed;
    run.train_seed = fbsde::rng::derive_seed(run.master_seed, 1);
    run.experiment_seed = fbsde::rng::derive_seed(run.master_seed, 2);
    run.init_seed = fbsde::rng::derive_seed(run.master_seed, 3);
    run.threads = threads;
    run.timing = timing;
    run.checkpoints = checkpoints;

    if (train->parsed()) return cmd_train(run);
    if (paths->parsed()) return cmd_paths(run);
    if (loss_scan->parsed()) return cmd_loss_scan(run);
    if (var_scan->parsed()) return cmd_variance_scan(run);
    if (diag->parsed()) return cmd_loss_diagnostics(run);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const fbsde::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
