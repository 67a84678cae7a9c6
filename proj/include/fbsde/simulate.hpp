#pragma once

#include <functional>
#include <span>
#include <vector>

#include "fbsde/brownian.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/timegrid.hpp"

namespace fbsde {

enum class Track { ExactU, Surrogate };

/// Discrete (X, Y, Z) states for M paths over a grid, for up to two tracks:
/// one stepped with the exact solution u, one with the surrogate u_hat.
/// Both tracks are driven by the same increments and share X at t = 0.
struct PathBundle {
  TimeGrid grid;
  std::size_t paths = 0;
  int dim = 1;

  struct TrackData {
    bool present = false;
    std::vector<double> x;  // M*(N+1)*d
    std::vector<double> y;  // M*(N+1)
    std::vector<double> z;  // M*(N+1)*d
  };
  TrackData exact_u;
  TrackData surrogate;

  const TrackData& track(Track t) const { return t == Track::ExactU ? exact_u : surrogate; }
  TrackData& track(Track t) { return t == Track::ExactU ? exact_u : surrogate; }

  std::size_t nodes() const { return grid.points.size(); }
  const double* x_at(Track t, std::size_t m, std::size_t n) const {
    return &track(t).x[(m * nodes() + n) * dim];
  }
  double y_at(Track t, std::size_t m, std::size_t n) const { return track(t).y[m * nodes() + n]; }
  const double* z_at(Track t, std::size_t m, std::size_t n) const {
    return &track(t).z[(m * nodes() + n) * dim];
  }
};

// One Euler-Maruyama step of the forward process:
// X + a(t,X,Y,Z) dt + b(t,X,Y) dW.
void em_forward_step(const ProblemSpec& spec, double t, std::span<const double> x, double y,
                     std::span<const double> z, double dt, std::span<const double> dw,
                     std::span<double> x_next);

// One Euler-Maruyama step of the backward process:
// Y + phi(t,X,Y,Z) dt + Z . dW.
double em_backward_step(const ProblemSpec& spec, double t, std::span<const double> x, double y,
                        std::span<const double> z, double dt, std::span<const double> dw);

// One Milstein step for a decoupled scalar forward process; the (t,x)-only
// signature keeps coupled drift/diffusion unrepresentable here.
double milstein_step_1d(const std::function<double(double, double)>& a,
                        const std::function<double(double, double)>& b,
                        const std::function<double(double, double)>& db_dx, double t, double x,
                        double dt, double dw);

struct InitialStates {
  double y0 = 0.0;
  std::vector<double> z0;
};

// Adapted initial values Y0 = u(0,X0), Z0 = b(0,X0)^T grad u(0,X0); uses the
// surrogate when `net` is given, else the problem's exact solution.
InitialStates init_states(const ProblemSpec& spec, const Mlp* net, std::span<const double> x0);

struct GenerateOptions {
  bool exact_track = true;
  bool surrogate_track = true;
  int threads = 1;
};

// Dual-track path generation: both tracks step X with Euler-Maruyama and
// set Y and Z at every node (including the terminal one) from u or u_hat.
// Aborts with a path/step diagnostic if a state turns non-finite.
PathBundle generate_paths(const ProblemSpec& spec, const TimeGrid& grid, const IncrementSet& incs,
                          const Mlp* net, const GenerateOptions& opts = {});

// CSV dump with columns path,step,t,track,X...,Y,Z...
void write_paths_csv(const PathBundle& bundle, const std::string& path);

}  // namespace fbsde
