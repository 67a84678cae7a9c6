#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fbsde/autodiff.hpp"

namespace fbsde {

enum class Activation { Tanh, Sine, ReLU, Identity };

/// Scalar-output MLP u_hat(t, x; theta) on the concatenated input (t, x).
/// Hidden layers use `activation`; the output layer is linear. Evaluation
/// is read-only on the parameters and safe to run concurrently.
struct Mlp {
  std::vector<int> dims;  // {d+1, hidden..., 1}
  Activation activation = Activation::Tanh;
  std::vector<double> params;  // per layer: W row-major, then b

  struct Layer {
    std::size_t w = 0, b = 0;  // offsets into params
    int rows = 0, cols = 0;
  };
  std::vector<Layer> layout;

  int input_dim() const { return dims.front(); }
  int state_dim() const { return dims.front() - 1; }
  std::size_t layer_count() const { return dims.size() - 1; }
  std::size_t param_count() const { return params.size(); }
  std::size_t hidden_units() const;
  void rebuild_layout();
};

struct MlpOptions {
  std::vector<int> hidden{32, 32, 32, 32};
  Activation activation = Activation::Tanh;
  std::uint64_t init_seed = 1;
  // Input normalisation, folded into the first-layer initialisation so the
  // parameter vector stays self-contained (checkpoints need no extra state).
  double t_scale = 1.0;
  double x_scale = 1.0;
};

Mlp make_mlp(int state_dim, const MlpOptions& opts = {});

/// Scratch buffers for one evaluation thread.
struct MlpWorkspace {
  std::vector<double> cache;        // h0, (z_l, h_l)..., y
  std::vector<double> buf_a, buf_b, buf_c, buf_d;
  std::vector<double> zdot, hdot;   // flattened per hidden layer
  void resize_for(const Mlp& net);
};

std::size_t forward_cache_size(const Mlp& net);

// Evaluates the network and fills `cache` (size forward_cache_size) with
// all intermediate activations for later gradient sweeps.
double forward_cached(const Mlp& net, double t, std::span<const double> x, double* cache);

double forward(const Mlp& net, double t, std::span<const double> x, MlpWorkspace& ws);

// Exact (du/dt, grad_x u) by a reverse sweep over the cached forward pass.
void input_gradient_cached(const Mlp& net, const double* cache, MlpWorkspace& ws,
                           double& du_dt, std::span<double> grad_x);
void input_gradient(const Mlp& net, double t, std::span<const double> x, MlpWorkspace& ws,
                    double& du_dt, std::span<double> grad_x);

// Exact spatial Hessian (d x d, row-major) by forward-over-reverse, one
// tangent direction per column. Requires a twice-differentiable activation.
void input_hessian(const Mlp& net, double t, std::span<const double> x, MlpWorkspace& ws,
                   std::span<double> hess);

// Accumulates d(value_adj * u + sum_i grad_adj[i] * du/ds_i)/dtheta into
// grad_out, where s = (t, x) is the network input and `cache` holds the
// forward pass at that point. This is the exact double-backprop used by the
// fast training path; grad_adj has input_dim entries (t component first).
void backprop_point(const Mlp& net, const double* cache, double value_adj,
                    std::span<const double> grad_adj, MlpWorkspace& ws, std::span<double> grad_out);

// --- parameter-space training utilities ---

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamOptions opts;
  std::vector<double> m, v;
  std::uint64_t step = 0;
};

AdamState make_adam(std::size_t param_count, const AdamOptions& opts = {});
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

// --- checkpoint io ---
// Format: magic "FBNN", version u16, layer count u32, layer dims u32 each,
// activation tag u16, parameters as little-endian f64 in layer order
// (row-major weights then bias), trailing CRC32 of everything before it.
void save_checkpoint(const Mlp& net, const std::string& path);
Mlp load_checkpoint(const std::string& path);

// --- taped evaluation for general loss functionals ---

/// Mirrors an Mlp onto an autodiff tape: parameters become leaves and each
/// evaluation records the same layer recursions the fast paths use, so a
/// single reverse sweep yields exact parameter gradients of any scalar
/// assembled from the recorded values, input gradients, and Hessians.
class TapeNet {
 public:
  TapeNet(autodiff::Tape& tape, const Mlp& net);

  autodiff::Var value(double t, std::span<const double> x);

  struct ValueGrad {
    autodiff::Var value;
    autodiff::Var du_dt;
    std::vector<autodiff::Var> grad_x;
  };
  ValueGrad value_grad(double t, std::span<const double> x);

  struct ValueGradHess {
    autodiff::Var value;
    autodiff::Var du_dt;
    std::vector<autodiff::Var> grad_x;
    std::vector<autodiff::Var> hess;  // d x d row-major
  };
  ValueGradHess value_grad_hess(double t, std::span<const double> x);

  std::size_t evaluations() const { return evaluations_; }
  // Adjoints of `loss` with respect to the parameter leaves.
  std::vector<double> parameter_adjoints(const autodiff::Var& loss) const;

 private:
  struct Emitted;
  Emitted emit(double t, std::span<const double> x, bool want_grad, bool want_hess);
  autodiff::Tape* tape_;
  const Mlp* net_;
  std::vector<autodiff::Var> leaves_;
  std::size_t evaluations_ = 0;
};

struct ParameterGradient {
  double value = 0.0;
  std::vector<double> grad;
};

// Exact gradient of a scalar loss functional of taped net evaluations.
// Throws if the builder records no evaluation (empty tape).
ParameterGradient parameter_gradient(
    const Mlp& net, const std::function<autodiff::Var(autodiff::Tape&, TapeNet&)>& build_loss);

}  // namespace fbsde
