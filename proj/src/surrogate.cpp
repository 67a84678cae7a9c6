#include "fbsde/surrogate.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fbsde/rng.hpp"

namespace fbsde {

namespace {

double act(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::Sine: return std::sin(z);
    case Activation::ReLU: return z >= 0.0 ? z : 0.0;
    case Activation::Identity: return z;
  }
  return z;
}

// First derivative from the cached pre-activation z and activation h.
double act_prime(Activation a, double z, double h) {
  switch (a) {
    case Activation::Tanh: return 1.0 - h * h;
    case Activation::Sine: return std::cos(z);
    case Activation::ReLU: return z >= 0.0 ? 1.0 : 0.0;  // right derivative at the kink
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

double act_second(Activation a, double z, double h) {
  switch (a) {
    case Activation::Tanh: return -2.0 * h * (1.0 - h * h);
    case Activation::Sine: return -h;
    case Activation::ReLU: return 0.0;
    case Activation::Identity: return 0.0;
  }
  (void)z;
  return 0.0;
}

int max_width(const Mlp& net) {
  int w = 0;
  for (int d : net.dims) w = std::max(w, d);
  return w;
}

void check_input(const Mlp& net, std::span<const double> x) {
  if (static_cast<int>(x.size()) != net.state_dim())
    throw std::invalid_argument("surrogate: state dimension mismatch");
}

}  // namespace

std::size_t Mlp::hidden_units() const {
  std::size_t h = 0;
  for (std::size_t i = 1; i + 1 < dims.size(); ++i) h += static_cast<std::size_t>(dims[i]);
  return h;
}

void Mlp::rebuild_layout() {
  layout.clear();
  std::size_t off = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    l.rows = dims[i + 1];
    l.cols = dims[i];
    l.w = off;
    off += static_cast<std::size_t>(l.rows) * l.cols;
    l.b = off;
    off += static_cast<std::size_t>(l.rows);
    layout.push_back(l);
  }
  if (off != params.size()) params.resize(off, 0.0);
}

Mlp make_mlp(int state_dim, const MlpOptions& opts) {
  if (state_dim < 1) throw std::invalid_argument("surrogate: state_dim must be >= 1");
  for (int h : opts.hidden)
    if (h < 1) throw std::invalid_argument("surrogate: hidden widths must be >= 1");
  if (!(opts.t_scale > 0.0) || !(opts.x_scale > 0.0))
    throw std::invalid_argument("surrogate: input scales must be positive");

  Mlp net;
  net.dims.push_back(state_dim + 1);
  for (int h : opts.hidden) net.dims.push_back(h);
  net.dims.push_back(1);
  net.activation = opts.activation;
  net.rebuild_layout();

  // Fan-in scaled uniform init, biases zero.
  std::uint64_t counter = 0;
  for (const auto& l : net.layout) {
    const double s = 1.0 / std::sqrt(static_cast<double>(l.cols));
    for (int i = 0; i < l.rows * l.cols; ++i)
      net.params[l.w + i] = s * (2.0 * rng::uniform01(opts.init_seed, counter++) - 1.0);
  }
  // Fold the input normalisation into the first layer.
  const auto& l0 = net.layout.front();
  for (int r = 0; r < l0.rows; ++r) {
    net.params[l0.w + static_cast<std::size_t>(r) * l0.cols] /= opts.t_scale;
    for (int c = 1; c < l0.cols; ++c) net.params[l0.w + static_cast<std::size_t>(r) * l0.cols + c] /= opts.x_scale;
  }
  return net;
}

void MlpWorkspace::resize_for(const Mlp& net) {
  cache.resize(forward_cache_size(net));
  const std::size_t w = static_cast<std::size_t>(max_width(net));
  buf_a.resize(w);
  buf_b.resize(w);
  buf_c.resize(w);
  buf_d.resize(w);
  zdot.resize(net.hidden_units());
  hdot.resize(net.hidden_units() + net.input_dim());
}

std::size_t forward_cache_size(const Mlp& net) {
  return static_cast<std::size_t>(net.input_dim()) + 2 * net.hidden_units() + 1;
}

double forward_cached(const Mlp& net, double t, std::span<const double> x, double* cache) {
  check_input(net, x);
  const int in = net.input_dim();
  cache[0] = t;
  for (int i = 0; i < in - 1; ++i) cache[1 + i] = x[i];

  const double* h_prev = cache;
  double* slot = cache + in;
  const std::size_t K = net.layer_count();
  for (std::size_t li = 0; li + 1 < K; ++li) {
    const auto& l = net.layout[li];
    double* z = slot;
    double* h = slot + l.rows;
    for (int r = 0; r < l.rows; ++r) {
      const double* wr = &net.params[l.w + static_cast<std::size_t>(r) * l.cols];
      double acc = net.params[l.b + r];
      for (int c = 0; c < l.cols; ++c) acc += wr[c] * h_prev[c];
      z[r] = acc;
      h[r] = act(net.activation, acc);
    }
    h_prev = h;
    slot += 2 * l.rows;
  }
  const auto& out = net.layout.back();
  double acc = net.params[out.b];
  const double* wr = &net.params[out.w];
  for (int c = 0; c < out.cols; ++c) acc += wr[c] * h_prev[c];
  *slot = acc;
  return acc;
}

double forward(const Mlp& net, double t, std::span<const double> x, MlpWorkspace& ws) {
  ws.cache.resize(forward_cache_size(net));
  return forward_cached(net, t, x, ws.cache.data());
}

void input_gradient_cached(const Mlp& net, const double* cache, MlpWorkspace& ws,
                           double& du_dt, std::span<double> grad_x) {
  const int in = net.input_dim();
  if (static_cast<int>(grad_x.size()) != in - 1)
    throw std::invalid_argument("surrogate: gradient output size mismatch");
  const std::size_t K = net.layer_count();

  // delta = d y / d h_l, swept from the linear output layer downwards.
  double* cur = ws.buf_a.data();
  double* nxt = ws.buf_b.data();
  const auto& out = net.layout.back();
  for (int c = 0; c < out.cols; ++c) cur[c] = net.params[out.w + c];

  for (std::size_t li = K - 1; li-- > 0;) {
    const auto& l = net.layout[li];
    // offset of this layer's (z, h) block in the cache
    std::size_t off = static_cast<std::size_t>(in);
    for (std::size_t j = 0; j < li; ++j) off += 2 * static_cast<std::size_t>(net.layout[j].rows);
    const double* z = cache + off;
    const double* h = z + l.rows;
    for (int r = 0; r < l.rows; ++r) cur[r] *= act_prime(net.activation, z[r], h[r]);
    for (int c = 0; c < l.cols; ++c) {
      double acc = 0.0;
      for (int r = 0; r < l.rows; ++r) acc += net.params[l.w + static_cast<std::size_t>(r) * l.cols + c] * cur[r];
      nxt[c] = acc;
    }
    std::swap(cur, nxt);
  }
  du_dt = cur[0];
  for (int i = 0; i + 1 < in; ++i) grad_x[i] = cur[1 + i];
}

void input_gradient(const Mlp& net, double t, std::span<const double> x, MlpWorkspace& ws,
                    double& du_dt, std::span<double> grad_x) {
  ws.resize_for(net);
  forward_cached(net, t, x, ws.cache.data());
  input_gradient_cached(net, ws.cache.data(), ws, du_dt, grad_x);
}

void input_hessian(const Mlp& net, double t, std::span<const double> x, MlpWorkspace& ws,
                   std::span<double> hess) {
  if (net.activation == Activation::ReLU)
    throw std::invalid_argument("surrogate: Hessian undefined for ReLU activation");
  check_input(net, x);
  const int d = net.state_dim();
  if (static_cast<int>(hess.size()) != d * d)
    throw std::invalid_argument("surrogate: Hessian output size mismatch");
  ws.resize_for(net);
  forward_cached(net, t, x, ws.cache.data());
  const double* cache = ws.cache.data();
  const int in = net.input_dim();
  const std::size_t K = net.layer_count();

  for (int col = 0; col < d; ++col) {
    // Tangent pass along e_{col+1}: zdot_l, hdot_l per hidden layer.
    double* hdot_prev = ws.hdot.data();
    for (int i = 0; i < in; ++i) hdot_prev[i] = (i == col + 1) ? 1.0 : 0.0;
    std::size_t flat = 0;
    std::size_t off = static_cast<std::size_t>(in);
    for (std::size_t li = 0; li + 1 < K; ++li) {
      const auto& l = net.layout[li];
      const double* z = cache + off;
      const double* h = z + l.rows;
      double* zd = ws.zdot.data() + flat;
      double* hd = ws.hdot.data() + in + flat;
      for (int r = 0; r < l.rows; ++r) {
        const double* wr = &net.params[l.w + static_cast<std::size_t>(r) * l.cols];
        double acc = 0.0;
        for (int c = 0; c < l.cols; ++c) acc += wr[c] * hdot_prev[c];
        zd[r] = acc;
        hd[r] = act_prime(net.activation, z[r], h[r]) * acc;
      }
      hdot_prev = hd;
      flat += static_cast<std::size_t>(l.rows);
      off += 2 * static_cast<std::size_t>(l.rows);
    }

    // Joint reverse sweep for gamma (gradient) and gamma-dot (its tangent).
    double* g_cur = ws.buf_a.data();
    double* g_nxt = ws.buf_b.data();
    double* gd_cur = ws.buf_c.data();
    double* gd_nxt = ws.buf_d.data();
    const auto& outl = net.layout.back();
    for (int c = 0; c < outl.cols; ++c) {
      g_cur[c] = net.params[outl.w + c];
      gd_cur[c] = 0.0;
    }
    for (std::size_t li = K - 1; li-- > 0;) {
      const auto& l = net.layout[li];
      std::size_t o2 = static_cast<std::size_t>(in);
      std::size_t f2 = 0;
      for (std::size_t j = 0; j < li; ++j) {
        o2 += 2 * static_cast<std::size_t>(net.layout[j].rows);
        f2 += static_cast<std::size_t>(net.layout[j].rows);
      }
      const double* z = cache + o2;
      const double* h = z + l.rows;
      const double* zd = ws.zdot.data() + f2;
      for (int r = 0; r < l.rows; ++r) {
        const double sp = act_prime(net.activation, z[r], h[r]);
        const double spp = act_second(net.activation, z[r], h[r]);
        const double e = sp * g_cur[r];
        const double ed = spp * zd[r] * g_cur[r] + sp * gd_cur[r];
        g_cur[r] = e;
        gd_cur[r] = ed;
      }
      for (int c = 0; c < l.cols; ++c) {
        double acc = 0.0, accd = 0.0;
        for (int r = 0; r < l.rows; ++r) {
          const double w = net.params[l.w + static_cast<std::size_t>(r) * l.cols + c];
          acc += w * g_cur[r];
          accd += w * gd_cur[r];
        }
        g_nxt[c] = acc;
        gd_nxt[c] = accd;
      }
      std::swap(g_cur, g_nxt);
      std::swap(gd_cur, gd_nxt);
    }
    for (int row = 0; row < d; ++row) hess[static_cast<std::size_t>(row) * d + col] = gd_cur[1 + row];
  }
}

void backprop_point(const Mlp& net, const double* cache, double value_adj,
                    std::span<const double> grad_adj, MlpWorkspace& ws, std::span<double> grad_out) {
  const int in = net.input_dim();
  if (static_cast<int>(grad_adj.size()) != in)
    throw std::invalid_argument("surrogate: grad_adj must have input_dim entries");
  if (grad_out.size() != net.param_count())
    throw std::invalid_argument("surrogate: grad_out size mismatch");
  const std::size_t K = net.layer_count();

  // Tangent pass along v = grad_adj: v . grad u equals the output tangent.
  const double* hdot_prev = grad_adj.data();
  {
    std::size_t flat = 0;
    std::size_t off = static_cast<std::size_t>(in);
    for (std::size_t li = 0; li + 1 < K; ++li) {
      const auto& l = net.layout[li];
      const double* z = cache + off;
      const double* h = z + l.rows;
      double* zd = ws.zdot.data() + flat;
      double* hd = ws.hdot.data() + in + flat;
      for (int r = 0; r < l.rows; ++r) {
        const double* wr = &net.params[l.w + static_cast<std::size_t>(r) * l.cols];
        double acc = 0.0;
        for (int c = 0; c < l.cols; ++c) acc += wr[c] * hdot_prev[c];
        zd[r] = acc;
        hd[r] = act_prime(net.activation, z[r], h[r]) * acc;
      }
      hdot_prev = hd;
      flat += static_cast<std::size_t>(l.rows);
      off += 2 * static_cast<std::size_t>(l.rows);
    }
  }

  // Reverse sweep with two adjoint streams: p = dL/dh, q = dL/dhdot.
  double* p_cur = ws.buf_a.data();
  double* q_cur = ws.buf_b.data();
  double* p_nxt = ws.buf_c.data();
  double* q_nxt = ws.buf_d.data();

  const auto& outl = net.layout.back();
  {
    // h entering the output layer and its tangent
    const double* h_last;
    std::size_t off = static_cast<std::size_t>(in);
    if (K >= 2) {
      for (std::size_t j = 0; j + 1 < K - 1; ++j) off += 2 * static_cast<std::size_t>(net.layout[j].rows);
      h_last = cache + off + net.layout[K - 2].rows;
    } else {
      h_last = cache;  // single linear layer: input feeds the output directly
    }
    const double* hd_last = hdot_prev;
    for (int c = 0; c < outl.cols; ++c) {
      grad_out[outl.w + c] += value_adj * h_last[c] + hd_last[c];
      p_cur[c] = value_adj * net.params[outl.w + c];
      q_cur[c] = net.params[outl.w + c];
    }
    grad_out[outl.b] += value_adj;
  }

  for (std::size_t li = K - 1; li-- > 0;) {
    const auto& l = net.layout[li];
    std::size_t off = static_cast<std::size_t>(in);
    std::size_t flat = 0;
    for (std::size_t j = 0; j < li; ++j) {
      off += 2 * static_cast<std::size_t>(net.layout[j].rows);
      flat += static_cast<std::size_t>(net.layout[j].rows);
    }
    const double* z = cache + off;
    const double* h = z + l.rows;
    const double* zd = ws.zdot.data() + flat;
    const double* h_prev = li == 0 ? cache : cache + off - net.layout[li - 1].rows;
    const double* hd_prev = li == 0 ? grad_adj.data() : ws.hdot.data() + in + flat - net.layout[li - 1].rows;

    // r = sp . q (adjoint of zdot), s = spp . zdot . q + sp . p (adjoint of z)
    for (int r = 0; r < l.rows; ++r) {
      const double sp = act_prime(net.activation, z[r], h[r]);
      const double spp = act_second(net.activation, z[r], h[r]);
      const double rq = sp * q_cur[r];
      const double sz = spp * zd[r] * q_cur[r] + sp * p_cur[r];
      double* gw = &grad_out[l.w + static_cast<std::size_t>(r) * l.cols];
      for (int c = 0; c < l.cols; ++c) gw[c] += sz * h_prev[c] + rq * hd_prev[c];
      grad_out[l.b + r] += sz;
      p_cur[r] = sz;  // reuse as scratch holding s
      q_cur[r] = rq;  // reuse as scratch holding r
    }
    for (int c = 0; c < l.cols; ++c) {
      double ap = 0.0, aq = 0.0;
      for (int r = 0; r < l.rows; ++r) {
        const double w = net.params[l.w + static_cast<std::size_t>(r) * l.cols + c];
        ap += w * p_cur[r];
        aq += w * q_cur[r];
      }
      p_nxt[c] = ap;
      q_nxt[c] = aq;
    }
    std::swap(p_cur, p_nxt);
    std::swap(q_cur, q_nxt);
  }
}

AdamState make_adam(std::size_t param_count, const AdamOptions& opts) {
  AdamState s;
  s.opts = opts;
  s.m.assign(param_count, 0.0);
  s.v.assign(param_count, 0.0);
  return s;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != state.m.size() || grads.size() != state.m.size())
    throw std::invalid_argument("adam: parameter/gradient shape mismatch");
  for (double g : grads)
    if (!std::isfinite(g)) throw std::runtime_error("adam: non-finite gradient");
  state.step += 1;
  const double b1 = state.opts.beta1, b2 = state.opts.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= state.opts.learning_rate * mhat / (std::sqrt(vhat) + state.opts.epsilon);
  }
}

// --- checkpoint io ---

namespace {

std::uint32_t crc32(const unsigned char* data, std::size_t n) {
  static std::uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

template <typename T>
void append(std::vector<unsigned char>& buf, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  buf.insert(buf.end(), b, b + sizeof(T));
}

template <typename T>
T read_at(const std::vector<unsigned char>& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void save_checkpoint(const Mlp& net, const std::string& path) {
  std::vector<unsigned char> buf;
  buf.insert(buf.end(), {'F', 'B', 'N', 'N'});
  append<std::uint16_t>(buf, 1);
  append<std::uint32_t>(buf, static_cast<std::uint32_t>(net.dims.size()));
  for (int d : net.dims) append<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
  append<std::uint16_t>(buf, static_cast<std::uint16_t>(net.activation));
  for (double p : net.params) append<double>(buf, p);
  append<std::uint32_t>(buf, crc32(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Mlp load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < 4 || std::memcmp(buf.data(), "FBNN", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic bytes in '" + path + "'");
  if (buf.size() < 8) throw std::runtime_error("checkpoint: truncated file");
  const std::uint32_t stored = [&] {
    std::uint32_t v;
    std::memcpy(&v, buf.data() + buf.size() - 4, 4);
    return v;
  }();
  if (crc32(buf.data(), buf.size() - 4) != stored)
    throw std::runtime_error("checkpoint: CRC mismatch in '" + path + "'");

  std::size_t pos = 4;
  const auto version = read_at<std::uint16_t>(buf, pos);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported format version");
  const auto ndims = read_at<std::uint32_t>(buf, pos);
  if (ndims < 2 || ndims > 64) throw std::runtime_error("checkpoint: implausible layer count");
  Mlp net;
  net.dims.resize(ndims);
  for (auto& d : net.dims) {
    const auto v = read_at<std::uint32_t>(buf, pos);
    if (v < 1 || v > 1u << 20) throw std::runtime_error("checkpoint: implausible layer width");
    d = static_cast<int>(v);
  }
  const auto tag = read_at<std::uint16_t>(buf, pos);
  if (tag > 3) throw std::runtime_error("checkpoint: unknown activation tag");
  net.activation = static_cast<Activation>(tag);
  if (net.dims.back() != 1) throw std::runtime_error("checkpoint: output dimension must be 1");

  net.rebuild_layout();
  const std::size_t want = net.param_count();
  if (buf.size() - 4 - pos != want * sizeof(double))
    throw std::runtime_error("checkpoint: parameter block size mismatch");
  for (auto& p : net.params) p = read_at<double>(buf, pos);
  for (double p : net.params)
    if (!std::isfinite(p)) throw std::runtime_error("checkpoint: non-finite parameter");
  return net;
}

// --- TapeNet ---

struct TapeNet::Emitted {
  autodiff::Var value;
  std::vector<autodiff::Var> grad;   // input_dim entries
  std::vector<autodiff::Var> hess;   // d*d entries when requested
};

TapeNet::TapeNet(autodiff::Tape& tape, const Mlp& net) : tape_(&tape), net_(&net) {
  leaves_.reserve(net.param_count());
  for (double p : net.params) leaves_.push_back(tape.leaf(p));
}

TapeNet::Emitted TapeNet::emit(double t, std::span<const double> x, bool want_grad, bool want_hess) {
  check_input(*net_, x);
  const Mlp& net = *net_;
  autodiff::Tape& tp = *tape_;
  const int in = net.input_dim();
  const std::size_t K = net.layer_count();
  const Activation a = net.activation;
  if (want_hess && a == Activation::ReLU)
    throw std::invalid_argument("surrogate: Hessian undefined for ReLU activation");

  auto W = [&](std::size_t li, int r, int c) -> const autodiff::Var& {
    const auto& l = net.layout[li];
    return leaves_[l.w + static_cast<std::size_t>(r) * l.cols + c];
  };
  auto B = [&](std::size_t li, int r) -> const autodiff::Var& { return leaves_[net.layout[li].b + r]; };

  std::vector<autodiff::Var> h_prev;
  h_prev.reserve(in);
  h_prev.push_back(tp.leaf(t));
  for (double xi : x) h_prev.push_back(tp.leaf(xi));

  // forward, keeping z and h per hidden layer
  std::vector<std::vector<autodiff::Var>> zs(K > 0 ? K - 1 : 0), hs(K > 0 ? K - 1 : 0);
  for (std::size_t li = 0; li + 1 < K; ++li) {
    const auto& l = net.layout[li];
    zs[li].reserve(l.rows);
    hs[li].reserve(l.rows);
    for (int r = 0; r < l.rows; ++r) {
      autodiff::Var acc = B(li, r);
      for (int c = 0; c < l.cols; ++c) acc = acc + W(li, r, c) * h_prev[c];
      zs[li].push_back(acc);
      switch (a) {
        case Activation::Tanh: hs[li].push_back(tanh(acc)); break;
        case Activation::Sine: hs[li].push_back(sin(acc)); break;
        case Activation::ReLU: hs[li].push_back(relu(acc)); break;
        case Activation::Identity: hs[li].push_back(acc); break;
      }
    }
    h_prev = hs[li];
  }
  autodiff::Var y = B(K - 1, 0);
  for (int c = 0; c < net.layout.back().cols; ++c) y = y + W(K - 1, 0, c) * h_prev[c];

  Emitted out{y, {}, {}};
  ++evaluations_;
  if (!want_grad && !want_hess) return out;

  auto sigma_prime = [&](std::size_t li, int r) -> autodiff::Var {
    switch (a) {
      case Activation::Tanh: return 1.0 - square(hs[li][r]);
      case Activation::Sine: return cos(zs[li][r]);
      case Activation::ReLU: return tp.leaf(zs[li][r].value() >= 0.0 ? 1.0 : 0.0);
      case Activation::Identity: return tp.leaf(1.0);
    }
    return tp.leaf(1.0);
  };
  auto sigma_second = [&](std::size_t li, int r) -> autodiff::Var {
    switch (a) {
      case Activation::Tanh: return -2.0 * hs[li][r] * (1.0 - square(hs[li][r]));
      case Activation::Sine: return -hs[li][r];
      default: return tp.leaf(0.0);
    }
  };

  // reverse sweep: gamma = dy/dh_l, down to the input
  std::vector<autodiff::Var> gamma;
  gamma.reserve(net.layout.back().cols);
  for (int c = 0; c < net.layout.back().cols; ++c) gamma.push_back(W(K - 1, 0, c));
  std::vector<std::vector<autodiff::Var>> e_store(K > 0 ? K - 1 : 0);
  for (std::size_t li = K - 1; li-- > 0;) {
    const auto& l = net.layout[li];
    std::vector<autodiff::Var> e;
    e.reserve(l.rows);
    for (int r = 0; r < l.rows; ++r) e.push_back(sigma_prime(li, r) * gamma[r]);
    e_store[li] = e;
    std::vector<autodiff::Var> g_next;
    g_next.reserve(l.cols);
    for (int c = 0; c < l.cols; ++c) {
      autodiff::Var acc = W(li, 0, c) * e[0];
      for (int r = 1; r < l.rows; ++r) acc = acc + W(li, r, c) * e[r];
      g_next.push_back(acc);
    }
    gamma = g_next;
  }
  out.grad = gamma;

  if (!want_hess) return out;

  const int d = net.state_dim();
  out.hess.reserve(static_cast<std::size_t>(d) * d);
  std::vector<autodiff::Var> hess_flat(static_cast<std::size_t>(d) * d, tp.leaf(0.0));
  for (int col = 0; col < d; ++col) {
    // tangent along e_{col+1}
    std::vector<autodiff::Var> hdot;
    hdot.reserve(in);
    for (int i = 0; i < in; ++i) hdot.push_back(tp.leaf(i == col + 1 ? 1.0 : 0.0));
    std::vector<std::vector<autodiff::Var>> zdot(K > 0 ? K - 1 : 0);
    for (std::size_t li = 0; li + 1 < K; ++li) {
      const auto& l = net.layout[li];
      std::vector<autodiff::Var> zd, hd;
      zd.reserve(l.rows);
      hd.reserve(l.rows);
      for (int r = 0; r < l.rows; ++r) {
        autodiff::Var acc = W(li, r, 0) * hdot[0];
        for (int c = 1; c < l.cols; ++c) acc = acc + W(li, r, c) * hdot[c];
        zd.push_back(acc);
        hd.push_back(sigma_prime(li, r) * acc);
      }
      zdot[li] = zd;
      hdot = hd;
    }
    // tangent of the reverse sweep
    std::vector<autodiff::Var> g, gd;
    for (int c = 0; c < net.layout.back().cols; ++c) {
      g.push_back(W(K - 1, 0, c));
      gd.push_back(tp.leaf(0.0));
    }
    for (std::size_t li = K - 1; li-- > 0;) {
      const auto& l = net.layout[li];
      std::vector<autodiff::Var> e, ed;
      e.reserve(l.rows);
      ed.reserve(l.rows);
      for (int r = 0; r < l.rows; ++r) {
        e.push_back(sigma_prime(li, r) * g[r]);
        ed.push_back(sigma_second(li, r) * zdot[li][r] * g[r] + sigma_prime(li, r) * gd[r]);
      }
      std::vector<autodiff::Var> g_next, gd_next;
      g_next.reserve(l.cols);
      gd_next.reserve(l.cols);
      for (int c = 0; c < l.cols; ++c) {
        autodiff::Var acc = W(li, 0, c) * e[0];
        autodiff::Var accd = W(li, 0, c) * ed[0];
        for (int r = 1; r < l.rows; ++r) {
          acc = acc + W(li, r, c) * e[r];
          accd = accd + W(li, r, c) * ed[r];
        }
        g_next.push_back(acc);
        gd_next.push_back(accd);
      }
      g = g_next;
      gd = gd_next;
    }
    for (int row = 0; row < d; ++row) hess_flat[static_cast<std::size_t>(row) * d + col] = gd[1 + row];
  }
  out.hess = hess_flat;
  return out;
}

autodiff::Var TapeNet::value(double t, std::span<const double> x) { return emit(t, x, false, false).value; }

TapeNet::ValueGrad TapeNet::value_grad(double t, std::span<const double> x) {
  Emitted e = emit(t, x, true, false);
  ValueGrad vg{e.value, e.grad[0], {}};
  vg.grad_x.assign(e.grad.begin() + 1, e.grad.end());
  return vg;
}

TapeNet::ValueGradHess TapeNet::value_grad_hess(double t, std::span<const double> x) {
  Emitted e = emit(t, x, true, true);
  ValueGradHess vg{e.value, e.grad[0], {}, e.hess};
  vg.grad_x.assign(e.grad.begin() + 1, e.grad.end());
  return vg;
}

std::vector<double> TapeNet::parameter_adjoints(const autodiff::Var& loss) const {
  const std::vector<double> adj = tape_->gradient(loss);
  std::vector<double> out(leaves_.size());
  for (std::size_t i = 0; i < leaves_.size(); ++i) out[i] = adj[leaves_[i].index()];
  return out;
}

ParameterGradient parameter_gradient(
    const Mlp& net, const std::function<autodiff::Var(autodiff::Tape&, TapeNet&)>& build_loss) {
  autodiff::Tape tape;
  TapeNet tn(tape, net);
  autodiff::Var loss = build_loss(tape, tn);
  if (tn.evaluations() == 0)
    throw std::invalid_argument("surrogate: loss recorded no network evaluations (empty tape)");
  ParameterGradient out;
  out.value = loss.value();
  out.grad = tn.parameter_adjoints(loss);
  return out;
}

}  // namespace fbsde
