#include "fbsde/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace fbsde::autodiff {

Var Tape::record(double value, std::uint32_t a, double da, std::uint32_t b, double db) {
  nodes_.push_back(Node{a, b, da, db});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1), value);
}

Var Tape::tanh(const Var& a) {
  const double h = std::tanh(a.value());
  return record(h, a.index(), 1.0 - h * h, kNone, 0.0);
}

Var Tape::sin(const Var& a) {
  return record(std::sin(a.value()), a.index(), std::cos(a.value()), kNone, 0.0);
}

Var Tape::cos(const Var& a) {
  return record(std::cos(a.value()), a.index(), -std::sin(a.value()), kNone, 0.0);
}

Var Tape::exp(const Var& a) {
  const double e = std::exp(a.value());
  return record(e, a.index(), e, kNone, 0.0);
}

std::vector<double> Tape::gradient(const Var& output) const {
  if (output.tape() != this) throw std::invalid_argument("autodiff: output lives on a different tape");
  std::vector<double> adj(nodes_.size(), 0.0);
  adj[output.index()] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    const Node& n = nodes_[i];
    const double a = adj[i];
    if (a == 0.0) continue;
    if (n.a != kNone) adj[n.a] += n.da * a;
    if (n.b != kNone) adj[n.b] += n.db * a;
  }
  return adj;
}

}  // namespace fbsde::autodiff
