#pragma once

#include <cstdint>
#include <vector>

namespace fbsde::autodiff {

class Tape;

/// Handle to one scalar node on a Tape. Copies are cheap; arithmetic on
/// Vars records nodes so a later reverse sweep can differentiate any scalar
/// result with respect to any leaf.
class Var {
 public:
  Var() = default;
  double value() const { return val_; }
  Tape* tape() const { return tape_; }
  std::uint32_t index() const { return idx_; }

 private:
  friend class Tape;
  Var(Tape* t, std::uint32_t i, double v) : tape_(t), idx_(i), val_(v) {}
  Tape* tape_ = nullptr;
  std::uint32_t idx_ = 0;
  double val_ = 0.0;
};

class Tape {
 public:
  Var leaf(double value) { return record(value, kNone, 0.0, kNone, 0.0); }

  std::size_t size() const { return nodes_.size(); }

  // Adjoints of `output` with respect to every node, by one reverse sweep.
  std::vector<double> gradient(const Var& output) const;

  Var add(const Var& a, const Var& b) { return record(a.val_ + b.val_, a.idx_, 1.0, b.idx_, 1.0); }
  Var add(const Var& a, double b) { return record(a.val_ + b, a.idx_, 1.0, kNone, 0.0); }
  Var sub(const Var& a, const Var& b) { return record(a.val_ - b.val_, a.idx_, 1.0, b.idx_, -1.0); }
  Var sub(double a, const Var& b) { return record(a - b.val_, b.idx_, -1.0, kNone, 0.0); }
  Var mul(const Var& a, const Var& b) { return record(a.val_ * b.val_, a.idx_, b.val_, b.idx_, a.val_); }
  Var mul(const Var& a, double b) { return record(a.val_ * b, a.idx_, b, kNone, 0.0); }
  Var div(const Var& a, const Var& b) {
    const double inv = 1.0 / b.val_;
    return record(a.val_ * inv, a.idx_, inv, b.idx_, -a.val_ * inv * inv);
  }
  Var neg(const Var& a) { return record(-a.val_, a.idx_, -1.0, kNone, 0.0); }
  Var tanh(const Var& a);
  Var sin(const Var& a);
  Var cos(const Var& a);
  Var exp(const Var& a);
  Var square(const Var& a) { return record(a.val_ * a.val_, a.idx_, 2.0 * a.val_, kNone, 0.0); }
  // max(a, 0) with the right-derivative convention at the kink.
  Var relu(const Var& a) { return record(a.val_ >= 0.0 ? a.val_ : 0.0, a.idx_, a.val_ >= 0.0 ? 1.0 : 0.0, kNone, 0.0); }

 private:
  static constexpr std::uint32_t kNone = 0xFFFFFFFFu;
  struct Node {
    std::uint32_t a, b;
    double da, db;
  };
  Var record(double value, std::uint32_t a, double da, std::uint32_t b, double db);
  std::vector<Node> nodes_;
};

inline Var operator+(const Var& a, const Var& b) { return a.tape()->add(a, b); }
inline Var operator+(const Var& a, double b) { return a.tape()->add(a, b); }
inline Var operator+(double a, const Var& b) { return b.tape()->add(b, a); }
inline Var operator-(const Var& a, const Var& b) { return a.tape()->sub(a, b); }
inline Var operator-(const Var& a, double b) { return a.tape()->add(a, -b); }
inline Var operator-(double a, const Var& b) { return b.tape()->sub(a, b); }
inline Var operator-(const Var& a) { return a.tape()->neg(a); }
inline Var operator*(const Var& a, const Var& b) { return a.tape()->mul(a, b); }
inline Var operator*(const Var& a, double b) { return a.tape()->mul(a, b); }
inline Var operator*(double a, const Var& b) { return b.tape()->mul(b, a); }
inline Var operator/(const Var& a, const Var& b) { return a.tape()->div(a, b); }
inline Var operator/(const Var& a, double b) { return a.tape()->mul(a, 1.0 / b); }
inline Var tanh(const Var& a) { return a.tape()->tanh(a); }
inline Var sin(const Var& a) { return a.tape()->sin(a); }
inline Var cos(const Var& a) { return a.tape()->cos(a); }
inline Var exp(const Var& a) { return a.tape()->exp(a); }
inline Var square(const Var& a) { return a.tape()->square(a); }
inline Var relu(const Var& a) { return a.tape()->relu(a); }

}  // namespace fbsde::autodiff
