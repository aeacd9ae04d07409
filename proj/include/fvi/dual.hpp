#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fvi/errors.hpp"
#include "fvi/linalg.hpp"

namespace fvi {

// Forward-mode scalar carrying an optional gradient and an optional dense
// Hessian with respect to a fixed set of seed variables. All derivatives are
// exact (no truncation error beyond roundoff). Seed size is a runtime
// quantity; an empty gradient marks a constant. Hessian propagation is
// enabled by seeding with `second_order = true` and is carried through every
// operation that touches a seeded value.
class Dual {
 public:
  Dual() = default;
  Dual(double v) : v_(v) {}  // NOLINT: implicit by design, constants mix freely

  static Dual variable(double value, std::size_t index, std::size_t n_vars,
                       bool second_order);

  double value() const { return v_; }
  std::size_t nvars() const { return g_.size(); }
  bool second_order() const { return !h_.empty(); }
  double deriv(std::size_t i) const { return g_.empty() ? 0.0 : g_[i]; }
  double deriv2(std::size_t i, std::size_t j) const {
    return h_.empty() ? 0.0 : h_[i * g_.size() + j];
  }

  bool finite() const;

  Dual& operator+=(const Dual& b);
  Dual& operator-=(const Dual& b);
  Dual& operator*=(const Dual& b) { return *this = *this * b; }
  Dual& operator/=(const Dual& b) { return *this = *this / b; }

  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend Dual operator-(Dual a);
  friend Dual operator*(const Dual& a, const Dual& b);
  friend Dual operator/(const Dual& a, const Dual& b);

  friend Dual operator+(Dual a, double s) { a.v_ += s; return a; }
  friend Dual operator+(double s, Dual a) { a.v_ += s; return a; }
  friend Dual operator-(Dual a, double s) { a.v_ -= s; return a; }
  friend Dual operator-(double s, const Dual& a) { return s + (-a); }
  friend Dual operator*(Dual a, double s);
  friend Dual operator*(double s, Dual a) { return std::move(a) * s; }
  friend Dual operator/(Dual a, double s) { return std::move(a) * (1.0 / s); }
  friend Dual operator/(double s, const Dual& a);

  friend bool operator<(const Dual& a, const Dual& b) { return a.v_ < b.v_; }
  friend bool operator>(const Dual& a, const Dual& b) { return a.v_ > b.v_; }
  friend bool operator<=(const Dual& a, const Dual& b) { return a.v_ <= b.v_; }
  friend bool operator>=(const Dual& a, const Dual& b) { return a.v_ >= b.v_; }

  // Univariate chain rule: maps x to f(x) given f(x0), f'(x0), f''(x0).
  friend Dual chain(const Dual& x, double f0, double f1, double f2);

 private:
  double v_ = 0.0;
  std::vector<double> g_;
  std::vector<double> h_;  // row-major nvars x nvars
};

using DualSpan = std::span<const Dual>;
using DVec = std::vector<Dual>;

Dual sin(const Dual& x);
Dual cos(const Dual& x);
Dual tan(const Dual& x);
Dual exp(const Dual& x);
Dual log(const Dual& x);
Dual sqrt(const Dual& x);
Dual sinh(const Dual& x);
Dual cosh(const Dual& x);
Dual tanh(const Dual& x);
Dual pow(const Dual& x, double e);
Dual pow(const Dual& x, int e);

// Seed an input vector, first-order only or with Hessian tracking.
DVec seed(ConstSpan x, bool second_order);

struct SecondOrder {
  double value = 0.0;
  Vec grad;
  Mat hess;
};

namespace detail {
inline void check_finite_value(const Dual& y, const char* where) {
  if (!y.finite()) throw NonFinite(where);
}
}  // namespace detail

// Exact gradient of a scalar function f : R^m -> R. Throws NonFinite when the
// value or any partial is not finite.
template <class F>
Vec gradient(F&& f, ConstSpan x) {
  DVec xd = seed(x, false);
  Dual y = f(DualSpan(xd));
  detail::check_finite_value(y, "gradient");
  Vec g(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size() && i < y.nvars(); ++i) g[i] = y.deriv(i);
  return g;
}

template <class F>
std::pair<double, Vec> value_and_gradient(F&& f, ConstSpan x) {
  DVec xd = seed(x, false);
  Dual y = f(DualSpan(xd));
  detail::check_finite_value(y, "gradient");
  Vec g(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size() && i < y.nvars(); ++i) g[i] = y.deriv(i);
  return {y.value(), std::move(g)};
}

// Value, gradient and Hessian of f in one pass.
template <class F>
SecondOrder second_order(F&& f, ConstSpan x) {
  const std::size_t m = x.size();
  DVec xd = seed(x, true);
  Dual y = f(DualSpan(xd));
  detail::check_finite_value(y, "hessian");
  SecondOrder out;
  out.value = y.value();
  out.grad.assign(m, 0.0);
  out.hess = Mat(m, m);
  if (y.nvars() == m) {
    for (std::size_t i = 0; i < m; ++i) {
      out.grad[i] = y.deriv(i);
      for (std::size_t j = 0; j < m; ++j) out.hess(i, j) = y.deriv2(i, j);
    }
  }
  return out;
}

template <class F>
Mat hessian(F&& f, ConstSpan x) {
  return second_order(std::forward<F>(f), x).hess;
}

// Exact Jacobian of g : R^m -> R^k (rows are components of g).
template <class G>
Mat jacobian(G&& g, ConstSpan x) {
  const std::size_t m = x.size();
  DVec xd = seed(x, false);
  DVec y = g(DualSpan(xd));
  Mat jac(y.size(), m);
  for (std::size_t r = 0; r < y.size(); ++r) {
    detail::check_finite_value(y[r], "jacobian");
    if (y[r].nvars() == m)
      for (std::size_t j = 0; j < m; ++j) jac(r, j) = y[r].deriv(j);
  }
  return jac;
}

}  // namespace fvi
