#include "fvi/dual.hpp"

#include <algorithm>
#include <cmath>

namespace fvi {

namespace {

// y += a*x; adopts x's size when y is empty.
void axpy(double a, const std::vector<double>& x, std::vector<double>& y) {
  if (x.empty() || a == 0.0) return;
  if (y.empty()) y.assign(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

// h += c * g g^T (g of length m, h row-major m x m).
void outer_acc(double c, const std::vector<double>& g, std::size_t m,
               std::vector<double>& h) {
  if (g.empty() || c == 0.0) return;
  if (h.empty()) h.assign(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double cgi = c * g[i];
    if (cgi == 0.0) continue;
    for (std::size_t j = 0; j < m; ++j) h[i * m + j] += cgi * g[j];
  }
}

// h += c * (ga gb^T + gb ga^T)
void outer_sym_acc(double c, const std::vector<double>& ga,
                   const std::vector<double>& gb, std::size_t m,
                   std::vector<double>& h) {
  if (ga.empty() || gb.empty() || c == 0.0) return;
  if (h.empty()) h.assign(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      h[i * m + j] += c * (ga[i] * gb[j] + gb[i] * ga[j]);
}

}  // namespace

Dual Dual::variable(double value, std::size_t index, std::size_t n_vars,
                    bool second_order) {
  Dual d(value);
  d.g_.assign(n_vars, 0.0);
  d.g_[index] = 1.0;
  if (second_order) d.h_.assign(n_vars * n_vars, 0.0);
  return d;
}

bool Dual::finite() const {
  if (!std::isfinite(v_)) return false;
  for (double g : g_)
    if (!std::isfinite(g)) return false;
  for (double h : h_)
    if (!std::isfinite(h)) return false;
  return true;
}

Dual& Dual::operator+=(const Dual& b) {
  v_ += b.v_;
  axpy(1.0, b.g_, g_);
  if (!b.h_.empty()) {
    if (h_.empty()) h_.assign(b.h_.size(), 0.0);
    for (std::size_t i = 0; i < h_.size(); ++i) h_[i] += b.h_[i];
  }
  return *this;
}

Dual& Dual::operator-=(const Dual& b) {
  v_ -= b.v_;
  axpy(-1.0, b.g_, g_);
  if (!b.h_.empty()) {
    if (h_.empty()) h_.assign(b.h_.size(), 0.0);
    for (std::size_t i = 0; i < h_.size(); ++i) h_[i] -= b.h_[i];
  }
  return *this;
}

Dual operator-(Dual a) {
  a.v_ = -a.v_;
  for (double& g : a.g_) g = -g;
  for (double& h : a.h_) h = -h;
  return a;
}

Dual operator*(const Dual& a, const Dual& b) {
  Dual c(a.v_ * b.v_);
  const std::size_t m = std::max(a.g_.size(), b.g_.size());
  axpy(a.v_, b.g_, c.g_);
  axpy(b.v_, a.g_, c.g_);
  if (!c.g_.empty() && c.g_.size() < m) c.g_.resize(m, 0.0);
  if (!a.h_.empty() || !b.h_.empty()) {
    c.h_.assign(m * m, 0.0);
    if (!a.h_.empty())
      for (std::size_t i = 0; i < a.h_.size(); ++i) c.h_[i] += b.v_ * a.h_[i];
    if (!b.h_.empty())
      for (std::size_t i = 0; i < b.h_.size(); ++i) c.h_[i] += a.v_ * b.h_[i];
    outer_sym_acc(1.0, a.g_, b.g_, m, c.h_);
    if (c.g_.empty()) c.g_.assign(m, 0.0);
  }
  return c;
}

Dual operator*(Dual a, double s) {
  a.v_ *= s;
  for (double& g : a.g_) g *= s;
  for (double& h : a.h_) h *= s;
  return a;
}

Dual chain(const Dual& x, double f0, double f1, double f2) {
  Dual y(f0);
  const std::size_t m = x.g_.size();
  axpy(f1, x.g_, y.g_);
  if (!x.h_.empty()) {
    y.h_.assign(m * m, 0.0);
    for (std::size_t i = 0; i < x.h_.size(); ++i) y.h_[i] = f1 * x.h_[i];
    outer_acc(f2, x.g_, m, y.h_);
    if (y.g_.empty()) y.g_.assign(m, 0.0);
  }
  return y;
}

Dual operator/(const Dual& a, const Dual& b) {
  const double iv = 1.0 / b.value();
  Dual binv = chain(b, iv, -iv * iv, 2.0 * iv * iv * iv);
  return a * binv;
}

Dual operator/(double s, const Dual& a) {
  const double iv = 1.0 / a.value();
  return chain(a, s * iv, -s * iv * iv, 2.0 * s * iv * iv * iv);
}

Dual sin(const Dual& x) {
  const double s = std::sin(x.value()), c = std::cos(x.value());
  return chain(x, s, c, -s);
}

Dual cos(const Dual& x) {
  const double s = std::sin(x.value()), c = std::cos(x.value());
  return chain(x, c, -s, -c);
}

Dual tan(const Dual& x) {
  const double t = std::tan(x.value());
  const double d = 1.0 + t * t;
  return chain(x, t, d, 2.0 * t * d);
}

Dual exp(const Dual& x) {
  const double e = std::exp(x.value());
  return chain(x, e, e, e);
}

Dual log(const Dual& x) {
  const double iv = 1.0 / x.value();
  return chain(x, std::log(x.value()), iv, -iv * iv);
}

Dual sqrt(const Dual& x) {
  const double r = std::sqrt(x.value());
  return chain(x, r, 0.5 / r, -0.25 / (r * x.value()));
}

Dual sinh(const Dual& x) {
  const double s = std::sinh(x.value()), c = std::cosh(x.value());
  return chain(x, s, c, s);
}

Dual cosh(const Dual& x) {
  const double s = std::sinh(x.value()), c = std::cosh(x.value());
  return chain(x, c, s, c);
}

Dual tanh(const Dual& x) {
  const double t = std::tanh(x.value());
  const double d = 1.0 - t * t;
  return chain(x, t, d, -2.0 * t * d);
}

Dual pow(const Dual& x, double e) {
  const double v = x.value();
  return chain(x, std::pow(v, e), e * std::pow(v, e - 1.0),
               e * (e - 1.0) * std::pow(v, e - 2.0));
}

Dual pow(const Dual& x, int e) {
  if (e == 2) return x * x;  // common case, avoids pow() at v = 0
  if (e == 0) return Dual(1.0);
  if (e == 1) return x;
  const double v = x.value();
  const double de = static_cast<double>(e);
  const double f2 = (e == 2) ? 2.0 : de * (de - 1.0) * std::pow(v, e - 2);
  return chain(x, std::pow(v, e), de * std::pow(v, e - 1), f2);
}

DVec seed(ConstSpan x, bool so) {
  DVec out;
  out.reserve(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.push_back(Dual::variable(x[i], i, x.size(), so));
  return out;
}

}  // namespace fvi
