#pragma once

// Test-only oracles, independent of the library's own derivative paths:
// central finite differences and a tiny deterministic RNG for sampling.

#include <cmath>
#include <functional>
#include <vector>

#include "fvi/linalg.hpp"

namespace oracles {

using fvi::Mat;
using fvi::Vec;

inline Vec fd_gradient(const std::function<double(const Vec&)>& f, Vec x,
                       double step = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    x[i] = xi + step;
    const double fp = f(x);
    x[i] = xi - step;
    const double fm = f(x);
    x[i] = xi;
    g[i] = (fp - fm) / (2.0 * step);
  }
  return g;
}

inline Mat fd_hessian(const std::function<double(const Vec&)>& f, Vec x,
                      double step = 1e-4) {
  const std::size_t n = x.size();
  Mat h(n, n);
  const double f0 = f(x);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      Vec y = x;
      if (i == j) {
        y[i] = x[i] + step;
        const double fpp = f(y);
        y[i] = x[i] - step;
        const double fmm = f(y);
        h(i, i) = (fpp - 2.0 * f0 + fmm) / (step * step);
      } else {
        y[i] = x[i] + step;
        y[j] = x[j] + step;
        const double fpp = f(y);
        y[j] = x[j] - step;
        const double fpm = f(y);
        y[i] = x[i] - step;
        y[j] = x[j] + step;
        const double fmp = f(y);
        y[j] = x[j] - step;
        const double fmm = f(y);
        h(i, j) = h(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
      }
    }
  }
  return h;
}

inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& g, Vec x,
                       double step = 1e-5) {
  const Vec g0 = g(x);
  Mat jac(g0.size(), x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double xj = x[j];
    x[j] = xj + step;
    const Vec gp = g(x);
    x[j] = xj - step;
    const Vec gm = g(x);
    x[j] = xj;
    for (std::size_t i = 0; i < g0.size(); ++i)
      jac(i, j) = (gp[i] - gm[i]) / (2.0 * step);
  }
  return jac;
}

// xorshift-style deterministic test sampler
struct Rng {
  std::uint64_t s;
  explicit Rng(std::uint64_t seed) : s(seed) {}
  double operator()(double lo = -1.0, double hi = 1.0) {
    s += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return lo + (hi - lo) * (static_cast<double>(z >> 11) * 0x1.0p-53);
  }
  Vec vec(std::size_t n, double lo = -1.0, double hi = 1.0) {
    Vec v(n);
    for (auto& x : v) x = (*this)(lo, hi);
    return v;
  }
};

}  // namespace oracles
