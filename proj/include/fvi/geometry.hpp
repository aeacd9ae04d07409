#pragma once

#include <concepts>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fvi/dual.hpp"
#include "fvi/errors.hpp"
#include "fvi/linalg.hpp"

namespace fvi {

// A single global chart on R^n. Periodic coordinates are an output/display
// concern only; the dynamics always runs in the unwrapped chart.
struct Chart {
  int dim = 1;
  std::vector<bool> periodic;  // empty means all-false

  Chart() = default;
  explicit Chart(int n) : dim(n) {
    if (n < 1) throw Error("chart dimension must be >= 1");
  }
  Chart(int n, std::vector<bool> mask) : dim(n), periodic(std::move(mask)) {}

  bool is_periodic(int i) const {
    return !periodic.empty() && periodic[static_cast<std::size_t>(i)];
  }
  // Wraps periodic coordinates into (-pi, pi]. Non-periodic entries pass
  // through unchanged.
  Vec wrap(ConstSpan q) const;
};

namespace detail {
template <class F>
concept TauCallable = requires(F f, ConstSpan qr, DualSpan qd) {
  { f(qr, qr) } -> std::convertible_to<Vec>;
  { f(qd, qd) } -> std::convertible_to<DVec>;
};
}  // namespace detail

// The map tau : Q x Q -> T_q Q identifying a neighborhood of the diagonal
// with a neighborhood of the zero section (inverse of the retraction-induced
// sigma). Convention: base point first, tau(q, Q) lives at q. The partial
// derivative maps d1_tau, d2_tau are supplied in closed form; near the
// diagonal they must satisfy d1_tau(q,q) = -I and d2_tau(q,q) = +I.
struct Retraction {
  int dim = 0;
  std::string name;
  std::function<Vec(ConstSpan, ConstSpan)> tau;
  std::function<DVec(DualSpan, DualSpan)> tau_ad;
  std::function<Mat(ConstSpan, ConstSpan)> d1_tau;
  std::function<Mat(ConstSpan, ConstSpan)> d2_tau;
};

template <detail::TauCallable F>
Retraction make_retraction(int dim, std::string name, F tau,
                           std::function<Mat(ConstSpan, ConstSpan)> d1,
                           std::function<Mat(ConstSpan, ConstSpan)> d2) {
  Retraction r;
  r.dim = dim;
  r.name = std::move(name);
  r.tau = tau;
  r.tau_ad = std::move(tau);
  r.d1_tau = std::move(d1);
  r.d2_tau = std::move(d2);
  return r;
}

// tau(q, Q) = Q - q with constant derivatives -I, +I.
Retraction euclidean_retraction(const Chart& chart);

struct RetractionReport {
  double tau_defect = 0.0;      // max |tau(q,q)|
  double d1_defect = 0.0;       // max |d1_tau(q,q) + I|
  double d2_defect = 0.0;       // max |d2_tau(q,q) - I|
  double cancel_defect = 0.0;   // max |d1_tau(q,q) + d2_tau(q,q)|
  double ad_mismatch = 0.0;     // closed-form partials vs AD of tau
};

// Checks the coincident-point identities at every sample. Throws
// ViolationFound naming the worst offending symbol when a check exceeds tol.
RetractionReport check_retraction_axioms(const Retraction& r,
                                         const std::vector<Vec>& samples,
                                         double tol);

}  // namespace fvi
