#pragma once

#include <concepts>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "fvi/dual.hpp"
#include "fvi/geometry.hpp"
#include "fvi/linalg.hpp"

namespace fvi {

namespace detail {
template <class F>
concept LagrangianCallable = requires(F f, ConstSpan r, DualSpan d) {
  { f(r, r) } -> std::convertible_to<double>;
  { f(d, d) } -> std::convertible_to<Dual>;
};
template <class F>
concept ForceCallable = requires(F f, ConstSpan r, DualSpan d) {
  { f(r, r) } -> std::convertible_to<Vec>;
  { f(d, d) } -> std::convertible_to<DVec>;
};
}  // namespace detail

// Scalar function of (q, v), evaluable on plain reals and on AD scalars from
// a single generic definition.
class LagrangianFn {
 public:
  LagrangianFn() = default;
  template <detail::LagrangianCallable F>
    requires(!std::same_as<std::remove_cvref_t<F>, LagrangianFn>)
  LagrangianFn(F f) : re_(f), ad_(std::move(f)) {}

  double operator()(ConstSpan q, ConstSpan v) const { return re_(q, v); }
  Dual operator()(DualSpan q, DualSpan v) const { return ad_(q, v); }
  explicit operator bool() const { return static_cast<bool>(re_); }

 private:
  std::function<double(ConstSpan, ConstSpan)> re_;
  std::function<Dual(DualSpan, DualSpan)> ad_;
};

// External force covector F(q, v), fiber-preserving by construction (the
// returned components live at q).
class ForceFn {
 public:
  ForceFn() = default;
  template <detail::ForceCallable F>
    requires(!std::same_as<std::remove_cvref_t<F>, ForceFn>)
  ForceFn(F f) : re_(f), ad_(std::move(f)) {}

  Vec operator()(ConstSpan q, ConstSpan v) const { return re_(q, v); }
  DVec operator()(DualSpan q, DualSpan v) const { return ad_(q, v); }
  explicit operator bool() const { return static_cast<bool>(re_); }

 private:
  std::function<Vec(ConstSpan, ConstSpan)> re_;
  std::function<DVec(DualSpan, DualSpan)> ad_;
};

ForceFn zero_force(int dim);

struct StateTangent {
  Vec q, v;
};

struct StateCotangent {
  Vec q, p;
};

// Point of TQ x TQ: the (q, v) copy and the (Q, V) copy.
struct DoubledStateTangent {
  StateTangent minus, plus;

  bool on_identities(double tol) const;
  DoubledStateTangent swapped() const { return {plus, minus}; }
};

DoubledStateTangent embed_identity(const StateTangent& s);

struct EnergyReport {
  double e = 0.0;  // E_L = v . dL/dv - L
  double t = 0.0;
};

// A forced Lagrangian system in one chart: L, the force covector F, and the
// retraction used to build generalized potentials on the doubled space.
struct ForcedSystem {
  Chart chart;
  LagrangianFn lagrangian;
  ForceFn force;
  Retraction retraction;

  int dim() const { return chart.dim; }
};

// ---- single-system operations ----

// Condition number of the velocity Hessian W at a state.
double mass_condition(const ForcedSystem& sys, const StateTangent& s);

// Acceleration of the forced Euler-Lagrange equations,
//   a = W^{-1} (F + dL/dq - d2L/dqdv . v).
Vec forced_el_acceleration(const ForcedSystem& sys, const StateTangent& s);

// Fibre derivative p = dL/dv.
StateCotangent legendre(const ForcedSystem& sys, const StateTangent& s);

// E_L = v . dL/dv - L.
double energy(const ForcedSystem& sys, const StateTangent& s);
EnergyReport energy_report(const ForcedSystem& sys, const StateTangent& s,
                           double t);

// Newton inversion of the fibre derivative; seed v = W(q,0)^{-1} p.
Vec legendre_inverse(const ForcedSystem& sys, ConstSpan q, ConstSpan p);

// H(q, p) = p . v*(q,p) - L(q, v*).
double hamiltonian(const ForcedSystem& sys, const StateCotangent& s);

struct PhaseField {
  Vec dq, dp;
};

// Forced Hamilton equations dq = dH/dp, dp = -dH/dq + F^H.
PhaseField forced_hamilton_field(const ForcedSystem& sys,
                                 const StateCotangent& s);

// ---- doubled-space operations ----

// Generalized potential built from the force and the retraction:
//   K(v_q, V_Q) = 1/2 <F(V_Q), tau(Q, q)> - 1/2 <F(v_q), tau(q, Q)>,
// antisymmetric under the swap of the two copies.
template <class T>
T kf_value(const ForcedSystem& sys, std::span<const T> q, std::span<const T> v,
           std::span<const T> Q, std::span<const T> V) {
  const auto f_minus = sys.force(q, v);
  const auto f_plus = sys.force(Q, V);
  std::vector<T> t_qQ, t_Qq;
  if constexpr (std::same_as<T, double>) {
    t_qQ = sys.retraction.tau(q, Q);
    t_Qq = sys.retraction.tau(Q, q);
  } else {
    t_qQ = sys.retraction.tau_ad(q, Q);
    t_Qq = sys.retraction.tau_ad(Q, q);
  }
  T acc(0.0);
  for (std::size_t i = 0; i < q.size(); ++i)
    acc += f_plus[i] * t_Qq[i] - f_minus[i] * t_qQ[i];
  return 0.5 * acc;
}

double generalized_potential_KF(const ForcedSystem& sys,
                                const DoubledStateTangent& d);

// L(Q,V) - L(q,v) - K_F(q,v,Q,V).
double doubled_lagrangian(const ForcedSystem& sys,
                          const DoubledStateTangent& d);

// H(beta) - H(alpha) + K_F(alpha, beta) on the cotangent side.
double doubled_hamiltonian(const ForcedSystem& sys, const StateCotangent& a,
                           const StateCotangent& b);

// The doubled system as a free Lagrangian system on the product chart;
// `lagrangian` takes x = (q, Q), w = (v, V) of size 2n.
struct DoubledSystem {
  ForcedSystem base;
  LagrangianFn lagrangian;
  int dim = 0;  // 2n
};

DoubledSystem make_doubled(const ForcedSystem& sys);

struct DoubledField {
  Vec v_minus, v_plus;  // chart velocities of the two copies
  Vec a_minus, a_plus;  // accelerations
};

// Euler-Lagrange field of the doubled Lagrangian, computed by AD from the
// doubled Lagrangian alone (the force enters only through the generalized
// potential).
DoubledField doubled_field(const DoubledSystem& dsys,
                           const DoubledStateTangent& d);
DoubledField doubled_field(const ForcedSystem& sys,
                           const DoubledStateTangent& d);

struct DoubledPhaseField {
  Vec dq, dp, dQ, dP;
};

// Hamiltonian vector field of H(beta) - H(alpha) + K_F with respect to the
// difference symplectic structure pr2* w - pr1* w.
DoubledPhaseField doubled_hamilton_field(const ForcedSystem& sys,
                                         const StateCotangent& a,
                                         const StateCotangent& b);

// ---- reference integration ----

struct TrajectoryRecord {
  std::vector<double> t;
  std::vector<Vec> q, v, p;
  std::vector<Vec> p_minus, p_plus;  // discrete Legendre momenta (if any)
  std::vector<double> energy;
  std::vector<double> identity_defect;
  std::vector<int> newton_iters;
  int total_newton_iters = 0;

  std::size_t size() const { return t.size(); }
  double max_identity_defect() const;
};

using OdeField = std::function<Vec(double, ConstSpan)>;

// One-step explicit 5th-order solve at fixed step h_ref; steps are shortened
// to land exactly on requested sample times.
std::vector<Vec> rk5_solve(const OdeField& f, ConstSpan y0,
                           const std::vector<double>& sample_times,
                           double h_ref);

// High-accuracy reference trajectory for the forced system. With
// sample_times empty, samples every h_ref up to t_end.
TrajectoryRecord reference_solve(const ForcedSystem& sys,
                                 const StateTangent& s0, double t_end,
                                 double h_ref,
                                 const std::vector<double>& sample_times = {});

// Same for the doubled system; records the minus copy plus identity defects.
TrajectoryRecord reference_solve_doubled(
    const ForcedSystem& sys, const DoubledStateTangent& d0, double t_end,
    double h_ref, const std::vector<double>& sample_times = {});

std::vector<double> uniform_grid(double t_end, double h);

}  // namespace fvi
