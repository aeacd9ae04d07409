#include "fvi/continuous.hpp"

#include <algorithm>
#include <cmath>

namespace fvi {

namespace {

constexpr double kCondLimit = 1e12;

// Second-order pass of a Lagrangian-like function over z = (q, v).
SecondOrder joint_second_order(const LagrangianFn& lag, ConstSpan q,
                               ConstSpan v) {
  const std::size_t n = q.size();
  Vec z = concat(q, v);
  return second_order(
      [&](DualSpan zd) { return lag(zd.subspan(0, n), zd.subspan(n, n)); }, z);
}

// a = W^{-1} (rhs_extra + dl/dq - d2l/dvdq . v) for a free or forced system.
Vec el_acceleration(const LagrangianFn& lag, ConstSpan q, ConstSpan v,
                    const Vec* force) {
  const std::size_t n = q.size();
  SecondOrder so = joint_second_order(lag, q, v);
  Mat w = so.hess.block(n, n, n, n);
  const double cond = cond_1(w);
  if (!(cond < kCondLimit)) throw SingularMass(cond);
  Vec rhs(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = so.grad[i];  // dl/dq_i
    for (std::size_t j = 0; j < n; ++j)
      s -= so.hess(n + i, j) * v[j];  // d2l/dv_i dq_j . v_j
    if (force) s += (*force)[i];
    rhs[i] = s;
  }
  auto a = try_solve(w, rhs);
  if (!a) throw SingularMass(cond);
  return *a;
}

DVec to_duals(ConstSpan x) {
  DVec out;
  out.reserve(x.size());
  for (double v : x) out.emplace_back(v);
  return out;
}

}  // namespace

ForceFn zero_force(int dim) {
  return ForceFn([dim](auto q, auto) {
    using T = std::remove_cvref_t<decltype(q[0])>;
    return std::vector<T>(static_cast<std::size_t>(dim), T(0.0));
  });
}

bool DoubledStateTangent::on_identities(double tol) const {
  double d = 0.0;
  for (std::size_t i = 0; i < minus.q.size(); ++i)
    d += std::abs(minus.q[i] - plus.q[i]) + std::abs(minus.v[i] - plus.v[i]);
  return d <= tol;
}

DoubledStateTangent embed_identity(const StateTangent& s) { return {s, s}; }

double mass_condition(const ForcedSystem& sys, const StateTangent& s) {
  const std::size_t n = s.q.size();
  SecondOrder so = joint_second_order(sys.lagrangian, s.q, s.v);
  return cond_1(so.hess.block(n, n, n, n));
}

Vec forced_el_acceleration(const ForcedSystem& sys, const StateTangent& s) {
  Vec f = sys.force(s.q, s.v);
  return el_acceleration(sys.lagrangian, s.q, s.v, &f);
}

StateCotangent legendre(const ForcedSystem& sys, const StateTangent& s) {
  DVec qc = to_duals(s.q);
  Vec p = gradient(
      [&](DualSpan vd) { return sys.lagrangian(DualSpan(qc), vd); }, s.v);
  return {s.q, std::move(p)};
}

double energy(const ForcedSystem& sys, const StateTangent& s) {
  StateCotangent c = legendre(sys, s);
  return dot(c.p, s.v) - sys.lagrangian(s.q, s.v);
}

EnergyReport energy_report(const ForcedSystem& sys, const StateTangent& s,
                           double t) {
  EnergyReport rep{energy(sys, s), t};
  if (!std::isfinite(rep.e)) throw NonFinite("energy_report");
  return rep;
}

Vec legendre_inverse(const ForcedSystem& sys, ConstSpan q, ConstSpan p) {
  const std::size_t n = q.size();
  // Seed from the velocity Hessian at v = 0.
  Vec v(n, 0.0);
  {
    SecondOrder so = joint_second_order(sys.lagrangian, q, v);
    auto v0 = try_solve(so.hess.block(n, n, n, n), p);
    if (!v0) throw LegendreInversionFailed();
    v = *v0;
  }
  for (int it = 0; it < 50; ++it) {
    SecondOrder so = joint_second_order(sys.lagrangian, q, v);
    Vec r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = so.grad[n + i] - p[i];
    if (!all_finite(r)) throw LegendreInversionFailed();
    if (norm_inf(r) <= 1e-13 * (1.0 + norm_inf(p))) return v;
    auto dv = try_solve(so.hess.block(n, n, n, n), r);
    if (!dv) throw LegendreInversionFailed();
    for (std::size_t i = 0; i < n; ++i) v[i] -= (*dv)[i];
  }
  throw LegendreInversionFailed();
}

double hamiltonian(const ForcedSystem& sys, const StateCotangent& s) {
  Vec v = legendre_inverse(sys, s.q, s.p);
  return dot(s.p, v) - sys.lagrangian(s.q, v);
}

PhaseField forced_hamilton_field(const ForcedSystem& sys,
                                 const StateCotangent& s) {
  Vec v = legendre_inverse(sys, s.q, s.p);
  DVec vc = to_duals(v);
  Vec dlq = gradient(
      [&](DualSpan qd) { return sys.lagrangian(qd, DualSpan(vc)); }, s.q);
  Vec f = sys.force(s.q, v);
  Vec dp(s.q.size());
  for (std::size_t i = 0; i < dp.size(); ++i) dp[i] = dlq[i] + f[i];
  return {std::move(v), std::move(dp)};
}

double generalized_potential_KF(const ForcedSystem& sys,
                                const DoubledStateTangent& d) {
  return kf_value<double>(sys, d.minus.q, d.minus.v, d.plus.q, d.plus.v);
}

double doubled_lagrangian(const ForcedSystem& sys,
                          const DoubledStateTangent& d) {
  return sys.lagrangian(d.plus.q, d.plus.v) -
         sys.lagrangian(d.minus.q, d.minus.v) - generalized_potential_KF(sys, d);
}

double doubled_hamiltonian(const ForcedSystem& sys, const StateCotangent& a,
                           const StateCotangent& b) {
  Vec va = legendre_inverse(sys, a.q, a.p);
  Vec vb = legendre_inverse(sys, b.q, b.p);
  const Vec fa = sys.force(a.q, va);
  const Vec fb = sys.force(b.q, vb);
  const Vec t_ab = sys.retraction.tau(a.q, b.q);
  const Vec t_ba = sys.retraction.tau(b.q, a.q);
  const double kf = 0.5 * (dot(fb, t_ba) - dot(fa, t_ab));
  const double ha = dot(a.p, va) - sys.lagrangian(a.q, va);
  const double hb = dot(b.p, vb) - sys.lagrangian(b.q, vb);
  return hb - ha + kf;
}

DoubledSystem make_doubled(const ForcedSystem& sys) {
  const std::size_t n = static_cast<std::size_t>(sys.dim());
  ForcedSystem copy = sys;
  LagrangianFn doubled([copy, n](auto x, auto w) {
    auto q = x.subspan(0, n);
    auto Q = x.subspan(n, n);
    auto v = w.subspan(0, n);
    auto V = w.subspan(n, n);
    return copy.lagrangian(Q, V) - copy.lagrangian(q, v) -
           kf_value(copy, q, v, Q, V);
  });
  return {sys, std::move(doubled), 2 * sys.dim()};
}

DoubledField doubled_field(const DoubledSystem& dsys,
                           const DoubledStateTangent& d) {
  const std::size_t n = d.minus.q.size();
  Vec x = concat(d.minus.q, d.plus.q);
  Vec w = concat(d.minus.v, d.plus.v);
  Vec a = el_acceleration(dsys.lagrangian, x, w, nullptr);
  DoubledField out;
  out.v_minus = d.minus.v;
  out.v_plus = d.plus.v;
  out.a_minus.assign(a.begin(), a.begin() + static_cast<long>(n));
  out.a_plus.assign(a.begin() + static_cast<long>(n), a.end());
  return out;
}

DoubledField doubled_field(const ForcedSystem& sys,
                           const DoubledStateTangent& d) {
  return doubled_field(make_doubled(sys), d);
}

DoubledPhaseField doubled_hamilton_field(const ForcedSystem& sys,
                                         const StateCotangent& a,
                                         const StateCotangent& b) {
  const std::size_t n = a.q.size();

  // Per-point quantities: v* = FH^{-1}, W, L_vq, dL/dq, F and its Jacobian.
  struct Side {
    Vec v, dlq, f;
    Mat dfq_h, dfp_h;  // Jacobians of F^H = F(q, v*(q,p)) in (q, p)
  };
  auto side = [&sys, n](const StateCotangent& s) {
    Side out;
    out.v = legendre_inverse(sys, s.q, s.p);
    Vec z = concat(s.q, out.v);
    SecondOrder so = second_order(
        [&](DualSpan zd) {
          return sys.lagrangian(zd.subspan(0, n), zd.subspan(n, n));
        },
        z);
    out.dlq.assign(so.grad.begin(), so.grad.begin() + static_cast<long>(n));
    Mat w = so.hess.block(n, n, n, n);
    Mat lvq = so.hess.block(n, 0, n, n);  // d2L/dv_i dq_j
    auto winv = try_inverse(w);
    if (!winv) throw SingularMass(cond_1(w));
    Mat jf = jacobian(
        [&](DualSpan zd) {
          return sys.force(zd.subspan(0, n), zd.subspan(n, n));
        },
        z);
    Mat dfq = jf.block(0, 0, n, n), dfv = jf.block(0, n, n, n);
    out.f = sys.force(s.q, out.v);
    // v* sensitivities: dv/dp = W^{-1}, dv/dq = -W^{-1} L_vq.
    out.dfp_h = dfv.mul(*winv);
    Mat dvdq = winv->mul(lvq);
    dvdq.scale(-1.0);
    out.dfq_h = dfq + dfv.mul(dvdq);
    return out;
  };
  Side sa = side(a), sb = side(b);

  const Vec t_ab = sys.retraction.tau(a.q, b.q);
  const Vec t_ba = sys.retraction.tau(b.q, a.q);
  const Mat d1_ab = sys.retraction.d1_tau(a.q, b.q);
  const Mat d2_ab = sys.retraction.d2_tau(a.q, b.q);
  const Mat d1_ba = sys.retraction.d1_tau(b.q, a.q);
  const Mat d2_ba = sys.retraction.d2_tau(b.q, a.q);

  // K_F = 1/2 <F^H(b), tau(Q, q)> - 1/2 <F^H(a), tau(q, Q)>
  Vec kq(n), kp(n), kQ(n), kP(n);
  Vec m1 = d2_ba.transposed().mul(sb.f);
  Vec m2 = sa.dfq_h.transposed().mul(t_ab);
  Vec m3 = d1_ab.transposed().mul(sa.f);
  Vec m4 = sa.dfp_h.transposed().mul(t_ab);
  Vec m5 = sb.dfq_h.transposed().mul(t_ba);
  Vec m6 = d1_ba.transposed().mul(sb.f);
  Vec m7 = d2_ab.transposed().mul(sa.f);
  Vec m8 = sb.dfp_h.transposed().mul(t_ba);
  for (std::size_t i = 0; i < n; ++i) {
    kq[i] = 0.5 * (m1[i] - m2[i] - m3[i]);
    kp[i] = -0.5 * m4[i];
    kQ[i] = 0.5 * (m5[i] + m6[i] - m7[i]);
    kP[i] = 0.5 * m8[i];
  }

  // Difference structure: dq = -dH/dp, dp = +dH/dq on the first copy.
  DoubledPhaseField out;
  out.dq.resize(n);
  out.dp.resize(n);
  out.dQ.resize(n);
  out.dP.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.dq[i] = sa.v[i] - kp[i];
    out.dp[i] = sa.dlq[i] + kq[i];
    out.dQ[i] = sb.v[i] + kP[i];
    out.dP[i] = sb.dlq[i] - kQ[i];
  }
  return out;
}

double TrajectoryRecord::max_identity_defect() const {
  double m = 0.0;
  for (double d : identity_defect) m = std::max(m, d);
  return m;
}

std::vector<double> uniform_grid(double t_end, double h) {
  std::vector<double> out;
  const int n = static_cast<int>(std::llround(t_end / h));
  out.reserve(static_cast<std::size_t>(n) + 1);
  for (int k = 0; k <= n; ++k) out.push_back(t_end * k / n);
  return out;
}

namespace {

Vec rk5_step(const OdeField& f, double t, const Vec& y, double h) {
  static const double a21 = 1.0 / 4;
  static const double a31 = 3.0 / 32, a32 = 9.0 / 32;
  static const double a41 = 1932.0 / 2197, a42 = -7200.0 / 2197,
                      a43 = 7296.0 / 2197;
  static const double a51 = 439.0 / 216, a52 = -8.0, a53 = 3680.0 / 513,
                      a54 = -845.0 / 4104;
  static const double a61 = -8.0 / 27, a62 = 2.0, a63 = -3544.0 / 2565,
                      a64 = 1859.0 / 4104, a65 = -11.0 / 40;
  static const double b1 = 16.0 / 135, b3 = 6656.0 / 12825,
                      b4 = 28561.0 / 56430, b5 = -9.0 / 50, b6 = 2.0 / 55;
  const std::size_t m = y.size();
  auto at = [&](std::initializer_list<std::pair<double, const Vec*>> terms) {
    Vec out = y;
    for (const auto& [c, k] : terms)
      for (std::size_t i = 0; i < m; ++i) out[i] += h * c * (*k)[i];
    return out;
  };
  Vec k1 = f(t, y);
  Vec k2 = f(t + h * (1.0 / 4), at({{a21, &k1}}));
  Vec k3 = f(t + h * (3.0 / 8), at({{a31, &k1}, {a32, &k2}}));
  Vec k4 = f(t + h * (12.0 / 13), at({{a41, &k1}, {a42, &k2}, {a43, &k3}}));
  Vec k5 = f(t + h, at({{a51, &k1}, {a52, &k2}, {a53, &k3}, {a54, &k4}}));
  Vec k6 = f(t + h / 2,
             at({{a61, &k1}, {a62, &k2}, {a63, &k3}, {a64, &k4}, {a65, &k5}}));
  Vec out = y;
  for (std::size_t i = 0; i < m; ++i)
    out[i] +=
        h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
  return out;
}

}  // namespace

std::vector<Vec> rk5_solve(const OdeField& f, ConstSpan y0,
                           const std::vector<double>& sample_times,
                           double h_ref) {
  if (!(h_ref > 0.0)) throw Error("h_ref must be positive");
  std::vector<Vec> out;
  out.reserve(sample_times.size());
  Vec y(y0.begin(), y0.end());
  double t = 0.0;
  for (double target : sample_times) {
    while (target - t > 1e-14 * (1.0 + std::abs(target))) {
      const double h = std::min(h_ref, target - t);
      y = rk5_step(f, t, y, h);
      if (!all_finite(y)) throw NonFinite("rk5_solve");
      t += h;
    }
    t = target;
    out.push_back(y);
  }
  return out;
}

TrajectoryRecord reference_solve(const ForcedSystem& sys,
                                 const StateTangent& s0, double t_end,
                                 double h_ref,
                                 const std::vector<double>& sample_times) {
  const std::size_t n = s0.q.size();
  std::vector<double> grid =
      sample_times.empty() ? uniform_grid(t_end, h_ref) : sample_times;
  OdeField field = [&sys, n](double, ConstSpan y) {
    StateTangent s{Vec(y.begin(), y.begin() + static_cast<long>(n)),
                   Vec(y.begin() + static_cast<long>(n), y.end())};
    Vec a = forced_el_acceleration(sys, s);
    Vec dy(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      dy[i] = s.v[i];
      dy[n + i] = a[i];
    }
    return dy;
  };
  std::vector<Vec> ys = rk5_solve(field, concat(s0.q, s0.v), grid, h_ref);
  TrajectoryRecord rec;
  rec.t = grid;
  for (const Vec& y : ys) {
    StateTangent s{Vec(y.begin(), y.begin() + static_cast<long>(n)),
                   Vec(y.begin() + static_cast<long>(n), y.end())};
    StateCotangent c = legendre(sys, s);
    rec.q.push_back(s.q);
    rec.v.push_back(s.v);
    rec.p.push_back(c.p);
    rec.energy.push_back(dot(c.p, s.v) - sys.lagrangian(s.q, s.v));
    rec.identity_defect.push_back(0.0);
    rec.newton_iters.push_back(0);
  }
  return rec;
}

TrajectoryRecord reference_solve_doubled(
    const ForcedSystem& sys, const DoubledStateTangent& d0, double t_end,
    double h_ref, const std::vector<double>& sample_times) {
  const std::size_t n = d0.minus.q.size();
  std::vector<double> grid =
      sample_times.empty() ? uniform_grid(t_end, h_ref) : sample_times;
  DoubledSystem dsys = make_doubled(sys);
  OdeField field = [&dsys, n](double, ConstSpan y) {
    DoubledStateTangent d;
    auto part = [&](std::size_t k) {
      return Vec(y.begin() + static_cast<long>(k * n),
                 y.begin() + static_cast<long>((k + 1) * n));
    };
    d.minus = {part(0), part(1)};
    d.plus = {part(2), part(3)};
    DoubledField f = doubled_field(dsys, d);
    Vec dy;
    dy.reserve(4 * n);
    for (const Vec* blk : {&f.v_minus, &f.a_minus, &f.v_plus, &f.a_plus})
      dy.insert(dy.end(), blk->begin(), blk->end());
    return dy;
  };
  Vec y0 = concat(concat(d0.minus.q, d0.minus.v), concat(d0.plus.q, d0.plus.v));
  std::vector<Vec> ys = rk5_solve(field, y0, grid, h_ref);
  TrajectoryRecord rec;
  rec.t = grid;
  for (const Vec& y : ys) {
    auto part = [&](std::size_t k) {
      return Vec(y.begin() + static_cast<long>(k * n),
                 y.begin() + static_cast<long>((k + 1) * n));
    };
    StateTangent s{part(0), part(1)};
    StateTangent sp{part(2), part(3)};
    double defect = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      defect = std::max({defect, std::abs(s.q[i] - sp.q[i]),
                         std::abs(s.v[i] - sp.v[i])});
    StateCotangent c = legendre(sys, s);
    rec.q.push_back(s.q);
    rec.v.push_back(s.v);
    rec.p.push_back(c.p);
    rec.energy.push_back(dot(c.p, s.v) - sys.lagrangian(s.q, s.v));
    rec.identity_defect.push_back(defect);
    rec.newton_iters.push_back(0);
  }
  return rec;
}

}  // namespace fvi
