#include <doctest.h>

#include <cmath>

#include "fvi/continuous.hpp"
#include "fvi/experiments.hpp"
#include "oracles.hpp"

using namespace fvi;

namespace {

ForcedSystem harmonic_oscillator() {
  return benchmark_damped_linear(1.0, 0.0, 1.0).system;
}

ForcedSystem damped_linear() {
  return benchmark_damped_linear(1.0, 0.2, 1.0).system;
}

ForcedSystem van_der_pol() { return benchmark_van_der_pol().system; }

DoubledStateTangent random_doubled(const ForcedSystem& sys, oracles::Rng& rng,
                                   double lo = -2.0, double hi = 2.0) {
  const std::size_t n = static_cast<std::size_t>(sys.dim());
  return {{rng.vec(n, lo, hi), rng.vec(n, lo, hi)},
          {rng.vec(n, lo, hi), rng.vec(n, lo, hi)}};
}

}  // namespace

TEST_CASE("forced EL acceleration on the stock systems") {
  ForcedSystem ho = harmonic_oscillator();
  Vec a = forced_el_acceleration(ho, {{1.0}, {0.0}});
  CHECK(a[0] == doctest::Approx(-1.0).epsilon(1e-14));

  ForcedSystem dl = damped_linear();
  CHECK(forced_el_acceleration(dl, {{1.0}, {0.0}})[0] ==
        doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(forced_el_acceleration(dl, {{0.0}, {1.0}})[0] ==
        doctest::Approx(-0.2).epsilon(1e-14));

  ForcedSystem vdp = van_der_pol();
  Vec avdp = forced_el_acceleration(vdp, {{0.0, 0.0}, {1.0, 0.0}});
  CHECK(avdp[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(avdp[1] == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("legendre transform") {
  ForcedSystem vdp = van_der_pol();
  StateCotangent c = legendre(vdp, {{-0.5, -0.25}, {0.0, 4.0}});
  CHECK(c.p[0] == doctest::Approx(0.0));
  CHECK(c.p[1] == doctest::Approx(4.0));

  Mat m(2, 2), d(2, 2), k(2, 2);
  m(0, 0) = 2.0;
  m(1, 1) = 3.0;
  k(0, 0) = k(1, 1) = 1.0;
  ForcedSystem aniso = benchmark_damped_linear(m, d, k).system;
  StateCotangent c2 = legendre(aniso, {{0.0, 0.0}, {1.0, 1.0}});
  CHECK(c2.p[0] == doctest::Approx(2.0));
  CHECK(c2.p[1] == doctest::Approx(3.0));

  Vec v = legendre_inverse(aniso, Vec{0.1, -0.3}, c2.p);
  CHECK(v[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(v[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("energy of the van der Pol default state") {
  ForcedSystem vdp = van_der_pol();
  CHECK(energy(vdp, {{-0.5, -0.25}, {0.0, 4.0}}) ==
        doctest::Approx(8.206875).epsilon(1e-15));
}

TEST_CASE("forced Hamilton field") {
  ForcedSystem ho = harmonic_oscillator();
  PhaseField f = forced_hamilton_field(ho, {{1.0}, {0.0}});
  CHECK(f.dq[0] == doctest::Approx(0.0));
  CHECK(f.dp[0] == doctest::Approx(-1.0));

  ForcedSystem dl = damped_linear();
  f = forced_hamilton_field(dl, {{0.0}, {1.0}});
  CHECK(f.dq[0] == doctest::Approx(1.0));
  CHECK(f.dp[0] == doctest::Approx(-0.2));
}

TEST_CASE("Hamiltonian and Lagrangian forced fields agree through legendre") {
  ForcedSystem vdp = van_der_pol();
  oracles::Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    StateTangent s{rng.vec(2, -2.0, 2.0), rng.vec(2, -3.0, 3.0)};
    StateCotangent c = legendre(vdp, s);
    PhaseField f = forced_hamilton_field(vdp, c);
    Vec a = forced_el_acceleration(vdp, s);
    // dp along the EL flow: d/dt dL/dv = L_vq v + W a.
    Vec z = concat(s.q, s.v);
    SecondOrder so = second_order(
        [&](DualSpan zd) {
          return vdp.lagrangian(zd.subspan(0, 2), zd.subspan(2, 2));
        },
        z);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(f.dq[i] == doctest::Approx(s.v[i]).epsilon(1e-9));
      double dp = 0.0;
      for (std::size_t j = 0; j < 2; ++j)
        dp += so.hess(2 + i, j) * s.v[j] + so.hess(2 + i, 2 + j) * a[j];
      CHECK(f.dp[i] == doctest::Approx(dp).epsilon(1e-9));
    }
  }
}

TEST_CASE("generalized potential values on the van der Pol system") {
  ForcedSystem vdp = van_der_pol();
  DoubledStateTangent same = embed_identity({{0.7, -0.3}, {1.0, 2.0}});
  CHECK(generalized_potential_KF(vdp, same) == doctest::Approx(0.0));

  DoubledStateTangent zero_vel{{{1.0, 0.0}, {0.0, 0.0}},
                               {{0.0, 0.0}, {0.0, 0.0}}};
  CHECK(generalized_potential_KF(vdp, zero_vel) == doctest::Approx(0.0));

  DoubledStateTangent d{{{1.0, 0.0}, {1.0, 0.0}}, {{0.0, 0.0}, {0.0, 0.0}}};
  CHECK(generalized_potential_KF(vdp, d) ==
        doctest::Approx(-0.25).epsilon(1e-15));
}

TEST_CASE("doubled Lagrangian antisymmetry and degeneration") {
  ForcedSystem vdp = van_der_pol();
  oracles::Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    DoubledStateTangent d = random_doubled(vdp, rng);
    const double a = doubled_lagrangian(vdp, d);
    const double b = doubled_lagrangian(vdp, d.swapped());
    CHECK(std::abs(a + b) <= 1e-12 * (1.0 + std::abs(a)));
  }
  DoubledStateTangent id = embed_identity({{0.4, -1.0}, {2.0, 0.5}});
  CHECK(doubled_lagrangian(vdp, id) == doctest::Approx(0.0));

  ForcedSystem free = harmonic_oscillator();
  DoubledStateTangent d{{{0.7}, {0.2}}, {{-0.4}, {1.1}}};
  CHECK(doubled_lagrangian(free, d) ==
        doctest::Approx(free.lagrangian(d.plus.q, d.plus.v) -
                        free.lagrangian(d.minus.q, d.minus.v)));
}

TEST_CASE("doubled Hamiltonian values and antisymmetry") {
  ForcedSystem dl = damped_linear();
  StateCotangent a{{0.0}, {1.0}};
  StateCotangent b{{1.0}, {0.0}};
  CHECK(doubled_hamiltonian(dl, a, a) == doctest::Approx(0.0));
  CHECK(doubled_hamiltonian(dl, a, b) == doctest::Approx(0.1).epsilon(1e-14));

  ForcedSystem vdp = van_der_pol();
  oracles::Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    StateCotangent x{rng.vec(2, -2.0, 2.0), rng.vec(2, -2.0, 2.0)};
    StateCotangent y{rng.vec(2, -2.0, 2.0), rng.vec(2, -2.0, 2.0)};
    const double hxy = doubled_hamiltonian(vdp, x, y);
    const double hyx = doubled_hamiltonian(vdp, y, x);
    CHECK(std::abs(hxy + hyx) <= 1e-12 * (1.0 + std::abs(hxy)));
  }
}

TEST_CASE("doubled field restricts to the forced field on the identities") {
  oracles::Rng rng(13);
  for (ForcedSystem sys : {van_der_pol(), damped_linear()}) {
    DoubledSystem dsys = make_doubled(sys);
    const std::size_t n = static_cast<std::size_t>(sys.dim());
    for (int trial = 0; trial < 100; ++trial) {
      StateTangent s{rng.vec(n, -2.0, 2.0), rng.vec(n, -2.0, 2.0)};
      DoubledField f = doubled_field(dsys, embed_identity(s));
      Vec a = forced_el_acceleration(sys, s);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(f.a_minus[i] - f.a_plus[i]) < 1e-10);  // tangency
        CHECK(f.a_minus[i] == doctest::Approx(a[i]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("doubled field with a non-euclidean retraction still restricts") {
  // sinh-style retraction on the damped linear system
  ForcedSystem sys = damped_linear();
  auto tau = [](auto q, auto Q) {
    using T = std::remove_cvref_t<decltype(q[0])>;
    std::vector<T> out;
    for (std::size_t i = 0; i < q.size(); ++i) out.push_back(sinh(Q[i] - q[i]));
    return out;
  };
  auto d1 = [](ConstSpan q, ConstSpan Q) {
    Mat m(q.size(), q.size());
    for (std::size_t i = 0; i < q.size(); ++i)
      m(i, i) = -std::cosh(Q[i] - q[i]);
    return m;
  };
  auto d2 = [](ConstSpan q, ConstSpan Q) {
    Mat m(q.size(), q.size());
    for (std::size_t i = 0; i < q.size(); ++i)
      m(i, i) = std::cosh(Q[i] - q[i]);
    return m;
  };
  sys.retraction = make_retraction(1, "sinh", tau, d1, d2);
  DoubledSystem dsys = make_doubled(sys);
  oracles::Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    StateTangent s{rng.vec(1, -1.0, 1.0), rng.vec(1, -1.0, 1.0)};
    DoubledField f = doubled_field(dsys, embed_identity(s));
    Vec a = forced_el_acceleration(sys, s);
    CHECK(f.a_minus[0] == doctest::Approx(a[0]).epsilon(1e-10));
    CHECK(f.a_plus[0] == doctest::Approx(a[0]).epsilon(1e-10));
  }
}

TEST_CASE("doubled field is equivariant under the swap") {
  ForcedSystem vdp = van_der_pol();
  DoubledSystem dsys = make_doubled(vdp);
  oracles::Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    DoubledStateTangent d = random_doubled(vdp, rng);
    DoubledField f = doubled_field(dsys, d);
    DoubledField g = doubled_field(dsys, d.swapped());
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(g.a_minus[i] == doctest::Approx(f.a_plus[i]).epsilon(1e-11));
      CHECK(g.a_plus[i] == doctest::Approx(f.a_minus[i]).epsilon(1e-11));
    }
  }
}

TEST_CASE("doubled field decouples when the force vanishes") {
  ForcedSystem ho = harmonic_oscillator();
  DoubledSystem dsys = make_doubled(ho);
  DoubledStateTangent d{{{0.9}, {-0.3}}, {{-1.4}, {0.8}}};
  DoubledField f = doubled_field(dsys, d);
  CHECK(f.a_minus[0] ==
        doctest::Approx(forced_el_acceleration(ho, d.minus)[0]).epsilon(1e-12));
  CHECK(f.a_plus[0] ==
        doctest::Approx(forced_el_acceleration(ho, d.plus)[0]).epsilon(1e-12));
}

TEST_CASE("doubled Hamiltonian field restricts to forced Hamilton equations") {
  oracles::Rng rng(29);
  for (ForcedSystem sys : {van_der_pol(), damped_linear()}) {
    const std::size_t n = static_cast<std::size_t>(sys.dim());
    for (int trial = 0; trial < 100; ++trial) {
      StateCotangent c{rng.vec(n, -2.0, 2.0), rng.vec(n, -2.0, 2.0)};
      DoubledPhaseField f = doubled_hamilton_field(sys, c, c);
      PhaseField ref = forced_hamilton_field(sys, c);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(f.dq[i] == doctest::Approx(ref.dq[i]).epsilon(1e-10));
        CHECK(f.dp[i] == doctest::Approx(ref.dp[i]).epsilon(1e-10));
        CHECK(f.dQ[i] == doctest::Approx(ref.dq[i]).epsilon(1e-10));
        CHECK(f.dP[i] == doctest::Approx(ref.dp[i]).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("generalized potential gradient has the (F, 0, -F, 0) structure") {
  ForcedSystem vdp = van_der_pol();
  oracles::Rng rng(37);
  const std::size_t n = 2;
  for (int trial = 0; trial < 100; ++trial) {
    StateTangent s{rng.vec(n, -2.0, 2.0), rng.vec(n, -2.0, 2.0)};
    Vec z = concat(concat(s.q, s.v), concat(s.q, s.v));
    Vec g = gradient(
        [&](DualSpan zd) {
          return kf_value<Dual>(vdp, zd.subspan(0, n), zd.subspan(n, n),
                                zd.subspan(2 * n, n), zd.subspan(3 * n, n));
        },
        z);
    Vec f = vdp.force(s.q, s.v);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(std::abs(g[i] - f[i]) < 1e-12);
      CHECK(std::abs(g[n + i]) < 1e-12);
      CHECK(std::abs(g[2 * n + i] + f[i]) < 1e-12);
      CHECK(std::abs(g[3 * n + i]) < 1e-12);
    }
  }
}

TEST_CASE("reference solve reproduces closed forms") {
  ForcedSystem ho = harmonic_oscillator();
  const double period = 2.0 * std::numbers::pi;
  TrajectoryRecord rec =
      reference_solve(ho, {{1.0}, {0.0}}, period, 1e-4, {0.0, period});
  CHECK(std::abs(rec.q.back()[0] - 1.0) < 1e-8);
  CHECK(std::abs(rec.p.back()[0]) < 1e-8);

  Benchmark dl = benchmark_damped_linear(1.0, 0.2, 1.0);
  rec = reference_solve(dl.system, {{1.0}, {0.0}}, 1.0, 1e-4, {0.0, 1.0});
  StateTangent exact = dl.exact(1.0);
  CHECK(std::abs(rec.q.back()[0] - exact.q[0]) < 1e-8);
  CHECK(std::abs(rec.v.back()[0] - exact.v[0]) < 1e-8);
}

TEST_CASE("pure damping dissipates the reference energy monotonically") {
  ForcedSystem dl = damped_linear();
  TrajectoryRecord rec = reference_solve(dl, {{1.0}, {0.0}}, 5.0, 1e-3);
  for (std::size_t k = 1; k < rec.energy.size(); ++k)
    CHECK(rec.energy[k] <= rec.energy[k - 1] + 1e-12);
}

TEST_CASE("energy balance dE/dt = <F, v> holds along reference trajectories") {
  ForcedSystem vdp = van_der_pol();
  TrajectoryRecord rec =
      reference_solve(vdp, {{-0.5, -0.25}, {0.0, 4.0}}, 1.0, 1e-3);
  // Simpson quadrature of the power <F, v> against the energy increment.
  const std::size_t m = rec.t.size() - 1;  // even
  REQUIRE(m % 2 == 0);
  const double h = rec.t[1] - rec.t[0];
  auto power = [&](std::size_t k) {
    Vec f = vdp.force(rec.q[k], rec.v[k]);
    return dot(f, rec.v[k]);
  };
  double integral = power(0) + power(m);
  for (std::size_t k = 1; k < m; ++k)
    integral += (k % 2 == 1 ? 4.0 : 2.0) * power(k);
  integral *= h / 3.0;
  CHECK(rec.energy.back() - rec.energy.front() ==
        doctest::Approx(integral).epsilon(1e-8));
}

TEST_CASE("doubled reference trajectories stay on the identities") {
  ForcedSystem vdp = van_der_pol();
  DoubledStateTangent d0 = embed_identity({{-0.5, -0.25}, {0.0, 4.0}});
  TrajectoryRecord rec = reference_solve_doubled(vdp, d0, 1.0, 1e-3);
  CHECK(rec.max_identity_defect() < 1e-9);
  // And it reproduces the plain forced reference.
  TrajectoryRecord ref =
      reference_solve(vdp, {{-0.5, -0.25}, {0.0, 4.0}}, 1.0, 1e-3);
  CHECK(std::abs(rec.q.back()[0] - ref.q.back()[0]) < 1e-9);
  CHECK(std::abs(rec.q.back()[1] - ref.q.back()[1]) < 1e-9);
}

TEST_CASE("AD derivatives of the stock systems agree with differences") {
  ForcedSystem vdp = van_der_pol();
  oracles::Rng rng(47);
  for (int trial = 0; trial < 100; ++trial) {
    Vec z = rng.vec(4, -2.0, 2.0);
    auto lag_d = [&](const Vec& x) {
      return vdp.lagrangian(ConstSpan(x).subspan(0, 2),
                            ConstSpan(x).subspan(2, 2));
    };
    Vec g = gradient(
        [&](DualSpan zd) {
          return vdp.lagrangian(zd.subspan(0, 2), zd.subspan(2, 2));
        },
        z);
    Vec g_fd = oracles::fd_gradient(lag_d, z);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(g[i] == doctest::Approx(g_fd[i]).epsilon(1e-6));

    Mat jf = jacobian(
        [&](DualSpan zd) {
          return vdp.force(zd.subspan(0, 2), zd.subspan(2, 2));
        },
        z);
    Mat jf_fd = oracles::fd_jacobian(
        [&](const Vec& x) {
          return vdp.force(ConstSpan(x).subspan(0, 2),
                           ConstSpan(x).subspan(2, 2));
        },
        z);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(jf(i, j) ==
              doctest::Approx(jf_fd(i, j)).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("energy report carries the sample time") {
  ForcedSystem vdp = van_der_pol();
  EnergyReport rep = energy_report(vdp, {{-0.5, -0.25}, {0.0, 4.0}}, 0.25);
  CHECK(rep.e == doctest::Approx(8.206875));
  CHECK(rep.t == 0.25);
}

TEST_CASE("mass condition reporting and the singular gate") {
  ForcedSystem vdp = van_der_pol();
  CHECK(mass_condition(vdp, {{0.0, 0.0}, {0.0, 0.0}}) == doctest::Approx(1.0));
  // A Lagrangian with a degenerate velocity Hessian trips SingularMass.
  Chart chart(1);
  ForcedSystem degenerate{
      chart, LagrangianFn([](auto q, auto v) { return v[0] * q[0]; }),
      zero_force(1), euclidean_retraction(chart)};
  CHECK_THROWS_AS(forced_el_acceleration(degenerate, {{1.0}, {1.0}}),
                  SingularMass);
}
