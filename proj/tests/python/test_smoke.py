import math

import fvi


def test_benchmark_defaults():
    b = fvi.van_der_pol()
    assert b.name == "van_der_pol"
    assert b.dim == 2
    assert b.q0 == [-0.5, -0.25]
    assert b.v0 == [0.0, 4.0]
    assert math.isclose(fvi.energy(b, b.q0, b.v0), 8.206875, rel_tol=1e-14)


def test_forced_acceleration_and_legendre():
    b = fvi.van_der_pol()
    a = fvi.forced_acceleration(b, [0.0, 0.0], [1.0, 0.0])
    assert abs(a[0] - 0.5) < 1e-14
    assert abs(a[1]) < 1e-14
    p = fvi.legendre(b, [-0.5, -0.25], [0.0, 4.0])
    assert p == [0.0, 4.0]


def test_generalized_potential_antisymmetry():
    b = fvi.van_der_pol()
    q, v, Q, V = [1.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, 0.0]
    k = fvi.generalized_potential(b, q, v, Q, V)
    assert math.isclose(k, -0.25, rel_tol=1e-14)
    assert fvi.generalized_potential(b, Q, V, q, v) == -k
    assert fvi.doubled_lagrangian(b, q, v, q, v) == 0.0


def test_simulate_stays_on_identities():
    b = fvi.van_der_pol()
    rec = fvi.simulate(b, h=0.01, steps=100, family="lobatto", stages=3)
    assert len(rec["t"]) == 101
    assert max(rec["identity_defect"]) < 1e-9
    assert all(math.isfinite(x) for row in rec["q"] for x in row)
    # identity fast path lands on the same trajectory
    fast = fvi.simulate(b, h=0.01, steps=100, family="lobatto", stages=3,
                        mode="identity")
    drift = max(abs(a - c) for ra, rc in zip(rec["q"], fast["q"])
                for a, c in zip(ra, rc))
    assert drift < 1e-9


def test_discrete_forces_match_the_alpha_formula():
    b = fvi.damped_linear()
    fm, fp = fvi.discrete_forces(b, [0.0], [0.1], 0.1)
    assert math.isclose(fm[0], -0.01, rel_tol=1e-12)
    assert math.isclose(fp[0], -0.01, rel_tol=1e-12)


def test_reference_tracks_the_discrete_run():
    b = fvi.van_der_pol()
    ref = fvi.reference(b, t_end=1.0, h_ref=1e-3)
    rec = fvi.simulate(b, h=0.002, steps=500, family="lobatto", stages=3)
    assert abs(ref["energy"][-1] - rec["energy"][-1]) < 1e-8


def test_midpoint_convergence_slope():
    b = fvi.damped_linear()
    st = fvi.convergence(b, family="alpha", alpha=0.5, h_min=4e-3,
                         h_max=0.128, points=4)
    assert st["method"] == "midpoint"
    assert abs(st["slope"] - 2.0) < 0.1
    assert st["r2"] > 0.99
