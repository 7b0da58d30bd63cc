import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semispin.dynamics import (PhasePoint, Tolerances, classical_model, hamilton_rhs,
                               integrate_periodic_orbit, orbit_at_energy, orbit_functionals)
from semispin.errors import (CriticalEnergyError, FixedPointError, NumericalError,
                             UnreachableEnergyError)
from semispin.phase_space import qp_from_z, z_from_qp
from semispin.spin_algebra import build_operators, classical_symbol, jz_model


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 0.999), st.floats(0, 2 * np.pi), st.sampled_from([0.5, 3, 50, 200]))
def test_chart_round_trip(rho, theta, j):
    hbar = 1.0 / j
    R = 2 * np.sqrt(hbar * j)
    q, p = rho * R * np.cos(theta), rho * R * np.sin(theta)
    z = z_from_qp(q, p, hbar, j)
    q2, p2 = qp_from_z(z, hbar, j)
    assert abs(q2 - q) <= 1e-12 * R and abs(p2 - p) <= 1e-12 * R
    r = abs(z) ** 2
    assert np.isclose(r, (q * q + p * p) / (4 * hbar * j - q * q - p * p), rtol=1e-12, atol=1e-300)


def test_jz_velocity():
    ops = build_operators(jz_model(7, omega=1.7))
    for z in (0.3 + 0.2j, -1.5j, 4.0):
        v = hamilton_rhs(PhasePoint(z), classical_symbol(ops, z), ops.spec.hbar)
        assert abs(v - (-1j * 1.7 * z)) <= 1e-12 * abs(z)
        assert np.isclose(abs(v), 1.7 * abs(z), rtol=1e-12)


def test_velocity_vanishes_at_critical_points(lmg_spec):
    model = classical_model(lmg_spec)
    for cp in model.critical_points:
        v = model.velocity(cp.chart, cp.coord)
        assert abs(v) <= 1e-9 * model.v_unit


@pytest.mark.parametrize("j", [5, 20, 200])
@pytest.mark.parametrize("r", [0.05, 0.7, 1.0, 3.0, 40.0])
def test_jz_orbit_triple(j, r):
    spec = jz_model(j)
    h = spec.hbar
    z0 = np.sqrt(r) * np.exp(0.4j)
    orb = integrate_periodic_orbit(PhasePoint(z0), spec, Tolerances(rtol=1e-12))
    assert orb.T == pytest.approx(2 * np.pi, rel=1e-8)
    S, I = orb.action, orb.sk_integral
    if orb.chart == "north":
        # chart-local values: the two charts differ by 2 pi hbar (2j + 1)
        S, I = S + 4 * np.pi * h * j, I + 2 * np.pi * h
    assert S == pytest.approx(4 * np.pi * h * j * r / (1 + r), rel=1e-8)
    assert I == pytest.approx(np.pi * h, rel=1e-8)
    assert orb.energy_drift <= 1e-12
    assert orb.closure_residual <= 1e-8 * np.max(np.abs(orb.coords))


def test_fixed_point_start_raises():
    with pytest.raises(FixedPointError):
        integrate_periodic_orbit(PhasePoint(0j), jz_model(5))


def test_jz_equator_orbit():
    spec = jz_model(10)
    orb = orbit_at_energy(0.0, spec)
    assert np.allclose(np.abs(orb.z), 1.0, atol=1e-9)
    assert orb.action == pytest.approx(2 * np.pi * spec.hbar * 10, rel=1e-9)


def test_extremal_energy_is_critical():
    spec = jz_model(10)
    with pytest.raises(CriticalEnergyError):
        orbit_at_energy(-spec.hbar * 10, spec)
    with pytest.raises(NumericalError):
        orbit_at_energy(-2 * spec.hbar * 10, spec)


def test_jz_functionals():
    T, dI, d2S = orbit_functionals(0.3, None, jz_model(20))
    assert T == pytest.approx(2 * np.pi, rel=1e-9)
    assert abs(dI) <= 1e-7
    assert abs(d2S) <= 1e-4


def test_lmg_orbit_invariants(lmg_spec):
    model = classical_model(lmg_spec)
    for E, b in ((-150000.0, "min0"), (-3000.0, "min1"), (60000.0, "max0")):
        orb = orbit_at_energy(E, lmg_spec, branch=b)
        assert abs(orb.energy - E) <= 1e-10 * model.span
        assert orb.energy_drift <= 1e-9
        assert orb.closure_residual <= 1e-8 * np.max(np.abs(orb.coords))
        assert orb.branch == b


def test_lmg_quadrature_converges(lmg_spec):
    a = orbit_at_energy(-50000.0, lmg_spec, branch="min0", tolerances=Tolerances(rtol=1e-10))
    b = orbit_at_energy(-50000.0, lmg_spec, branch="min0", tolerances=Tolerances(rtol=5e-11))
    assert abs(a.action - b.action) <= 1e-8 * abs(a.action)
    assert abs(a.sk_integral - b.sk_integral) <= 1e-8 * abs(a.sk_integral)
    assert abs(a.T - b.T) <= 1e-8 * a.T


def test_lmg_two_wells_are_mirror_images(lmg_spec):
    a = orbit_at_energy(-120000.0, lmg_spec, branch="min0")
    b = orbit_at_energy(-120000.0, lmg_spec, branch="min1")
    assert a.T == pytest.approx(b.T, rel=1e-8)
    assert a.action == pytest.approx(b.action, rel=1e-8)
    # the contours are disjoint: one in each half of the p axis
    pa = np.sign(np.mean(a.z.imag))
    pb = np.sign(np.mean(b.z.imag))
    assert pa == -pb != 0


def test_separatrix_guard(lmg_spec):
    # the saddles sit at E = -1 and +1, guard 1e-3 of the span
    for E in (-11.0, 0.0, 1.0):
        with pytest.raises(CriticalEnergyError):
            orbit_at_energy(E, lmg_spec)
    with pytest.raises(UnreachableEnergyError):
        orbit_at_energy(3e5, lmg_spec)


def _ds_de(E, spec, branch, dE):
    lo = orbit_at_energy(E - dE, spec, branch=branch)
    hi = orbit_at_energy(E + dE, spec, branch=branch)
    mid = orbit_at_energy(E, spec, branch=branch)
    return (hi.action - lo.action) / (2 * dE), mid.T


def test_ds_de_equals_period_jz():
    spec = jz_model(20)
    rng = np.random.default_rng(5)
    for E in rng.uniform(-0.95, 0.95, 10):
        slope, T = _ds_de(E, spec, None, 1e-5)
        assert abs(abs(slope) - T) <= 1e-4 * T


def test_ds_de_equals_period_lmg(lmg_spec):
    model = classical_model(lmg_spec)
    rng = np.random.default_rng(9)
    dE = 1e-5 * model.span
    for _ in range(10):
        b = model.branches[rng.integers(len(model.branches))]
        lo, hi = b.e_lo + 0.01 * model.span, b.e_hi - 0.01 * model.span
        E = rng.uniform(lo, hi)
        slope, T = _ds_de(E, lmg_spec, b.id, dE)
        assert abs(abs(slope) - T) <= 1e-4 * T


def test_lmg_well_bottom_curvature_richardson(lmg_spec):
    model = classical_model(lmg_spec)
    b = model.branch("min0")
    E = b.e_root + 0.05 * model.span
    dE = 1e-3 * model.span
    T1, _, c1 = orbit_functionals(E, dE, lmg_spec, branch=b)
    T2, _, c2 = orbit_functionals(E, dE / 2, lmg_spec, branch=b)
    assert np.isfinite(c1) and np.isfinite(c2)
    assert abs(c1 - c2) <= 1e-2 * abs(c2)
    # consistent with the slope of the period
    Tp = orbit_at_energy(E + dE, lmg_spec, branch=b).T
    Tm = orbit_at_energy(E - dE, lmg_spec, branch=b).T
    assert abs((Tp - Tm) / (2 * dE) - c2) <= 1e-2 * abs(c2)
