import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semispin.errors import ModelError
from semispin.phase_space import PhaseGrid
from semispin.spin_algebra import (ModelSpec, build_operators, classical_symbol,
                                   coherent_vector, eigendecompose, husimi_log_values,
                                   jz_model, lmg_model, metric)

from conftest import jz_exact_log


@pytest.mark.parametrize("j", [0.5, 1, 2.5, 7, 50, 200])
def test_su2_commutators(j):
    ops = build_operators(jz_model(j))
    h = ops.spec.hbar
    scale = h * h * j * (j + 1)
    for a, b, c in ((ops.Jx, ops.Jy, ops.Jz), (ops.Jy, ops.Jz, ops.Jx), (ops.Jz, ops.Jx, ops.Jy)):
        err = a @ b - b @ a - 1j * h * c
        assert np.max(np.abs(err)) <= 1e-12 * scale
    casimir = ops.Jx @ ops.Jx + ops.Jy @ ops.Jy + ops.Jz @ ops.Jz
    assert np.allclose(casimir, h * h * j * (j + 1) * np.eye(ops.spec.dim), rtol=0, atol=1e-12 * scale)


def test_spin_half_matrices():
    ops = build_operators(ModelSpec(j=0.5, terms=((1.0, ("Jz",)),), hbar=0.3))
    assert np.allclose(ops.Jz, np.diag([-0.15, 0.15]))
    assert np.allclose(ops.Jplus, [[0, 0], [0.3, 0]])
    assert np.allclose(ops.Jminus, ops.Jplus.T)


def test_model_validation():
    with pytest.raises(ModelError):
        ModelSpec(j=0.3, terms=((1.0, ("Jz",)),))
    with pytest.raises(ModelError, match="Jq"):
        ModelSpec(j=1, terms=((1.0, ("Jz",)), (2.0, ("Jq",))))
    with pytest.raises(ModelError):
        ModelSpec(j=1, terms=((1.0, "Jz"),))
    with pytest.raises(ModelError, match="Hermitian"):
        build_operators(ModelSpec(j=1, terms=((1.0, ("J+",)),)))


def test_lmg_hamiltonian_matrix():
    spec = lmg_model(3, omega=0.7, hbar_alpha=0.4)
    ops = build_operators(spec)
    h = spec.hbar
    alpha = 0.4 / h
    ref = 0.7 * ops.Jz + alpha * (ops.Jx @ ops.Jx - ops.Jy @ ops.Jy)
    assert np.allclose(ops.H, ref, atol=1e-13)
    assert np.allclose(ops.H, ops.H.conj().T)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 400), st.floats(-30, 30), st.floats(-30, 30))
def test_coherent_norm_closed_form(twoj, x, y):
    z = complex(x, y)
    cv = coherent_vector(z, twoj / 2)
    ref = twoj * np.log1p(abs(z) ** 2)
    assert abs(cv.log_norm2 - ref) <= 1e-10 * max(1.0, abs(ref))


def test_coherent_vector_examples():
    cv = coherent_vector(0, 3)
    assert cv.norm2 == 1.0 and cv.components[0] == 1.0
    assert np.isclose(coherent_vector(1.0, 0.5).norm2, 2.0, rtol=1e-14)
    # j = 1: exp(z J+)|1,-1> = (1, sqrt2 z, z^2)
    cv = coherent_vector(2j, 1)
    assert np.allclose(cv.components, [1, np.sqrt(2) * 2j, -4])
    assert np.isclose(cv.norm2, 25.0, rtol=1e-14)


def test_coherent_vector_large_z_no_overflow():
    cv = coherent_vector(1e5, 200)
    assert np.isfinite(cv.log_norm2)
    assert abs(cv.log_norm2 - 400 * np.log1p(1e10)) < 1e-9 * cv.log_norm2


def test_spin_half_husimi_matches_direct_overlap():
    grid = PhaseGrid(8, 0.5, 1.0)
    r = np.abs(grid.z_values()) ** 2
    mask = grid.mask()
    logs = husimi_log_values(np.array([0.0, 1.0]), grid)
    # |<z|1/2,1/2>|^2 / <z|z> = r / (1 + r)
    assert np.allclose(np.exp(logs[mask]), (r / (1 + r))[mask], rtol=1e-13)


def test_spin_half_husimi_at_r_one():
    grid = PhaseGrid(2, 0.5, 1.0)
    # both diagonal cells of a 2x2 grid sit at |q| = |p| = r/2, i.e. |z| = 1
    z = grid.z_values()
    assert np.allclose(np.abs(z), 1.0)
    logs = husimi_log_values(np.array([0.0, 1.0]), grid)
    assert np.allclose(np.exp(logs), 0.5, rtol=1e-14)


@pytest.mark.parametrize("m", [-20, -7, 0, 13, 20])
def test_exact_husimi_jz_closed_form(m):
    j = 20
    spec = jz_model(j)
    levels, states = eigendecompose(build_operators(spec))
    grid = PhaseGrid(64, j, spec.hbar)
    logs = husimi_log_values(states[:, j + m], grid)
    r = np.abs(grid.z_values()) ** 2
    sel = grid.mask() & (r > 1e-6)
    ref = jz_exact_log(j, m, r[sel])
    assert np.max(np.abs(logs[sel] - ref)) < 1e-10
    assert np.isclose(levels[j + m].E, spec.hbar * m, atol=1e-14)


def test_jz_symbol_closed_forms():
    rng = np.random.default_rng(3)
    for j in (5, 20):
        ops = build_operators(jz_model(j, omega=1.3))
        h = ops.spec.hbar
        assert np.isclose(classical_symbol(ops, 0).H, -1.3 * h * j, rtol=1e-14)
        for _ in range(10):
            z = complex(*rng.normal(size=2) * 1.5)
            r = abs(z) ** 2
            s = classical_symbol(ops, z)
            assert np.isclose(s.H, 1.3 * h * j * (r - 1) / (1 + r), rtol=1e-12, atol=1e-14)
            assert np.isclose(s.A, 1.3 * h / 2, rtol=1e-10)
            assert s.g == metric(z, j) == 2 * j / (1 + r) ** 2


def _random_hermitian_terms(rng):
    terms = []
    for mono in (("Jx",), ("Jy",), ("Jz",), ("Jx", "Jx"), ("Jz", "Jz"), ("Jy", "Jz", "Jy")):
        terms.append((rng.normal(), mono))
    c = rng.normal()
    terms += [(c, ("Jx", "Jz")), (c, ("Jz", "Jx"))]
    c = rng.normal()
    terms += [(c, ("J+", "J+")), (c, ("J-", "J-"))]
    return tuple(terms)


@pytest.mark.parametrize("seed", range(4))
def test_ladder_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ops = build_operators(ModelSpec(j=5, terms=_random_hermitian_terms(rng)))
    h = 1e-5
    for _ in range(5):
        z = complex(*rng.normal(size=2) * 0.8)
        s = classical_symbol(ops, z)
        f = lambda w: classical_symbol(ops, w)
        dx = (f(z + h).H - f(z - h).H) / (2 * h)
        dy = (f(z + 1j * h).H - f(z - 1j * h).H) / (2 * h)
        fd_dz = 0.5 * (dx - 1j * dy)
        scale = max(abs(s.dHdz), 1e-3 * abs(s.H), 1e-12)
        assert abs(fd_dz - s.dHdz) <= 1e-5 * scale
        assert abs(np.conj(fd_dz) - s.dHdzbar) <= 1e-5 * scale
        # second derivatives from differences of the first
        gx = (f(z + h).dHdzbar - f(z - h).dHdzbar) / (2 * h)
        gy = (f(z + 1j * h).dHdzbar - f(z - 1j * h).dHdzbar) / (2 * h)
        fd_mixed = 0.5 * (gx - 1j * gy)
        fd_bb = 0.5 * (gx + 1j * gy)
        scale2 = max(abs(s.d2Hdzdzbar), abs(s.d2Hdzbar2), 1e-12)
        assert abs(fd_mixed - s.d2Hdzdzbar) <= 1e-5 * scale2
        assert abs(fd_bb - s.d2Hdzbar2) <= 1e-5 * scale2


def test_symbol_real_at_real_points():
    rng = np.random.default_rng(11)
    ops = build_operators(ModelSpec(j=5, terms=_random_hermitian_terms(rng)))
    for _ in range(5):
        z = complex(*rng.normal(size=2))
        v = coherent_vector(z, 5).normalized()
        e = np.vdot(v, ops.H @ v)
        assert abs(e.imag) <= 1e-12 * abs(e)
        assert np.isclose(classical_symbol(ops, z).H, e.real, rtol=1e-12)


def test_eigendecompose_residuals_and_orthonormality(lmg_exact, lmg_spec):
    levels, states = lmg_exact
    ops = build_operators(lmg_spec)
    E = np.array([lv.E for lv in levels])
    assert len(levels) == 401
    # degenerate pairs are ordered by parity block, equal up to rounding
    assert np.all(np.diff(E) >= -1e-10 * ops.norm)
    res = np.linalg.norm(ops.H @ states - states * E, axis=0)
    assert np.max(res) <= 1e-9 * ops.norm
    assert np.max(np.abs(states.conj().T @ states - np.eye(401))) <= 1e-10


def test_lmg_alpha_zero_is_jz():
    lv_l, _ = eigendecompose(build_operators(lmg_model(6, omega=1.0, hbar_alpha=0.0)))
    lv_z, _ = eigendecompose(build_operators(jz_model(6)))
    assert np.allclose([a.E for a in lv_l], [b.E for b in lv_z], atol=1e-14)


def test_lmg_eigenvalues_vs_characteristic_polynomial():
    spec = lmg_model(10, omega=1.0, hbar_alpha=3.0)
    ops = build_operators(spec)
    levels, _ = eigendecompose(ops)
    E = np.array([lv.E for lv in levels])
    # independent oracle: roots of det(H - x) for each parity block, in
    # exact-ish arithmetic via numpy.poly on the real symmetric blocks
    H = ops.H.real
    roots = []
    for par in (0, 1):
        idx = np.arange(par, 21, 2)
        block = H[np.ix_(idx, idx)]
        scale = np.max(np.abs(block))
        coeffs = np.poly(block / scale)
        roots.extend(np.sort(np.roots(coeffs).real) * scale)
    roots = np.sort(roots)
    assert np.allclose(E, roots, atol=1e-6 * np.max(np.abs(E)))


def test_lmg_degenerate_pairs_flagged(lmg_exact):
    levels, _ = lmg_exact
    assert levels[269].E == pytest.approx(levels[270].E, rel=1e-9)
    assert levels[269].has_flag("degenerate") and levels[270].has_flag("degenerate")
