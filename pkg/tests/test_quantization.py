import numpy as np
import pytest

from semispin.levels import BOHR_SOMMERFELD, EXTRAPOLATED, NEAR_SEPARATRIX
from semispin.quantization import action_total, quantize, quantize_all
from semispin.spin_algebra import ModelSpec, jz_model, lmg_model
from semispin.dynamics import classical_model


def test_jz_action_total_closed_form():
    j = 10
    spec = jz_model(j)
    h = spec.hbar
    for E in np.linspace(-0.9, 0.95, 7):
        r = (j + E / h) / (j - E / h)
        ref = 4 * np.pi * h * j * r / (1 + r) + np.pi * h
        assert action_total(E, spec) == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("j,omega", [(5, 1.0), (7.5, 2.3), (20, 1.0)])
def test_jz_levels_exact(j, omega):
    spec = jz_model(j, omega=omega)
    h = spec.hbar
    rep = quantize_all(spec)
    E = np.array([lv.E for lv in rep.levels])
    n = np.arange(int(2 * j) + 1)
    assert len(E) == len(n)
    assert np.max(np.abs(E - h * omega * (n - j))) <= 1e-8 * h * omega
    for lv in rep.levels:
        assert lv.method == BOHR_SOMMERFELD
        assert lv.residual <= 1e-8 * np.pi * h


def test_lmg_alpha_zero_matches_jz():
    a = quantize_all(lmg_model(6, hbar_alpha=0.0))
    b = quantize_all(jz_model(6))
    assert np.allclose([x.E for x in a.levels], [y.E for y in b.levels], atol=1e-9)


def test_arbitrary_hbar_is_respected():
    spec = ModelSpec(j=4, terms=((0.5, ("Jz",)),), hbar=0.01)
    E = [lv.E for lv in quantize_all(spec).levels]
    assert np.allclose(E, 0.5 * 0.01 * (np.arange(9) - 4), atol=1e-12)


def test_lmg_census_and_counts(lmg_report, lmg_spec):
    rep = lmg_report
    assert len(rep.levels) == 401
    assert [b["id"] for b in rep.branches] == ["min0", "min1", "max0", "max1"]
    assert rep.missing == sum(g["levels"] for g in rep.gaps)
    flagged = [lv for lv in rep.levels if lv.branch == "separatrix"]
    assert len(flagged) == rep.missing
    assert all(lv.has_flag(NEAR_SEPARATRIX) for lv in flagged)
    assert [lv.index for lv in rep.levels] == list(range(401))
    E = [lv.E for lv in rep.levels]
    assert E == sorted(E)


def test_lmg_branch_levels_monotone_and_converged(lmg_report, lmg_spec):
    h = lmg_spec.hbar
    by_branch = {}
    for lv in lmg_report.levels:
        by_branch.setdefault(lv.branch, []).append(lv)
    for bid, lvs in by_branch.items():
        if bid == "separatrix":
            continue
        lvs.sort(key=lambda lv: lv.n)
        assert [lv.n for lv in lvs] == list(range(len(lvs)))
        E = np.array([lv.E for lv in lvs])
        step = np.diff(E) if bid.startswith("min") else -np.diff(E)
        assert np.all(step > 0)
        for lv in lvs:
            if not lv.has_flag(EXTRAPOLATED):
                assert lv.residual <= 1e-8 * np.pi * h


def test_lmg_mirror_wells_have_equal_levels(lmg_report):
    a = sorted(lv.E for lv in lmg_report.levels if lv.branch == "min0")
    b = sorted(lv.E for lv in lmg_report.levels if lv.branch == "min1")
    assert len(a) == len(b)
    assert np.allclose(a, b, rtol=0, atol=1e-6)


def test_single_branch_quantize_matches_merged(lmg_report, lmg_spec):
    model = classical_model(lmg_spec)
    lv = quantize(lmg_spec, model.branch("max0"))
    merged = sorted(x.E for x in lmg_report.levels if x.branch == "max0")
    assert sorted(x.E for x in lv) == merged
