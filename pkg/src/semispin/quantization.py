"""SK-corrected Bohr-Sommerfeld quantization, (S + I_SK)(E_n) = (2n + 1) pi hbar.

Each contour family (branch) is quantized separately.  The action is
oriented so that it grows away from the family's root extremum: with
sigma = +1 for minimum-rooted and -1 for maximum-rooted families the
condition reads sigma * Phi(E) = (2n + 1) pi hbar, n = 0, 1, ...
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .dynamics import (NORTH, SOUTH, Tolerances, classical_model,
                       _resolve_branch)
from .errors import NumericalError
from .levels import (BOHR_SOMMERFELD, EXTRAPOLATED, NEAR_SEPARATRIX,
                     QuantizedLevel)

QUANT_RTOL = 1e-12
N_NODES = 24
ROOT_TOL = 2e-9        # in units of pi hbar
ENDPOINT_TOL = 1e-9    # in units of pi hbar
WEYL_POINTS = 400_000


def action_total(E, spec, branch=None, tolerances=Tolerances()):
    """S(E) + I_SK(E) on the selected branch (in that branch's chart)."""
    model = classical_model(spec)
    b = _resolve_branch(model, E, branch)
    orb = model.orbit_on_branch(b, E, tolerances)
    return orb.action + orb.sk_integral


@dataclass
class BranchProfile:
    """Sampled sigma * Phi(E) along a branch, with the extremal limits."""

    branch: object
    sigma: float
    energies: np.ndarray      # ordered from root to far end
    phi: np.ndarray           # sigma * Phi, increasing
    s_int: np.ndarray         # I_SK at the nodes (nan at limits)
    period: np.ndarray
    far_is_limit: bool
    wrap: float
    unwrap_jumps: int = 0

    def interpolant(self):
        return PchipInterpolator(self.phi, self.energies)

    def phi_interp(self):
        x = np.abs(self.energies - self.energies[0])
        return PchipInterpolator(x, self.phi)


def _endpoint_phi(model, cp, chart):
    """Limit of Phi for orbits shrinking onto the extremum ``cp``."""
    phi = cp.A * cp.T
    pole = np.array([0.0, 0.0, 1.0 if chart == SOUTH else -1.0])
    if np.linalg.norm(cp.n - pole) < 1e-9:
        # the extremum is the singular pole of the chart: tiny orbits wind
        # once around it in the chart
        sign = 1.0 if cp.kind == "max" else -1.0
        phi += sign * (4 * np.pi * model.hbar * model.j + 2 * np.pi * model.hbar)
    return phi


def profile_branch(spec, branch, tol=Tolerances(rtol=QUANT_RTOL), n_nodes=N_NODES):
    model = classical_model(spec)
    b = branch
    hbar = model.hbar
    wrap = 2 * np.pi * hbar * (model.j2 + 1)
    e0 = b.e_root
    e1 = b.e_far
    x = 0.5 * (1 - np.cos(np.pi * np.arange(n_nodes + 1) / n_nodes))
    energies = e0 + (e1 - e0) * x
    energies[-1] = e1
    phis = np.empty(len(energies))
    sks = np.full(len(energies), np.nan)
    periods = np.full(len(energies), np.nan)
    phis[0] = b.root.A * b.root.T
    periods[0] = b.root.T
    far_is_limit = not b.end_is_saddle
    last = len(energies) - 1 if far_is_limit else len(energies)
    for i in range(1, last):
        orb = model.orbit_on_branch(b, energies[i], tol)
        phis[i] = orb.action + orb.sk_integral
        sks[i] = orb.sk_integral
        periods[i] = orb.T
    jumps = 0
    for i in range(1, last):
        # remove chart jumps of (2j+1) 2 pi hbar when an orbit crosses the pole
        expect = phis[i - 1] + 0.5 * (periods[i - 1] + periods[i]) * (energies[i] - energies[i - 1])
        k = np.round((phis[i] - expect) / wrap)
        if k != 0:
            phis[i:last] -= k * wrap
            jumps += 1
    if far_is_limit:
        limit = _endpoint_phi(model, b.end, b.chart)
        periods[-1] = b.end.T
        expect = phis[-2] + periods[-1] * (energies[-1] - energies[-2])
        phis[-1] = limit - np.round((limit - expect) / wrap) * wrap
    sigma = 1.0 if phis[-1] > phis[0] else -1.0
    sphi = sigma * phis
    if np.any(np.diff(sphi) <= 0):
        bad = int(np.argmin(np.diff(sphi)))
        raise NumericalError(
            f"S + I_SK is not monotone on branch {b.id} near E = {energies[bad]:.10g}")
    return BranchProfile(b, sigma, energies, sphi, sks, periods, far_is_limit,
                         wrap, jumps)


def _solve_level(model, prof, target, lo, hi, tol, root_tol=ROOT_TOL):
    """Energy on the branch with sigma * Phi = target, bracketed by nodes lo, hi."""
    b = prof.branch
    sigma = prof.sigma
    e = prof.energies
    inv = prof.interpolant()
    fwd = prof.phi_interp()
    ea, eb = e[lo], e[hi]
    fa, fb = prof.phi[lo] - target, prof.phi[hi] - target
    E = float(inv(target))
    history = []
    for _ in range(60):
        E = min(max(E, min(ea, eb)), max(ea, eb))
        orb = model.orbit_on_branch(b, E, tol)
        raw = orb.action + orb.sk_integral
        expect = sigma * float(fwd(abs(E - e[0])))
        k = np.round((sigma * raw - expect) / prof.wrap)
        val = sigma * raw - k * prof.wrap - target
        history.append((E, val))
        if abs(val) <= root_tol * np.pi * model.hbar:
            return E, abs(val), orb
        # keep the bracket
        if (val < 0) == (fa < 0):
            ea, fa = E, val
        else:
            eb, fb = E, val
        if abs(eb - ea) <= 4e-16 * max(abs(ea), abs(eb), model.span * 1e-6):
            return E, abs(val), orb
        # Newton with the period as slope, then secant once two points exist
        dphi_dE = (prof.phi[hi] - prof.phi[lo]) / (e[hi] - e[lo])
        if (len(history) >= 2 and history[-1][0] != history[-2][0]
                and history[-1][1] != history[-2][1]):
            dphi_dE = (history[-1][1] - history[-2][1]) / (history[-1][0] - history[-2][0])
        elif orb.T > 0:
            dphi_dE = np.sign(dphi_dE) * orb.T
        E_new = E - val / dphi_dE if dphi_dE != 0 else np.nan
        if not (min(ea, eb) < E_new < max(ea, eb)):
            # fall back to regula falsi inside the bracket
            E_new = ea - fa * (eb - ea) / (fb - fa)
        E = E_new
    raise NumericalError(f"root search did not converge on branch {b.id} (target {target})")


def quantize(spec, branch, tolerances=Tolerances(rtol=QUANT_RTOL), n_nodes=N_NODES,
             root_tol=ROOT_TOL):
    """Bohr-Sommerfeld levels on one branch, ordered by n."""
    model = classical_model(spec)
    b = branch if not isinstance(branch, str) else model.branch(branch)
    prof = profile_branch(spec, b, tolerances, n_nodes)
    hbar = model.hbar
    unit = np.pi * hbar
    phi = prof.phi
    e = prof.energies
    levels = []
    n_max = int(np.floor((phi[-1] / unit - 1) / 2 + ENDPOINT_TOL))
    for n in range(0, n_max + 1):
        target = (2 * n + 1) * unit
        flags = []
        if target < phi[0] - ENDPOINT_TOL * unit:
            # below the extremum: continue the action quadratically in E
            E = _extrapolate(prof, target)
            resid = 0.0
            flags.append(EXTRAPOLATED)
        elif abs(target - phi[0]) <= ENDPOINT_TOL * unit:
            E, resid = e[0], abs(target - phi[0])
        elif prof.far_is_limit and abs(target - phi[-1]) <= ENDPOINT_TOL * unit:
            E, resid = e[-1], abs(target - phi[-1])
        else:
            hi = int(np.searchsorted(phi, target))
            hi = min(max(hi, 1), len(phi) - 1)
            lo = hi - 1
            E, resid, _ = _solve_level(model, prof, target, lo, hi, tolerances,
                                         root_tol)
            if b.end_is_saddle and hi == len(phi) - 1:
                flags.append(NEAR_SEPARATRIX)
        levels.append(QuantizedLevel(n=n, E=float(E), method=BOHR_SOMMERFELD,
                                     branch=b.id, residual=float(resid),
                                     flags=tuple(flags)))
    return levels


def _extrapolate(prof, target):
    """Quadratic continuation of sigma * Phi(E) through the first three nodes."""
    e = prof.energies[:3]
    p = prof.phi[:3]
    x = e - e[0]
    c = np.polyfit(x, p, 2)
    roots = np.roots([c[0], c[1], c[2] - target])
    roots = roots[np.isreal(roots)].real
    if len(roots) == 0:
        slope = (p[1] - p[0]) / x[1]
        return float(e[0] + (target - p[0]) / slope)
    # the root on the far side of the extremum closest to it
    side = -np.sign(x[1])
    cands = [r for r in roots if np.sign(r) == side or r == 0]
    pick = min(cands, key=abs) if cands else min(roots, key=abs)
    return float(e[0] + pick)


@dataclass
class QuantizationReport:
    levels: list
    branches: list
    gaps: list = field(default_factory=list)
    missing: int = 0
    notes: list = field(default_factory=list)


def weyl_fractions(spec, intervals, n_points=WEYL_POINTS):
    """Fraction of the sphere's area with symbol energy in each interval, and
    the sorted energies of a uniform point set (for quantiles)."""
    from . import _kernels as K
    model = classical_model(spec)
    i = np.arange(n_points) + 0.5
    zc = 1 - 2 * i / n_points
    phi = np.pi * (1 + 5 ** 0.5) * i
    rc = np.sqrt(1 - zc ** 2)
    n = np.stack([rc * np.cos(phi), rc * np.sin(phi), zc], axis=1)
    south = n[:, 2] <= 0
    energies = np.empty(n_points)
    for chart, sel in ((SOUTH, south), (NORTH, ~south)):
        nn = n[sel]
        if chart == NORTH:
            nn = nn * np.array([1.0, -1.0, -1.0])
        c = (nn[:, 0] - 1j * nn[:, 1]) / (1 - nn[:, 2])
        e, _, _ = K.symbol_grid(np.ascontiguousarray(c.real), np.ascontiguousarray(c.imag),
                                model.j2, model.hbar, model._bands[chart], model.bw,
                                model.lnbh, model.lad)
        energies[sel] = e
    energies.sort()
    fr = [float(np.mean((energies >= a) & (energies <= bb))) for a, bb in intervals]
    return fr, energies


def quantize_all(spec, tolerances=Tolerances(rtol=QUANT_RTOL), n_nodes=N_NODES,
                 root_tol=ROOT_TOL):
    """Levels of every branch merged by energy; global index = rank.

    When the total falls short of 2j + 1, the missing levels are those hidden
    in separatrix guard bands.  They are given best-effort energies at the
    phase-space-volume quantiles of the band and flagged near-separatrix.
    """
    model = classical_model(spec)
    levels = []
    for b in model.branches:
        levels.extend(quantize(spec, b, tolerances, n_nodes, root_tol))
    dim = model.j2 + 1
    missing = dim - len(levels)
    report = QuantizationReport(levels=[], branches=[b.describe() for b in model.branches],
                                missing=missing)
    # guard intervals around saddle ends, merged
    ivals = sorted({(b.e_end - b.guard, b.e_end + b.guard)
                    for b in model.branches if b.end_is_saddle})
    merged = []
    for a, c in ivals:
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], c))
        else:
            merged.append((a, c))
    if missing > 0 and merged:
        fr, sorted_e = weyl_fractions(spec, merged)
        weights = np.array(fr) * dim
        share = _largest_remainder(weights, missing)
        for (a, c), m, w in zip(merged, share, weights):
            report.gaps.append({"interval": [a, c], "levels": int(m),
                                "weyl_count": float(w)})
            inside = sorted_e[(sorted_e >= a) & (sorted_e <= c)]
            for i in range(m):
                q = (i + 0.5) / m
                E = float(np.quantile(inside, q)) if len(inside) else 0.5 * (a + c)
                levels.append(QuantizedLevel(n=-1, E=E, method=BOHR_SOMMERFELD,
                                             branch="separatrix",
                                             residual=float("nan"),
                                             flags=(NEAR_SEPARATRIX,)))
    elif missing < 0:
        report.notes.append(f"{-missing} more semiclassical levels than states")
    elif missing > 0:
        report.notes.append(f"{missing} levels unaccounted for")
    levels.sort(key=lambda lv: (lv.E, str(lv.branch), lv.n))
    report.levels = [lv.with_index(i) for i, lv in enumerate(levels)]
    return report


def _largest_remainder(weights, total):
    if weights.sum() <= 0:
        out = np.zeros(len(weights), dtype=int)
        out[0] = total
        return out
    w = weights / weights.sum() * total
    base = np.floor(w).astype(int)
    rest = total - base.sum()
    order = np.argsort(-(w - base), kind="stable")
    base[order[:rest]] += 1
    return base
