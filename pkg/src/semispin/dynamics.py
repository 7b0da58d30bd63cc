"""Classical spin dynamics in the stereographic chart.

Two charts cover the sphere: the south chart z (singular at the north pole)
and the north chart zeta = 1/z, in which the symbol of H equals the symbol of
X H X with X the basis reversal k -> 2j - k.  An orbit is always integrated
in a single chart, chosen per contour family so that the family stays away
from the chart's singular pole.  Action and SK integrals are chart-local;
between charts they differ by integer multiples of 2 pi hbar (2j + 1), which
leaves the quantized energies unchanged.
"""

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .errors import (BranchChangeError, CriticalEnergyError, FixedPointError,
                     ModelError, NoReturnError, NumericalError,
                     UnreachableEnergyError)
from .phase_space import qp_from_z, sphere_from_z, z_from_qp, z_from_sphere
from .spin_algebra import (SymbolValue, build_operators, half_log_binomials,
                           ladder_coefficients, metric)

SOUTH = "south"
NORTH = "north"

DEFAULT_RTOL = 1e-11
GUARD_FRACTION = 1e-3
DE_FRACTION = 1e-4
RAY_STEP = 4e-3


@dataclass(frozen=True)
class PhasePoint:
    """A real phase point, stored by its stereographic coordinate."""

    z: complex

    @classmethod
    def from_qp(cls, q, p, hbar, j):
        if q * q + p * p >= 4.0 * hbar * j:
            raise ModelError("(q, p) lies outside the open phase disk")
        return cls(complex(z_from_qp(q, p, hbar, j)))

    def qp(self, hbar, j):
        q, p = qp_from_z(self.z, hbar, j)
        return float(q), float(p)


@dataclass(frozen=True)
class Tolerances:
    rtol: float = DEFAULT_RTOL
    max_steps: int = 1_000_000
    period_budget: float = 1e4


@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    """A closed classical trajectory.

    ``samples`` holds rows (t, Re c, Im c) in the chart named by ``chart``;
    ``z`` gives the same points in the south chart.
    """

    samples: np.ndarray
    T: float
    energy: float
    action: float
    sk_integral: float
    closure_residual: float
    chart: str
    energy_drift: float
    branch: object = None
    start: complex = 0j
    n_steps: int = 0

    @property
    def t(self):
        return self.samples[:, 0]

    @property
    def coords(self):
        return self.samples[:, 1] + 1j * self.samples[:, 2]

    @property
    def z(self):
        c = self.coords
        if self.chart == SOUTH:
            return c
        with np.errstate(divide="ignore", invalid="ignore"):
            return 1.0 / c

    def sphere(self):
        return chart_to_sphere(self.chart, self.coords)


def chart_to_sphere(chart, c):
    n = sphere_from_z(c)
    if chart == NORTH:
        # zeta = 1/z is the rotation by pi about the x axis
        n = n * np.array([1.0, -1.0, -1.0])
    return n


def sphere_to_chart(chart, n):
    n = np.asarray(n, dtype=float)
    if chart == NORTH:
        n = n * np.array([1.0, -1.0, -1.0])
    return z_from_sphere(n)


def chart_for(n):
    return SOUTH if n[2] <= 0 else NORTH


def hamilton_rhs(point, symbol, hbar):
    """dz/dt = dH/dzbar / (i hbar g) at a real phase point."""
    z = point.z if isinstance(point, PhasePoint) else complex(point)
    if abs(z - symbol.z) > 1e-14 * (1 + abs(z)):
        raise ModelError("symbol was evaluated at a different point")
    return complex(symbol.dHdzbar / (1j * hbar * symbol.g))


@dataclass(frozen=True)
class CriticalPoint:
    n: np.ndarray
    chart: str
    coord: complex
    energy: float
    kind: str            # "min", "max", "saddle" or "degenerate"
    a: float             # d2H/dz dzbar
    b: complex           # d2H/dzbar^2
    A: float
    T: float             # harmonic period (nan for saddles)

    def phi(self):
        """Limit of S + I_SK for orbits shrinking onto this extremum."""
        return self.A * self.T


@dataclass(frozen=True, eq=False)
class Branch:
    """A family of periodic orbits around one extremum (the root)."""

    id: str
    root: CriticalPoint
    end: CriticalPoint
    chart: str
    ray: np.ndarray           # sphere points, energies monotone away from root
    ray_energy: np.ndarray
    e_root: float
    e_end: float
    guard: float

    @property
    def rising(self):
        return self.root.kind == "min"

    @property
    def end_is_saddle(self):
        return self.end.kind == "saddle"

    @property
    def e_far(self):
        """Last energy reachable before the guard band of the end."""
        if not self.end_is_saddle:
            return self.e_end
        return self.e_end - self.guard if self.rising else self.e_end + self.guard

    @property
    def e_lo(self):
        return min(self.e_root, self.e_far)

    @property
    def e_hi(self):
        return max(self.e_root, self.e_far)

    def contains(self, E):
        return self.e_lo <= E <= self.e_hi

    def describe(self):
        return {"id": self.id, "root": self.root.kind, "end": self.end.kind,
                "E_root": self.e_root, "E_end": self.e_end, "chart": self.chart}


class ClassicalModel:
    """Everything classical about one ModelSpec, with caches."""

    def __init__(self, spec, ops=None):
        self.spec = spec
        self.ops = ops if ops is not None else build_operators(spec)
        self.j = spec.j
        self.j2 = spec.twoj
        self.hbar = spec.hbar
        self.lnbh = half_log_binomials(self.j2)
        self.lad = ladder_coefficients(self.j2)
        self.bw = self.ops.bandwidth
        south = np.ascontiguousarray(self.ops.bands)
        north = np.ascontiguousarray(south[::-1, ::-1])
        self._bands = {SOUTH: south, NORTH: north}

    # -- symbol access ------------------------------------------------------
    def eval(self, chart, c, second=False):
        c = complex(c)
        return K.symbol_eval(c.real, c.imag, self.j2, self._bands[chart],
                             self.bw, self.lnbh, self.lad, second)

    def energy_at(self, n):
        chart = chart_for(n)
        c = complex(sphere_to_chart(chart, n))
        return self.eval(chart, c)[0]

    def symbol(self, z):
        """SymbolValue at a finite south-chart point (compiled path)."""
        z = complex(z)
        E, dz, dzb, d2, d2bb, A = self.eval(SOUTH, z, True)
        return SymbolValue(z=z, H=float(E), dHdz=complex(dz), dHdzbar=complex(dzb),
                           A=float(A), g=metric(z, self.j),
                           d2Hdzdzbar=float(d2.real), d2Hdzbar2=complex(d2bb))

    def velocity(self, chart, c):
        dzb = self.eval(chart, c)[2]
        return K.velocity(c.real, c.imag, dzb, self.j2, self.hbar)

    # -- global structure ---------------------------------------------------
    @cached_property
    def critical_points(self):
        return _find_critical_points(self)

    @cached_property
    def span(self):
        energies = [c.energy for c in self.critical_points]
        span = max(energies) - min(energies)
        if not span > 0:
            raise NumericalError("classical symbol is constant")
        return span

    @property
    def guard(self):
        return GUARD_FRACTION * self.span

    @cached_property
    def v_unit(self):
        """Velocity scale |dz/dt| of a typical orbit, used for fixed-point tests."""
        return self.span / (self.hbar * self.j2)

    @cached_property
    def branches(self):
        return _census(self)

    def branch(self, branch_id):
        for b in self.branches:
            if b.id == branch_id:
                return b
        raise ModelError(f"unknown branch {branch_id!r}")

    # -- orbits ------------------------------------------------------------
    def integrate(self, chart, c0, tol=Tolerances(), t_scale=None):
        c0 = complex(c0)
        if t_scale is None:
            t_scale = self._t_scale
        status, T, S, I, samples, steps = K.integrate_orbit(
            c0.real, c0.imag, self.j2, self.hbar, self._bands[chart], self.bw,
            self.lnbh, self.lad, tol.rtol, tol.period_budget * t_scale,
            tol.max_steps, 1e-14 * self.v_unit)
        if status == K.FIXED_POINT:
            raise FixedPointError(f"start point {c0} ({chart} chart) is a fixed point")
        if status != K.OK:
            raise NoReturnError(
                f"orbit from {c0} ({chart} chart) did not close by t = {T:.6g} "
                f"after {steps} steps")
        samples = np.ascontiguousarray(samples)
        energies = self.energies(chart, samples[:, 1], samples[:, 2])
        drift = float(np.max(np.abs(energies - energies[0])) / self.span)
        closure = float(np.hypot(samples[-1, 1] - c0.real, samples[-1, 2] - c0.imag))
        return PeriodicOrbit(samples=samples[:, :3].copy(), T=float(T),
                             energy=float(energies[0]), action=float(S),
                             sk_integral=float(I), closure_residual=closure,
                             chart=chart, energy_drift=drift, start=c0,
                             n_steps=int(steps))

    def energies(self, chart, xs, ys):
        return K.energies_at(np.ascontiguousarray(xs), np.ascontiguousarray(ys),
                             self.j2, self._bands[chart], self.bw, self.lnbh, self.lad)

    @cached_property
    def _t_scale(self):
        ts = [c.T for c in self.critical_points if np.isfinite(c.T)]
        return max(ts) if ts else 2 * np.pi * self.hbar * self.j2 / self.span

    def point_at_energy(self, branch, E):
        """Sphere point on the branch ray where the symbol equals E."""
        e = branch.ray_energy
        sign = 1.0 if branch.rising else -1.0
        se = sign * e
        target = sign * E
        if not (se[0] <= target <= se[-1]):
            raise UnreachableEnergyError(f"E = {E} is not on branch {branch.id}")
        i = int(np.searchsorted(se, target))
        i = min(max(i, 1), len(e) - 1)
        na = branch.ray[i - 1]
        nb = branch.ray[i]

        def point(t):
            v = (1 - t) * na + t * nb
            return v / np.linalg.norm(v)

        def f(t):
            return self.energy_at(point(t)) - E

        fa = e[i - 1] - E
        fb = e[i] - E
        if fa == 0:
            return na
        if fb == 0:
            return nb
        t = brentq(f, 0.0, 1.0, xtol=1e-15, rtol=1e-15, maxiter=200)
        return point(t)

    def check_reachable(self, branch, E):
        if not branch.contains(E):
            if branch.end_is_saddle and abs(E - branch.e_end) < branch.guard:
                raise CriticalEnergyError(
                    f"E = {E} is within the separatrix guard band of "
                    f"{branch.e_end} (branch {branch.id})")
            raise UnreachableEnergyError(f"E = {E} is outside branch {branch.id} "
                                         f"[{branch.e_lo}, {branch.e_hi}]")
        for e_c in (branch.e_root, branch.e_end):
            if abs(E - e_c) <= 1e-12 * self.span:
                raise CriticalEnergyError(f"E = {E} is a critical energy")

    def orbit_on_branch(self, branch, E, tol=Tolerances()):
        self.check_reachable(branch, E)
        n = self.point_at_energy(branch, E)
        c0 = complex(sphere_to_chart(branch.chart, n))
        orb = self.integrate(branch.chart, c0, tol)
        object.__setattr__(orb, "branch", branch.id)
        return orb


def _find_critical_points(model, n_seeds=400):
    """Newton iteration for dH/dzbar = 0 from a Fibonacci lattice of seeds."""
    i = np.arange(n_seeds) + 0.5
    zc = 1 - 2 * i / n_seeds
    phi = np.pi * (1 + 5 ** 0.5) * i
    rc = np.sqrt(1 - zc ** 2)
    seeds = np.stack([rc * np.cos(phi), rc * np.sin(phi), zc], axis=1)
    seeds = np.vstack([seeds, [[0, 0, -1.0], [0, 0, 1.0]]])
    found = []
    for n in seeds:
        res = _newton(model, n)
        if res is None:
            continue
        if all(np.linalg.norm(res - f) > 1e-7 for f in found):
            found.append(res)
    out = []
    for n in found:
        chart = chart_for(n)
        c = complex(sphere_to_chart(chart, n))
        E, _, F, a, b, A = model.eval(chart, c, True)
        a = float(a.real)
        det = a * a - abs(b) ** 2
        g = metric(c, model.j)
        if det > 1e-10 * a * a and det > 0:
            kind = "min" if a > 0 else "max"
            T = 2 * np.pi * model.hbar * g / np.sqrt(det)
        elif det < 0 and -det > 1e-10 * abs(b) ** 2:
            kind = "saddle"
            T = float("nan")
        else:
            kind = "degenerate"
            T = float("nan")
        out.append(CriticalPoint(n=n, chart=chart, coord=c, energy=float(E),
                                 kind=kind, a=a, b=complex(b), A=float(A), T=T))
    out.sort(key=lambda cp: (cp.energy, tuple(np.round(cp.n, 9))))
    return out


def _newton(model, n, max_iter=80):
    step = np.inf
    for _ in range(max_iter):
        chart = chart_for(n)
        c = complex(sphere_to_chart(chart, n))
        _, _, F, a, b, _ = model.eval(chart, c, True)
        a = a.real
        det = a * a - abs(b) ** 2
        if det == 0:
            return None
        d = (-a * F + b * np.conj(F)) / det
        lim = 0.1 * (1 + abs(c) ** 2)
        if abs(d) > lim:
            d *= lim / abs(d)
        c_new = c + d
        n_new = chart_to_sphere(chart, c_new)
        step = np.linalg.norm(n_new - n)
        n = n_new
        if step < 1e-14:
            break
    else:
        if step > 1e-10:
            return None
    chart = chart_for(n)
    c = complex(sphere_to_chart(chart, n))
    _, _, F, a, b, _ = model.eval(chart, c, True)
    curv = max(abs(a), abs(b))
    # |F| must be small compared with curvature times a tiny displacement
    if abs(F) > 1e-9 * curv * (1 + abs(c)):
        return None
    return n


def _gradient_ray(model, cp, ascend, step=RAY_STEP, max_steps=20000):
    """Steepest ascent (descent) path on the sphere leaving an extremum."""
    sign = 1.0 if ascend else -1.0
    # leave along the softest direction of the quadratic form
    theta = 0.5 * np.angle(cp.b) if cp.b != 0 else 0.0
    if cp.kind == "min":
        theta -= 0.5 * np.pi
    c = cp.coord
    c1 = c + 0.5 * step * (1 + abs(c) ** 2) * np.exp(1j * theta)
    pts = [cp.n, chart_to_sphere(cp.chart, c1)]
    energies = [cp.energy, model.energy_at(pts[-1])]
    if sign * (energies[1] - energies[0]) <= 0:
        raise NumericalError("gradient path failed to leave the extremum")
    for _ in range(max_steps):
        n = pts[-1]
        chart = chart_for(n)
        c = complex(sphere_to_chart(chart, n))
        F = model.eval(chart, c)[2]
        if abs(F) == 0:
            break
        c_new = c + sign * step * 0.5 * (1 + abs(c) ** 2) * F / abs(F)
        n_new = chart_to_sphere(chart, c_new)
        e_new = model.energy_at(n_new)
        if sign * (e_new - energies[-1]) <= 0:
            break
        pts.append(n_new)
        energies.append(e_new)
    # finish on the nearest critical point of the opposite kind
    target = "max" if ascend else "min"
    last = pts[-1]
    best = None
    for other in model.critical_points:
        if other.kind == target:
            d = np.linalg.norm(other.n - last)
            if best is None or d < best[0]:
                best = (d, other)
    if best is not None and best[0] < 10 * step and \
            sign * (best[1].energy - energies[-1]) > 0:
        pts.append(best[1].n)
        energies.append(best[1].energy)
        terminal = best[1]
    else:
        terminal = None
    return np.array(pts), np.array(energies), terminal


def _distance_to_polyline(points, q):
    """Smallest Euclidean distance from q to a closed polyline of 3-vectors."""
    a = points
    b = np.roll(points, -1, axis=0)
    ab = b - a
    t = np.einsum("ij,ij->i", q - a, ab) / np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    t = np.clip(t, 0, 1)
    proj = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(proj - q, axis=1)))


def _pick_chart(cp, end, ray):
    """Chart whose singular pole stays farthest from the family."""
    pts = np.vstack([ray, end.n[None, :]])
    north_gap = np.min(1 - pts[:, 2])   # distance proxy to the north pole
    south_gap = np.min(1 + pts[:, 2])
    if abs(north_gap - south_gap) < 1e-9:
        return chart_for(cp.n)
    return SOUTH if north_gap > south_gap else NORTH


def _census(model):
    crit = model.critical_points
    extrema = [c for c in crit if c.kind in ("min", "max")]
    saddles = [c for c in crit if c.kind == "saddle"]
    guard = model.guard
    branches = []
    pair_seen = set()
    counters = {"min": 0, "max": 0}
    for cp in extrema:
        ascend = cp.kind == "min"
        sign = 1.0 if ascend else -1.0
        ray, energies, terminal = _gradient_ray(model, cp, ascend)
        cands = sorted((s for s in saddles if sign * (s.energy - cp.energy) > 0),
                       key=lambda s: sign * (s.energy - cp.energy))
        end = None
        for s in cands:
            if _touches(model, cp, s, ray, energies):
                end = s
                break
        if end is None:
            if terminal is None:
                raise NumericalError(
                    f"could not determine the contour family of the {cp.kind} at "
                    f"E = {cp.energy}")
            end = terminal
            key = frozenset({id(cp), id(end)})
            if key in pair_seen:
                continue
            pair_seen.add(key)
            if not ascend:
                # the same family was (or will be) rooted at its minimum
                mins = [b for b in branches if b.end is cp]
                if mins:
                    continue
        # keep the ray only up to the end energy
        keep = sign * (energies - end.energy) <= 0
        keep[:2] = True
        ray_k = ray[keep]
        en_k = energies[keep]
        chart = _pick_chart(cp, end, ray_k)
        bid = f"{cp.kind}{counters[cp.kind]}"
        counters[cp.kind] += 1
        branches.append(Branch(id=bid, root=cp, end=end, chart=chart,
                               ray=ray_k, ray_energy=en_k, e_root=cp.energy,
                               e_end=end.energy, guard=guard))
    # a max-rooted family whose far end is a minimum duplicates that minimum's
    out = []
    for b in branches:
        if b.root.kind == "max" and b.end.kind == "min" and any(
                o.root is b.end and o.end is b.root for o in branches):
            continue
        out.append(b)
    return out


def _touches(model, cp, s, ray, energies):
    """Does the family around ``cp`` end on the saddle ``s``?

    Orbits just inside the family approach a terminating saddle like the
    square root of the energy gap, and stay away from any other saddle.
    """
    sign = 1.0 if cp.kind == "min" else -1.0
    gap = abs(s.energy - cp.energy)
    delta = min(DE_FRACTION * model.span, 0.1 * gap)
    dists = []
    for d in (delta, delta / 4):
        E = s.energy - sign * d
        se = sign * energies
        if not (se[0] < sign * E <= se[-1]):
            return False
        tmp = Branch("probe", cp, s, chart_for(cp.n), ray, energies,
                     cp.energy, s.energy, 0.0)
        n = model.point_at_energy(tmp, E)
        chart = SOUTH if s.n[2] > 0 else NORTH
        c0 = complex(sphere_to_chart(chart, n))
        try:
            orb = model.integrate(chart, c0, Tolerances(rtol=1e-9))
        except NumericalError:
            return False
        dists.append(_distance_to_polyline(orb.sphere(), s.n))
    return dists[0] < 0.3 and dists[1] < 0.7 * dists[0]


@lru_cache(maxsize=16)
def classical_model(spec):
    """Cached ClassicalModel for a ModelSpec."""
    return ClassicalModel(spec)


def _resolve_branch(model, E, branch=None, hint=None):
    if branch is not None:
        return branch if isinstance(branch, Branch) else model.branch(branch)
    cands = [b for b in model.branches if b.contains(E)]
    if not cands:
        for b in model.branches:
            if b.end_is_saddle and abs(E - b.e_end) < b.guard:
                raise CriticalEnergyError(
                    f"E = {E} lies in the separatrix guard band around {b.e_end}")
        raise UnreachableEnergyError(f"no contour family reaches E = {E}")
    if hint is not None and len(cands) > 1:
        hn = sphere_from_z(hint.z if isinstance(hint, PhasePoint) else hint)
        cands.sort(key=lambda b: np.linalg.norm(b.root.n - hn))
    return cands[0]


def integrate_periodic_orbit(start, spec, tolerances=Tolerances()):
    """Orbit through ``start`` (south chart), integrated to its first return."""
    model = classical_model(spec)
    z = start.z if isinstance(start, PhasePoint) else complex(start)
    if abs(z) > 1:
        return model.integrate(NORTH, 1.0 / z if z != 0 else 0j, tolerances)
    return model.integrate(SOUTH, z, tolerances)


def orbit_at_energy(E, spec, hint=None, branch=None, tolerances=Tolerances()):
    """Periodic orbit of energy E on the selected (or first matching) family."""
    model = classical_model(spec)
    b = _resolve_branch(model, E, branch, hint)
    return model.orbit_on_branch(b, E, tolerances)


def orbit_functionals(E, dE, spec, branch=None, tolerances=Tolerances()):
    """(T, dI_SK/dE, d2S/dE2) by central differences with step dE."""
    model = classical_model(spec)
    b = _resolve_branch(model, E, branch)
    if dE is None:
        dE = DE_FRACTION * model.span
    mid = model.orbit_on_branch(b, E, tolerances)
    room = min(E - b.e_lo, b.e_hi - E)
    if room <= 0:
        raise CriticalEnergyError(f"E = {E} sits on the edge of branch {b.id}")
    step = min(dE, 0.5 * room)
    for _ in range(12):
        lo = model.orbit_on_branch(b, E - step, tolerances)
        hi = model.orbit_on_branch(b, E + step, tolerances)
        slope = (hi.action - lo.action) / (2 * step)
        if abs(slope - mid.T) <= 1e-2 * abs(mid.T):
            dI = (hi.sk_integral - lo.sk_integral) / (2 * step)
            d2S = (hi.action - 2 * mid.action + lo.action) / step ** 2
            return mid.T, dI, d2S
        step *= 0.5
    raise BranchChangeError(f"action jumps across the stencil at E = {E}")
