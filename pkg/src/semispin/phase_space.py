"""Canonical (q, p) chart, phase-space grids and Husimi field containers."""

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, ModelError, NumericalError

DEFAULT_ZMAX = 1e6
TIE_RTOL = 1e-9


def z_from_qp(q, p, hbar, j):
    """Stereographic coordinate of the chart point (q, p); |q + ip| < 2 sqrt(hbar j)."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    rest = 4.0 * hbar * j - q * q - p * p
    with np.errstate(divide="ignore", invalid="ignore"):
        return (q + 1j * p) / np.sqrt(rest)


def qp_from_z(z, hbar, j):
    """Inverse chart: q + ip = sqrt(4 hbar j) z / sqrt(1 + |z|^2)."""
    z = np.asarray(z, dtype=complex)
    w = np.sqrt(4.0 * hbar * j) * z / np.sqrt(1.0 + np.abs(z) ** 2)
    return w.real, w.imag


def sphere_from_z(z):
    """Unit vector on the sphere; z = 0 is the south pole (0, 0, -1)."""
    z = np.asarray(z, dtype=complex)
    u = np.abs(z) ** 2
    return np.stack([2 * z.real, -2 * z.imag, u - 1.0], axis=-1) / (1.0 + u)[..., None]


def z_from_sphere(n):
    """Stereographic coordinate of the unit vector n (not at the north pole)."""
    n = np.asarray(n, dtype=float)
    return (n[..., 0] - 1j * n[..., 1]) / (1.0 - n[..., 2])


@dataclass(frozen=True)
class PhaseGrid:
    """N x N cell-centred lattice over the square enclosing the phase disk."""

    N: int
    j: float
    hbar: float
    zmax: float = DEFAULT_ZMAX

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ModelError(f"grid size must be an integer >= 2, got {self.N!r}")
        if not self.hbar > 0 or not self.j > 0:
            raise ModelError("grid needs positive j and hbar")
        if not self.zmax > 0:
            raise ModelError("zmax must be positive")

    @property
    def radius(self):
        return 2.0 * np.sqrt(self.hbar * self.j)

    @property
    def spacing(self):
        return 2.0 * self.radius / self.N

    @property
    def axis(self):
        r = self.radius
        return -r + (np.arange(self.N) + 0.5) * self.spacing

    @property
    def measure(self):
        """Weight dq dp / (2 pi hbar) of a single cell."""
        return self.spacing ** 2 / (2.0 * np.pi * self.hbar)

    def coordinates(self):
        """(Q, P) arrays indexed [row, col] = [p index, q index]."""
        a = self.axis
        Q, P = np.meshgrid(a, a, indexing="xy")
        return Q, P

    def z_values(self):
        Q, P = self.coordinates()
        return z_from_qp(Q, P, self.hbar, self.j)

    def mask(self):
        """True for cells that carry a value."""
        Q, P = self.coordinates()
        inside = Q * Q + P * P < self.radius ** 2
        z = self.z_values()
        with np.errstate(invalid="ignore"):
            ok = np.abs(z) <= self.zmax
        return inside & ok

    def same_as(self, other):
        return (self.N == other.N and self.j == other.j
                and self.hbar == other.hbar and self.zmax == other.zmax)


@dataclass(frozen=True)
class HusimiField:
    """A phase-space density on a PhaseGrid.

    ``raw`` holds the unnormalized values divided by ``exp(log_shift)`` so
    that it never overflows; ``values`` is the normalized field and
    ``norm_constant`` the integral of the unnormalized field.
    """

    grid: PhaseGrid
    values: np.ndarray
    raw: np.ndarray
    log_shift: float
    norm_constant: float
    provenance: dict = field(default_factory=dict)
    guard_cells: int = 0
    flags: tuple = ()

    @property
    def mask(self):
        return self.grid.mask()

    def total(self):
        return float(np.sum(self.values) * self.grid.measure)


def field_from_log(grid, log_values, provenance, guard_cells=0, flags=()):
    """Build a normalized field from log-values (-inf where zero or masked)."""
    log_values = np.where(grid.mask(), log_values, -np.inf)
    finite = np.isfinite(log_values)
    if not finite.any():
        raise NumericalError("field is identically zero")
    shift = float(np.max(log_values[finite]))
    raw = np.zeros_like(log_values)
    raw[finite] = np.exp(log_values[finite] - shift)
    return normalize_field(HusimiField(grid, raw, raw, shift, float("nan"),
                                       dict(provenance), int(guard_cells),
                                       tuple(flags)))


def normalize_field(fld):
    """Scale so that sum(values * cell measure) = 1.

    Always works from ``raw``, so normalizing twice gives bitwise the same
    result, and scaling ``raw`` by a power of two leaves ``values`` unchanged.
    """
    raw = np.where(fld.grid.mask(), fld.raw, 0.0)
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise NumericalError("field has negative or non-finite values")
    total = float(np.sum(raw)) * fld.grid.measure
    if total <= 0:
        raise NumericalError("cannot normalize an all-zero field")
    values = raw / total
    with np.errstate(over="ignore"):
        norm = total * float(np.exp(fld.log_shift))
    return HusimiField(fld.grid, values, fld.raw, fld.log_shift, norm,
                       dict(fld.provenance), fld.guard_cells, fld.flags)


def compare_fields(a, b):
    """Distances and overlap between two normalized fields on the same grid."""
    if not a.grid.same_as(b.grid):
        raise GridMismatchError("fields live on different grids")
    mask_a = a.values.shape == b.values.shape and np.array_equal(a.grid.mask(), b.grid.mask())
    if not mask_a:
        raise GridMismatchError("fields have different masks")
    mu = a.grid.measure
    va = a.values
    vb = b.values
    diff = va - vb
    l1 = float(np.sum(np.abs(diff)) * mu)
    denom = float(np.sqrt(np.sum(va * va)))
    rel_l2 = float(np.sqrt(np.sum(diff * diff)) / denom) if denom > 0 else float("inf")
    overlap = float(np.sum(np.sqrt(va * vb)) * mu)
    ia = np.unravel_index(int(np.argmax(va)), va.shape)
    ib = np.unravel_index(int(np.argmax(vb)), vb.shape)
    ta = _tied_maxima(va)
    tb = _tied_maxima(vb)
    # symmetric fields have several equal maxima; compare the closest pair
    gap = np.maximum(np.abs(ta[:, None, 0] - tb[None, :, 0]),
                     np.abs(ta[:, None, 1] - tb[None, :, 1]))
    axis = a.grid.axis
    return {
        "l1": l1,
        "rel_l2": rel_l2,
        "overlap": overlap,
        "argmax_a": {"row": int(ia[0]), "col": int(ia[1]),
                     "q": float(axis[ia[1]]), "p": float(axis[ia[0]])},
        "argmax_b": {"row": int(ib[0]), "col": int(ib[1]),
                     "q": float(axis[ib[1]]), "p": float(axis[ib[0]])},
        "argmax_cell_distance": int(gap.min()),
        "argmax_ties": [int(len(ta)), int(len(tb))],
    }


def _tied_maxima(values, rtol=TIE_RTOL):
    """Cells whose value equals the maximum up to rounding."""
    top = np.max(values)
    rows, cols = np.nonzero(values >= top - rtol * abs(top))
    return np.stack([rows, cols], axis=1).astype(np.int64)
