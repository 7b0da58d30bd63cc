"""Exact quantum layer: spin matrices, Hamiltonian assembly, eigenstates,
spin coherent states, exact Husimi functions and the classical symbol.

Basis ordering: index k = j + m runs from 0 (m = -j) to 2j (m = +j).  All
operator matrices carry one power of hbar, so Jz = diag(hbar m) and
[Jx, Jy] = i hbar Jz.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import eigh
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln

from .errors import ConvergenceError, ModelError
from .levels import DEGENERATE, EXACT, QuantizedLevel
from .phase_space import field_from_log

SYMBOLS = ("Jx", "Jy", "Jz", "J+", "J-")
_ALIASES = {"Jplus": "J+", "Jminus": "J-", "jx": "Jx", "jy": "Jy", "jz": "Jz"}

HERMITIAN_TOL = 1e-12
DEGENERACY_TOL = 1e-10
RESIDUAL_TOL = 1e-9


def _half_integer(j):
    twoj = 2.0 * float(j)
    if not np.isfinite(twoj) or twoj < 1 or abs(twoj - round(twoj)) > 1e-12:
        raise ModelError(f"spin j must be a positive half-integer, got {j!r}")
    return int(round(twoj))


@dataclass(frozen=True)
class ModelSpec:
    """Spin j, hbar, and H = sum of coef * (ordered product of spin operators)."""

    j: float
    terms: tuple
    hbar: float = None

    def __post_init__(self):
        twoj = _half_integer(self.j)
        object.__setattr__(self, "j", twoj / 2)
        hbar = 1.0 / self.j if self.hbar is None else float(self.hbar)
        if not hbar > 0 or not np.isfinite(hbar):
            raise ModelError(f"hbar must be positive and finite, got {self.hbar!r}")
        object.__setattr__(self, "hbar", hbar)
        clean = []
        for i, term in enumerate(self.terms):
            try:
                coef, mono = term
                coef = float(coef)
            except (TypeError, ValueError):
                raise ModelError(f"term {i} ({term!r}) is not a (coefficient, monomial) pair")
            if not np.isfinite(coef):
                raise ModelError(f"term {i} has a non-finite coefficient")
            if isinstance(mono, str):
                raise ModelError(f"term {i}: monomial must be a list of operator names, got {mono!r}")
            ops = []
            for s in mono:
                s = _ALIASES.get(s, s)
                if s not in SYMBOLS:
                    raise ModelError(f"term {i} ({term!r}): unknown operator {s!r}")
                ops.append(s)
            clean.append((coef, tuple(ops)))
        object.__setattr__(self, "terms", tuple(clean))

    @property
    def twoj(self):
        return int(round(2 * self.j))

    @property
    def dim(self):
        return self.twoj + 1


def jz_model(j, omega=1.0, hbar=None):
    """H = hbar omega Jz (in dimensionless-J notation)."""
    return ModelSpec(j=j, terms=((omega, ("Jz",)),), hbar=hbar)


def lmg_model(j, omega=1.0, hbar_alpha=1000.0, hbar=None):
    """H = hbar omega Jz + alpha hbar^2 (Jx^2 - Jy^2), J dimensionless.

    ``hbar_alpha`` is the product hbar * alpha, the customary parameter.
    """
    h = 1.0 / (float(j)) if hbar is None else float(hbar)
    alpha = hbar_alpha / h
    return ModelSpec(j=j, hbar=hbar,
                     terms=((omega, ("Jz",)), (alpha, ("Jx", "Jx")),
                            (-alpha, ("Jy", "Jy"))))


def ladder_coefficients(twoj):
    """sqrt((k + 1)(2j - k)), the dimensionless J+ elements <k+1|J+|k>."""
    k = np.arange(twoj, dtype=float)
    return np.sqrt((k + 1.0) * (twoj - k))


def half_log_binomials(twoj):
    """0.5 * log C(2j, k) for k = 0..2j."""
    k = np.arange(twoj + 1, dtype=float)
    return 0.5 * (gammaln(twoj + 1.0) - gammaln(k + 1.0) - gammaln(twoj - k + 1.0))


@dataclass(frozen=True, eq=False)
class SpinOperatorSet:
    """Dense hbar-scaled spin matrices and the assembled Hamiltonian."""

    spec: ModelSpec
    Jx: np.ndarray
    Jy: np.ndarray
    Jz: np.ndarray
    Jplus: np.ndarray
    Jminus: np.ndarray
    H: np.ndarray

    @property
    def dim(self):
        return self.spec.dim

    @cached_property
    def bandwidth(self):
        nz = np.nonzero(self.H)
        if len(nz[0]) == 0:
            return 0
        return int(np.max(np.abs(nz[0] - nz[1])))

    @cached_property
    def bands(self):
        """Band storage bands[d, k] = H[k, k + d - bw] (zero outside)."""
        bw = self.bandwidth
        dim = self.dim
        out = np.zeros((2 * bw + 1, dim), dtype=complex)
        for d in range(2 * bw + 1):
            off = d - bw
            if off >= 0:
                out[d, :dim - off] = np.diagonal(self.H, off)
            else:
                out[d, -off:] = np.diagonal(self.H, off)
        return out

    @cached_property
    def norm(self):
        return float(np.linalg.norm(self.H, 2))


def build_operators(spec):
    """Assemble the spin matrices and H for a ModelSpec."""
    twoj = spec.twoj
    dim = spec.dim
    hbar = spec.hbar
    m = np.arange(dim) - spec.j
    jplus = np.zeros((dim, dim), dtype=complex)
    jplus[np.arange(1, dim), np.arange(dim - 1)] = hbar * ladder_coefficients(twoj)
    jminus = jplus.conj().T.copy()
    jz = np.diag(hbar * m).astype(complex)
    jx = 0.5 * (jplus + jminus)
    jy = -0.5j * (jplus - jminus)
    mats = {"Jx": jx, "Jy": jy, "Jz": jz, "J+": jplus, "J-": jminus}
    H = np.zeros((dim, dim), dtype=complex)
    for coef, mono in spec.terms:
        prod = np.eye(dim, dtype=complex)
        for s in mono:
            prod = prod @ mats[s]
        H += coef * prod
    scale = np.linalg.norm(H)
    if scale > 0 and np.linalg.norm(H - H.conj().T) > HERMITIAN_TOL * scale:
        bad = [f"{c:g}*{'*'.join(mo)}" for c, mo in spec.terms
               if any(s in ("J+", "J-") for s in mo)]
        hint = f" (check ladder-operator terms: {', '.join(bad)})" if bad else ""
        raise ModelError("assembled Hamiltonian is not Hermitian" + hint)
    H = 0.5 * (H + H.conj().T)
    for a in (jx, jy, jz, jplus, jminus, H):
        a.setflags(write=False)
    return SpinOperatorSet(spec, jx, jy, jz, jplus, jminus, H)


def _blocks(H, tol):
    """Connected components of the sparsity graph of H (e.g. parity sectors)."""
    adj = csr_matrix(np.abs(H) > tol)
    n, labels = connected_components(adj, directed=False)
    order = sorted(range(n), key=lambda b: int(np.argmax(labels == b)))
    return [np.flatnonzero(labels == b) for b in order]


def _fix_phase(v):
    """Make the largest-magnitude component real positive (first on ties)."""
    k = int(np.argmax(np.abs(v) * (1 - 1e-12 * np.arange(len(v)) / len(v))))
    return v * (abs(v[k]) / v[k])


def eigendecompose(ops):
    """Exact eigenpairs of H, ascending.

    H is first split into the blocks left invariant by its sparsity pattern,
    so eigenvectors of exactly degenerate symmetry partners stay symmetry
    adapted.  Returns (levels, states) with states[:, n] the n-th eigenvector.
    """
    H = ops.H
    dim = ops.dim
    norm = ops.norm if ops.norm > 0 else 1.0
    evals = []
    vecs = []
    tags = []
    for b, idx in enumerate(_blocks(H, 1e-14 * norm)):
        try:
            w, v = eigh(H[np.ix_(idx, idx)])
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"dense eigensolver failed on block {b}: {exc}")
        for i in range(len(w)):
            full = np.zeros(dim, dtype=complex)
            full[idx] = v[:, i]
            evals.append(float(w[i]))
            vecs.append(_fix_phase(full))
            tags.append(b)
    evals = np.array(evals)
    order = list(np.argsort(evals, kind="stable"))
    # ties: group consecutive near-equal values and order them by block
    tol = DEGENERACY_TOL * norm
    ranked = []
    degenerate = set()
    i = 0
    while i < len(order):
        k = i + 1
        while k < len(order) and evals[order[k]] - evals[order[k - 1]] <= tol:
            k += 1
        group = sorted(order[i:k], key=lambda t: (tags[t], evals[t]))
        if k - i > 1:
            degenerate.update(group)
        ranked.extend(group)
        i = k
    states = np.column_stack([vecs[t] for t in ranked])
    energies = evals[ranked]
    resid = np.linalg.norm(H @ states - states * energies, axis=0)
    if np.max(resid) > RESIDUAL_TOL * norm:
        raise ConvergenceError(f"eigenvector residual {np.max(resid):.3e} exceeds tolerance")
    levels = [QuantizedLevel(n=r, E=float(energies[r]), method=EXACT,
                             branch=f"block{tags[t]}", residual=float(resid[r]),
                             flags=(DEGENERATE,) if t in degenerate else (),
                             index=r)
              for r, t in enumerate(ranked)]
    states.setflags(write=False)
    return levels, states


@dataclass(frozen=True, eq=False)
class CoherentVector:
    """The non-normalized state exp(z J+)|j, -j> = exp(log_scale) * scaled."""

    z: complex
    scaled: np.ndarray
    log_scale: float
    twoj: int

    @property
    def components(self):
        with np.errstate(over="ignore"):
            return self.scaled * np.exp(self.log_scale)

    @property
    def log_norm2(self):
        return 2.0 * self.log_scale + float(np.log(np.vdot(self.scaled, self.scaled).real))

    @property
    def norm2(self):
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_norm2))

    def normalized(self):
        return self.scaled / np.sqrt(np.vdot(self.scaled, self.scaled).real)


def coherent_vector(z, j):
    """Components sqrt(C(2j, k)) z^k, k = j + m, held in log-scaled form."""
    twoj = _half_integer(j)
    z = complex(z)
    if not np.isfinite(z):
        raise ModelError("coherent_vector needs a finite z")
    lnbh = half_log_binomials(twoj)
    k = np.arange(twoj + 1)
    if z == 0:
        scaled = np.zeros(twoj + 1, dtype=complex)
        scaled[0] = 1.0
        return CoherentVector(z, scaled, 0.0, twoj)
    logs = lnbh + k * np.log(abs(z))
    shift = float(np.max(logs))
    phi = np.angle(z)
    scaled = np.exp(logs - shift) * np.exp(1j * k * phi)
    return CoherentVector(z, scaled, shift, twoj)


@dataclass(frozen=True)
class SymbolValue:
    """Classical symbol data at a real phase point."""

    z: complex
    H: float
    dHdz: complex
    dHdzbar: complex
    A: float
    g: float
    d2Hdzdzbar: float = float("nan")
    d2Hdzbar2: complex = complex("nan")


def metric(z, j):
    """g(z, zbar) = 2j / (1 + |z|^2)^2."""
    return 2.0 * j / (1.0 + abs(z) ** 2) ** 2


def classical_symbol(ops, z):
    """H = <z|H|z>/<z|z> and its derivatives by ladder insertion (dense path)."""
    spec = ops.spec
    j = spec.j
    hbar = spec.hbar
    z = complex(z)
    psi = coherent_vector(z, j).normalized()
    jp = ops.Jplus / hbar
    Hm = ops.H
    hpsi = Hm @ psi
    jpsi = jp @ psi
    j2psi = jp @ jpsi
    E = np.vdot(psi, hpsi).real
    ejp = np.vdot(psi, jpsi)
    ejm = np.conj(ejp)
    e_hjp = np.vdot(hpsi, jpsi)
    e_jmh = np.vdot(jpsi, hpsi)
    e_jmhjp = np.vdot(jpsi, Hm @ jpsi)
    e_jmjp = np.vdot(jpsi, jpsi).real
    e_jm2h = np.vdot(j2psi, hpsi)
    e_jm2 = np.vdot(j2psi, psi)
    dz = e_hjp - E * ejp
    dzb = e_jmh - E * ejm
    dzdzb = e_jmhjp - e_hjp * ejm - dzb * ejp - E * e_jmjp + E * ejp * ejm
    dzbzb = e_jm2h - e_jmh * ejm - dzb * ejm - E * (e_jm2 - ejm * ejm)
    u = abs(z) ** 2
    A = ((1 + u) ** 2 / (4 * j) * dzdzb
         + (1 + u) / (4 * j) * (z * dz + np.conj(z) * dzb))
    return SymbolValue(z=z, H=float(E), dHdz=complex(dz), dHdzbar=complex(dzb),
                       A=float(A.real), g=metric(z, j),
                       d2Hdzdzbar=float(dzdzb.real), d2Hdzbar2=complex(dzbzb))


def husimi_log_values(state, grid):
    """log |<z|psi>|^2 / (1 + |z|^2)^(2j) on the unmasked cells (-inf elsewhere)."""
    from . import _kernels as K
    state = np.asarray(state, dtype=complex)
    twoj = len(state) - 1
    if abs(grid.j - twoj / 2) > 1e-12:
        raise ModelError("state dimension does not match the grid spin")
    mag = np.abs(state)
    with np.errstate(divide="ignore"):
        la = half_log_binomials(twoj) + np.log(mag)
    ph = np.where(mag > 0, state / np.where(mag > 0, mag, 1.0), 0.0)
    mask = grid.mask()
    z = grid.z_values()[mask]
    out = np.full(mask.shape, -np.inf)
    out[mask] = K.husimi_logs(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag),
                              la, ph.astype(complex), twoj)
    return out


def exact_husimi(state, grid, index=None):
    """Normalized exact Husimi field of a unit-norm state."""
    logs = husimi_log_values(state, grid)
    return field_from_log(grid, logs, {"method": "exact", "state": index})
