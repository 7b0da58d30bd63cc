"""Semiclassical Husimi functions and their comparison with exact ones."""

import os
from functools import lru_cache

import numpy as np

from . import _kernels as K
from .dynamics import (DE_FRACTION, Tolerances, classical_model, orbit_functionals,
                       sphere_to_chart)
from .errors import ModelError, NumericalError
from .levels import EXTRAPOLATED, NEAR_SEPARATRIX
from .phase_space import compare_fields, field_from_log, normalize_field

FIXED_POINT_EPS = 1e-8
NO_FUNCTIONALS = "no-functionals"

__all__ = ["semiclassical_husimi", "normalize_field", "compare_fields",
           "level_functionals", "apply_thread_limit"]


def apply_thread_limit():
    """Honour HUSIMI_THREADS as a cap on the compiled parallel loops."""
    import numba
    value = os.environ.get("HUSIMI_THREADS")
    if value:
        try:
            n = int(value)
        except ValueError:
            raise ModelError(f"HUSIMI_THREADS must be an integer, got {value!r}")
        if n < 1:
            raise ModelError("HUSIMI_THREADS must be at least 1")
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


@lru_cache(maxsize=8)
def _grid_terms(spec, grid):
    """Symbol, SK term and speed on the unmasked cells of a grid."""
    apply_thread_limit()
    model = classical_model(spec)
    mask = grid.mask()
    z = grid.z_values()[mask]
    bands = model._bands
    E, A, factor, width = K.husimi_terms(
        np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag), model.j2,
        model.hbar, bands["south"], bands["north"], model.bw, model.lnbh, model.lad)
    # |zdot| in the south chart, from the chart-free speed factor
    speed = (1.0 + np.abs(z) ** 2) / factor
    for arr in (E, A, factor, width, speed):
        arr.setflags(write=False)
    return mask, E, A, factor, width, speed


def level_functionals(level, spec, dE=None):
    """(T, dI_SK/dE) at a quantized level, or None when no orbit exists.

    Levels sitting on (or continued beyond) an extremum use its harmonic
    period and a one-sided difference of I_SK from orbits just inside.
    """
    if level.has_flag(NEAR_SEPARATRIX) and level.branch == "separatrix":
        return None
    model = classical_model(spec)
    try:
        b = model.branch(level.branch)
    except ModelError:
        return None
    if dE is None:
        dE = DE_FRACTION * model.span
    E = level.E
    room = min(E - b.e_lo, b.e_hi - E)
    if room > 1e-6 * model.span and not level.has_flag(EXTRAPOLATED):
        T, dI, _ = orbit_functionals(E, dE, spec, branch=b)
        return T, dI
    # on or beyond an extremal end of the family
    if abs(E - b.e_root) <= abs(E - b.e_far) or level.has_flag(EXTRAPOLATED):
        cp, towards = b.root, np.sign(b.e_far - b.e_root)
    elif not b.end_is_saddle:
        cp, towards = b.end, np.sign(b.e_root - b.e_far)
    else:
        return None
    step = min(dE, 0.25 * abs(b.e_far - b.e_root))
    # integrate in the chart where the extremum is regular; the chart offset
    # of I_SK is constant and drops out of the difference
    I = []
    for k in (1, 2):
        E_k = cp.energy + towards * k * step
        model.check_reachable(b, E_k)
        c0 = complex(sphere_to_chart(cp.chart, model.point_at_energy(b, E_k)))
        I.append(model.integrate(cp.chart, c0, Tolerances()).sk_integral)
    dI = (I[1] - I[0]) / (towards * step)
    return cp.T, dI


def semiclassical_log_values(level, spec, grid, functionals=None):
    """Log of the unnormalized semiclassical Husimi values (-inf when zero).

    Returns (log_values, guard_cell_count, flags, provenance).
    """
    model = classical_model(spec)
    if abs(grid.j - spec.j) > 0 or abs(grid.hbar - spec.hbar) > 1e-15 * spec.hbar:
        raise ModelError("grid and model disagree on j or hbar")
    flags = []
    if functionals is None:
        functionals = level_functionals(level, spec)
    if functionals is None:
        flags.append(NO_FUNCTIONALS)
        log_pref = 0.0
        T_ref = model._t_scale
    else:
        T, dI = functionals
        denom = T + dI
        if not denom > 0:
            raise NumericalError(f"T + dI_SK/dE = {denom} is not positive")
        log_pref = np.log(np.sqrt(np.pi) / spec.j) - np.log(denom)
        T_ref = T
    mask, E_z, A_z, factor, width, speed = _grid_terms(spec, grid)
    v_eps = FIXED_POINT_EPS * 4 * spec.hbar * spec.j / T_ref
    guard = ~(speed >= v_eps)
    arg = level.E - E_z + A_z
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = log_pref + np.log(factor) - arg * arg / width
    logs = np.where(guard, -np.inf, logs)
    out = np.full(mask.shape, -np.inf)
    out[mask] = logs
    prov = {"method": "semiclassical", "state": level.index, "E": level.E,
            "branch": level.branch}
    if functionals is not None:
        prov["T"] = float(functionals[0])
        prov["dIsk_dE"] = float(functionals[1])
    return out, int(np.sum(guard)), tuple(flags) + tuple(level.flags), prov


def semiclassical_husimi(level, spec, grid, functionals=None):
    """Normalized semiclassical Husimi field of a quantized level.

    value = (sqrt(pi)/j) (1+|z|^2)/|zdot| / (T + dI_SK/dE)
            * exp(-(E - H(z) + A(z))^2 / (2 hbar^2 g |zdot|^2))
    Cells where |zdot| falls below the fixed-point guard are zeroed.
    """
    logs, guard, flags, prov = semiclassical_log_values(level, spec, grid, functionals)
    return field_from_log(grid, logs, prov, guard_cells=guard, flags=flags)
