"""Command line entry point: quantize, husimi, compare, orbit.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

import argparse
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .dynamics import PhasePoint, Tolerances, classical_model, integrate_periodic_orbit
from .errors import GridMismatchError, ModelError, NumericalError, SemispinError
from .husimi import apply_thread_limit, level_functionals, semiclassical_husimi
from .phase_space import HusimiField, PhaseGrid, compare_fields, normalize_field, qp_from_z, z_from_qp
from .quantization import quantize_all
from .spin_algebra import build_operators, eigendecompose, exact_husimi

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
CSV_FMT = "%.17g"


def _clean(obj):
    """JSON-safe copy: NaN and infinities become null, numpy scalars plain."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def _json_text(obj):
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _sidecar_path(out):
    return Path(out).with_suffix(".json")


def _load_config(args):
    if args.config is None:
        raise ModelError("--config is required for this command")
    cfg = cfgmod.load(args.config)
    return cfg.with_task(state=getattr(args, "state", None),
                         method=getattr(args, "method", None),
                         index_base=getattr(args, "index_base", None),
                         q0=getattr(args, "q0", None), p0=getattr(args, "p0", None))


def _tolerances(cfg):
    return Tolerances(rtol=cfg.tolerances.ode)


def _state_index(cfg, dim):
    if cfg.task.state is None:
        raise ModelError("no state given (use --state or task.state)")
    idx = cfg.task.state - cfg.task.index_base
    if not 0 <= idx < dim:
        raise ModelError(f"state {cfg.task.state} (index base {cfg.task.index_base}) "
                         f"is out of range for {dim} states")
    return idx


def _grid(cfg):
    m = cfg.model
    return PhaseGrid(cfg.grid.N, m.j, m.hbar, cfg.grid.zmax)


def cmd_quantize(cfg, out=None):
    method = cfg.task.method or "bs"
    if method not in ("exact", "bs", "both"):
        raise ModelError(f"quantize --method must be exact, bs or both, got {method!r}")
    spec = cfg.model
    doc = {"j": spec.j, "hbar": spec.hbar, "dim": spec.dim}
    if method in ("bs", "both"):
        rep = quantize_all(spec, _tolerances(cfg), root_tol=cfg.tolerances.root)
        doc["bs"] = [lv.as_record() for lv in rep.levels]
        doc["branches"] = rep.branches
        doc["gaps"] = rep.gaps
        doc["notes"] = rep.notes
    if method in ("exact", "both"):
        levels, _ = eigendecompose(build_operators(spec))
        doc["exact"] = [lv.as_record() for lv in levels]
    _emit(_json_text(doc), out)
    return doc


def _field_csv(fld):
    mask = fld.grid.mask()
    Q, P = fld.grid.coordinates()
    rows = np.column_stack([Q[mask], P[mask], fld.values[mask]])
    buf = io.StringIO()
    np.savetxt(buf, rows, fmt=CSV_FMT, delimiter=",", header="q,p,value", comments="")
    return buf.getvalue()


def cmd_husimi(cfg, out=None):
    method = cfg.task.method or "exact"
    if method not in ("exact", "semiclassical"):
        raise ModelError(f"husimi --method must be exact or semiclassical, got {method!r}")
    apply_thread_limit()
    spec = cfg.model
    idx = _state_index(cfg, spec.dim)
    grid = _grid(cfg)
    if method == "exact":
        levels, states = eigendecompose(build_operators(spec))
        fld = exact_husimi(states[:, idx], grid, idx)
        E = levels[idx].E
        extra = {"flags": list(levels[idx].flags)}
    else:
        rep = quantize_all(spec, _tolerances(cfg), root_tol=cfg.tolerances.root)
        level = rep.levels[idx]
        model = classical_model(spec)
        fun = level_functionals(level, spec, cfg.dE_for(model.span))
        fld = semiclassical_husimi(level, spec, grid, functionals=fun)
        E = level.E
        extra = {"flags": list(fld.flags), "branch": level.branch, "n": level.n,
                 "T": fun[0] if fun else None, "dIsk_dE": fun[1] if fun else None}
    side = {"state": idx, "requested_state": cfg.task.state,
            "index_base": cfg.task.index_base, "method": method, "E_n": E,
            "normConstant": fld.norm_constant, "guard_cells": fld.guard_cells,
            "grid": {"N": grid.N, "j": grid.j, "hbar": grid.hbar, "zmax": grid.zmax}}
    side.update(extra)
    _emit(_field_csv(fld), out)
    if out is not None:
        _sidecar_path(out).write_text(_json_text(side))
    else:
        sys.stderr.write(_json_text(side))
    return fld, side


def read_field(path):
    """Field from a CSV written by ``husimi`` and its JSON sidecar."""
    path = Path(path)
    side_path = _sidecar_path(path)
    try:
        side = json.loads(side_path.read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise ModelError(f"cannot read field {path}: {exc.strerror}")
    except ValueError as exc:
        raise ModelError(f"malformed field file {path}: {exc}")
    try:
        g = side["grid"]
        grid = PhaseGrid(int(g["N"]), float(g["j"]), float(g["hbar"]), float(g["zmax"]))
    except (KeyError, TypeError) as exc:
        raise ModelError(f"sidecar {side_path} lacks grid information: {exc}")
    mask = grid.mask()
    if data.shape != (int(mask.sum()), 3):
        raise GridMismatchError(f"{path} has {data.shape[0]} rows, grid expects {int(mask.sum())}")
    Q, P = grid.coordinates()
    tol = 1e-9 * grid.radius
    if (np.max(np.abs(data[:, 0] - Q[mask])) > tol
            or np.max(np.abs(data[:, 1] - P[mask])) > tol):
        raise GridMismatchError(f"{path} points do not match its declared grid")
    raw = np.zeros(mask.shape)
    raw[mask] = data[:, 2]
    fld = HusimiField(grid, raw, raw, 0.0, float("nan"), side, 0, tuple(side.get("flags", ())))
    return normalize_field(fld)


def cmd_compare(path_a, path_b, out=None):
    a = read_field(path_a)
    b = read_field(path_b)
    res = compare_fields(a, b)
    res["a"] = str(path_a)
    res["b"] = str(path_b)
    _emit(_json_text(res), out)
    return res


def cmd_orbit(cfg, out=None):
    spec = cfg.model
    if cfg.task.q0 is None or cfg.task.p0 is None:
        raise ModelError("orbit needs --q0 and --p0")
    q0, p0 = cfg.task.q0, cfg.task.p0
    radius = 2.0 * math.sqrt(spec.hbar * spec.j)
    if not q0 * q0 + p0 * p0 < radius * radius:
        raise ModelError(f"start ({q0}, {p0}) lies outside the phase disk of radius {radius}")
    model = classical_model(spec)
    z0 = complex(z_from_qp(q0, p0, spec.hbar, spec.j))
    orb = integrate_periodic_orbit(PhasePoint(z0), spec, _tolerances(cfg))
    q, p = qp_from_z(orb.z, spec.hbar, spec.j)
    e = model.energies(orb.chart, orb.samples[:, 1], orb.samples[:, 2])
    drift = (e - e[0]) / model.span
    buf = io.StringIO()
    np.savetxt(buf, np.column_stack([orb.t, q, p, drift]), fmt=CSV_FMT, delimiter=",",
               header="t,q,p,energy_drift", comments="")
    side = {"T": orb.T, "energy": orb.energy, "action": orb.action,
            "sk_integral": orb.sk_integral, "closure_residual": orb.closure_residual,
            "max_energy_drift": orb.energy_drift, "chart": orb.chart,
            "n_steps": orb.n_steps, "q0": q0, "p0": p0}
    _emit(buf.getvalue(), out)
    if out is not None:
        _sidecar_path(out).write_text(_json_text(side))
    else:
        sys.stderr.write(_json_text(side))
    return orb, side


def build_parser():
    ap = argparse.ArgumentParser(prog="semispin",
                                 description="Semiclassical spin quantization and Husimi functions.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, method_choices=None):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", help="output file (default: stdout)")
        if method_choices:
            p.add_argument("--method", choices=method_choices)

    p = sub.add_parser("quantize", help="quantized levels as JSON")
    common(p, ("exact", "bs", "both"))
    p = sub.add_parser("husimi", help="Husimi field as CSV with a JSON sidecar")
    common(p, ("exact", "semiclassical"))
    p.add_argument("--state", type=int)
    p.add_argument("--index-base", type=int, choices=(0, 1), dest="index_base")
    p = sub.add_parser("compare", help="metrics between two field CSV files")
    p.add_argument("field_a")
    p.add_argument("field_b")
    p.add_argument("--out")
    p = sub.add_parser("orbit", help="classical orbit as CSV with a JSON sidecar")
    common(p)
    p.add_argument("--q0", type=float)
    p.add_argument("--p0", type=float)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            cmd_compare(args.field_a, args.field_b, args.out)
        else:
            cfg = _load_config(args)
            {"quantize": cmd_quantize, "husimi": cmd_husimi,
             "orbit": cmd_orbit}[args.command](cfg, args.out)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SemispinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK
