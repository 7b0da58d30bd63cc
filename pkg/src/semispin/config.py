"""Run configuration: a YAML document with model, grid, tolerances and task
sections.  Floats are written with repr precision so that a parse ->
serialize -> parse cycle returns an identical RunConfig.
"""

from dataclasses import asdict, dataclass, field, replace

import yaml

from .dynamics import DE_FRACTION
from .errors import ModelError
from .phase_space import DEFAULT_ZMAX
from .quantization import QUANT_RTOL, ROOT_TOL
from .spin_algebra import ModelSpec

DEFAULT_N = 256
METHODS = ("exact", "bs", "both", "semiclassical")


@dataclass(frozen=True)
class GridConfig:
    N: int = DEFAULT_N
    zmax: float = DEFAULT_ZMAX


@dataclass(frozen=True)
class ToleranceConfig:
    """ode: integrator rtol; root: quantization residual in units of pi hbar;
    dE: finite-difference step for the period and dI_SK/dE (None = auto)."""

    ode: float = QUANT_RTOL
    root: float = ROOT_TOL
    dE: float = None


@dataclass(frozen=True)
class TaskConfig:
    state: int = None
    method: str = None
    index_base: int = 0
    q0: float = None
    p0: float = None


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    grid: GridConfig = field(default_factory=GridConfig)
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    task: TaskConfig = field(default_factory=TaskConfig)

    def dE_for(self, span):
        return self.tolerances.dE if self.tolerances.dE is not None else DE_FRACTION * span

    def with_task(self, **changes):
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, task=replace(self.task, **changes))

    def to_dict(self):
        m = self.model
        return {
            "model": {"j": _num(m.j), "hbar": m.hbar,
                      "terms": [[c, list(ops)] for c, ops in m.terms]},
            "grid": asdict(self.grid),
            "tolerances": asdict(self.tolerances),
            "task": asdict(self.task),
        }


def _num(x):
    """Integers stay integers in the file; half-integers stay floats."""
    return int(x) if float(x).is_integer() else float(x)


def _float(value, name, optional=False):
    if value is None and optional:
        return None
    try:
        # plain YAML reads 1e-12 (no dot) as a string
        out = float(value)
    except (TypeError, ValueError):
        raise ModelError(f"{name} must be a number, got {value!r}")
    return out


def _int(value, name, optional=False):
    if value is None and optional:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ModelError(f"{name} must be an integer, got {value!r}")
    try:
        f = float(value)
    except ValueError:
        raise ModelError(f"{name} must be an integer, got {value!r}")
    if not f.is_integer():
        raise ModelError(f"{name} must be an integer, got {value!r}")
    return int(f)


def _section(doc, name, allowed):
    sec = doc.get(name) or {}
    if not isinstance(sec, dict):
        raise ModelError(f"section '{name}' must be a mapping")
    extra = set(sec) - set(allowed)
    if extra:
        raise ModelError(f"unknown key(s) in '{name}': {', '.join(sorted(map(str, extra)))}")
    return sec


def from_dict(doc):
    if not isinstance(doc, dict):
        raise ModelError("config must be a mapping with a 'model' section")
    extra = set(doc) - {"model", "grid", "tolerances", "task"}
    if extra:
        raise ModelError(f"unknown config section(s): {', '.join(sorted(map(str, extra)))}")
    if "model" not in doc:
        raise ModelError("config has no 'model' section")
    m = _section(doc, "model", ("j", "hbar", "terms"))
    if "j" not in m or "terms" not in m:
        raise ModelError("model needs 'j' and 'terms'")
    terms = m["terms"]
    if not isinstance(terms, (list, tuple)) or not terms:
        raise ModelError("model.terms must be a non-empty list of [coefficient, [operators]]")
    clean = []
    for i, t in enumerate(terms):
        if not isinstance(t, (list, tuple)) or len(t) != 2:
            raise ModelError(f"term {i} ({t!r}) is not a [coefficient, [operators]] pair")
        clean.append((_float(t[0], f"coefficient of term {i} ({t!r})"), t[1]))
    model = ModelSpec(j=_float(m["j"], "model.j"), terms=tuple(clean),
                      hbar=_float(m.get("hbar"), "model.hbar", optional=True))
    g = _section(doc, "grid", ("N", "zmax"))
    grid = GridConfig(N=_int(g.get("N", DEFAULT_N), "grid.N"),
                      zmax=_float(g.get("zmax", DEFAULT_ZMAX), "grid.zmax"))
    if grid.N < 2 or not grid.zmax > 0:
        raise ModelError("grid.N must be >= 2 and grid.zmax positive")
    t = _section(doc, "tolerances", ("ode", "root", "dE"))
    tol = ToleranceConfig(ode=_float(t.get("ode", QUANT_RTOL), "tolerances.ode"),
                          root=_float(t.get("root", ROOT_TOL), "tolerances.root"),
                          dE=_float(t.get("dE"), "tolerances.dE", optional=True))
    if not (tol.ode > 0 and tol.root > 0) or (tol.dE is not None and not tol.dE > 0):
        raise ModelError("tolerances must be positive")
    k = _section(doc, "task", ("state", "method", "index_base", "q0", "p0"))
    task = TaskConfig(state=_int(k.get("state"), "task.state", optional=True),
                      method=k.get("method"),
                      index_base=_int(k.get("index_base", 0), "task.index_base"),
                      q0=_float(k.get("q0"), "task.q0", optional=True),
                      p0=_float(k.get("p0"), "task.p0", optional=True))
    if task.method is not None and task.method not in METHODS:
        raise ModelError(f"task.method must be one of {METHODS}, got {task.method!r}")
    if task.index_base not in (0, 1):
        raise ModelError("task.index_base must be 0 or 1")
    return RunConfig(model=model, grid=grid, tolerances=tol, task=task)


def loads(text):
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelError(f"config is not valid YAML: {exc}")
    return from_dict(doc)


def load(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ModelError(f"cannot read config {path}: {exc.strerror}")
    return loads(text)


def dumps(cfg):
    # PyYAML writes floats with repr(), which round-trips exactly
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def dump(cfg, path):
    with open(path, "w") as fh:
        fh.write(dumps(cfg))
