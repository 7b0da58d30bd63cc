"""Level record shared by the exact and semiclassical pipelines."""

from dataclasses import dataclass, field, replace

EXACT = "exact"
BOHR_SOMMERFELD = "bohr-sommerfeld"

NEAR_SEPARATRIX = "near-separatrix"
EXTRAPOLATED = "extrapolated"
DEGENERATE = "degenerate"


@dataclass(frozen=True)
class QuantizedLevel:
    """One energy level.

    ``n`` is the index within the branch for Bohr-Sommerfeld levels and the
    global rank for exact levels.  ``index`` is the global rank in the merged,
    ascending list (filled in after merging).
    """

    n: int
    E: float
    method: str
    branch: object = None
    residual: float = 0.0
    flags: tuple = ()
    index: int = -1
    T: float = float("nan")
    dIsk_dE: float = float("nan")
    d2S_dE2: float = float("nan")
    extras: dict = field(default_factory=dict, compare=False)

    def with_index(self, index):
        return replace(self, index=index)

    def has_flag(self, flag):
        return flag in self.flags

    def as_record(self):
        """JSON-ready dictionary (the CLI level-table format)."""
        return {
            "n": int(self.n),
            "index": int(self.index),
            "E": float(self.E),
            "method": self.method,
            "branch": self.branch,
            "residual": float(self.residual),
            "flags": list(self.flags),
        }
