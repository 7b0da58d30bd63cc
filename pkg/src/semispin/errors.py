"""Exception hierarchy.  The CLI maps ModelError to exit code 2 and
NumericalError to exit code 3."""


class SemispinError(Exception):
    """Base class for all package errors."""


class ModelError(SemispinError, ValueError):
    """Invalid model, configuration or request."""


class GridMismatchError(ModelError):
    """Two fields live on different grids or masks."""


class NumericalError(SemispinError, ArithmeticError):
    """A numerical procedure could not deliver its contract."""


class FixedPointError(NumericalError):
    """The start point of an orbit is (numerically) a critical point."""


class NoReturnError(NumericalError):
    """An orbit did not close within the time budget."""


class CriticalEnergyError(NumericalError):
    """The energy coincides with, or is too close to, a critical value."""


class UnreachableEnergyError(NumericalError):
    """No contour of the requested energy exists on the requested branch."""


class BranchChangeError(NumericalError):
    """A finite-difference stencil crossed into a different contour family."""


class ConvergenceError(NumericalError):
    """An iterative solver ran out of its iteration budget."""
