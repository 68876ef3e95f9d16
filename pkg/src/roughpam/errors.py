"""Exception types shared across the package."""


class RoughPamError(Exception):
    """Base class for all package errors."""


class ParameterError(RoughPamError, ValueError):
    """Invalid model or run parameters."""


class SingularEvaluationError(RoughPamError, ValueError):
    """A kernel or density was evaluated exactly at a singular point."""


class TableRangeError(RoughPamError, ValueError):
    """Query outside the abscissa range of a lookup table."""


class GridMismatchError(RoughPamError, ValueError):
    """Objects built on different grids were combined."""


class QuadratureError(RoughPamError, RuntimeError):
    """Numerical integration failed to reach the requested tolerance."""


class GuardError(RoughPamError, ValueError):
    """A cost or variance guard on a Monte Carlo estimator was violated."""


class BoxOverflowError(RoughPamError, ValueError):
    """Query points or sampled paths leave the noise realization's box."""


class SolverError(RoughPamError, RuntimeError):
    """Variational solver produced a non-finite objective."""


class ClassificationError(RoughPamError, ValueError):
    """Initial measure classified into a regime the experiment cannot run."""
