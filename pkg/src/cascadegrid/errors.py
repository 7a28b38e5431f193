"""Exception types shared across the package.

Two broad classes matter to callers: validation problems (bad configs,
infeasible inputs) and numerical failures (non-convergent iterations,
singular circuits).  The CLI maps them to exit codes 1 and 2.
"""


class CascadeGridError(Exception):
    """Base class for all package errors."""


class ValidationError(CascadeGridError):
    """Invalid configuration, parameters, or input data."""


class InfeasibleLoadError(ValidationError):
    """Requested load cannot be met within the aggregate DG bounds."""


class NumericalError(CascadeGridError):
    """A numerical procedure failed to converge or lost accuracy."""


class SingularCircuitError(NumericalError):
    """Total series impedance of the loop is zero."""


class DegenerateSharingError(NumericalError):
    """Sharing map produced a non-positive total at the evaluated current."""


class AlgebraicLoopError(NumericalError):
    """Current/voltage fixed-point iteration did not converge."""

    def __init__(self, message: str, last_current: float, residual: float):
        super().__init__(message)
        self.last_current = last_current
        self.residual = residual


class ComparisonError(ValidationError):
    """Trajectories are not comparable (different grids or schedules)."""
