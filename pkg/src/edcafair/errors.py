"""Exception types raised across the package."""


class EdcaError(Exception):
    """Base class for all package errors."""


class ConfigError(EdcaError, ValueError):
    """A scenario or parameter set violates its invariants."""


class SolverError(EdcaError, RuntimeError):
    """An iterative solver failed to converge.

    ``residual`` holds the last residual norm and ``history`` whatever trail
    the solver kept (may be empty).
    """

    def __init__(self, message, residual=float("nan"), history=None):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual
        self.history = list(history or [])


class InfeasibleError(EdcaError):
    """The delay deadlines cannot all be met."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DesignError(EdcaError):
    """The LQI controller cannot be designed for the given plant."""
