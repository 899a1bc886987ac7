"""Exception types shared across the package."""


class FractalFieldsError(Exception):
    """Base class for all package errors."""


class ResourceLimitError(FractalFieldsError):
    """Raised when a requested construction exceeds the vertex budget."""


class ConfigError(FractalFieldsError):
    """Raised for invalid, unknown or missing configuration values."""


class IncompatibleDataError(FractalFieldsError):
    """Raised when problem data violates a solvability requirement."""


class SolverConvergenceError(FractalFieldsError):
    """Raised when an iterative solver stops without reaching its tolerance.

    Carries the partial solve report so callers can inspect the iteration
    history instead of silently accepting a bad solution.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
