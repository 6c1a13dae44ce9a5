"""Exception hierarchy.

Validation problems (bad grids, coefficients, configs, file formats) and
solver failures are kept in separate branches so the CLI can map them to
distinct exit codes.
"""


class WmpriorError(Exception):
    """Base class for all package errors."""


class ValidationError(WmpriorError):
    """Invalid user input: grids, coefficients, configs, file contents."""


class InvalidGridError(ValidationError):
    pass


class InvalidCoefficientError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class FileFormatError(ValidationError):
    pass


class SolverError(WmpriorError):
    """Numerical failure in a factorization or iterative solver."""


class NotSPDError(SolverError):
    """Factorization hit a non-positive pivot.

    ``pivot_index`` is the 0-based pivot position (in factorization order)
    where positive definiteness failed, or None when the backend only
    reports singularity.
    """

    def __init__(self, message, pivot_index=None):
        super().__init__(message)
        self.pivot_index = pivot_index


class PartialConvergenceError(SolverError):
    """Iterative solve stopped with at least one unconverged system.

    Carries the worst relative residual and, when available, the full
    per-system residual vector.
    """

    def __init__(self, message, worst_residual, residuals=None):
        super().__init__(message)
        self.worst_residual = worst_residual
        self.residuals = residuals


class BreakdownError(SolverError):
    """Krylov basis cannot be expanded and the iteration is unconverged."""
