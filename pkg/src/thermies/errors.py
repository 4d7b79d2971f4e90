"""Exception hierarchy shared by every thermies module."""


class ThermiesError(Exception):
    """Base class for all errors raised by the library."""


class SymmetryError(ThermiesError, ValueError):
    """Input matrix is not symmetric (or not square)."""


class NotPSDError(ThermiesError, ValueError):
    """Matrix has an eigenvalue below the PSD tolerance."""


class SingularMatrixError(ThermiesError, ValueError):
    """Operation needs a non-singular matrix."""


class FactorizationError(ThermiesError, ValueError):
    """Cholesky factorization failed."""

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SolverError(ThermiesError, RuntimeError):
    """Eigen-solver did not converge."""


class InfeasibleError(ThermiesError, ValueError):
    """Target cannot be mitigated under the given quantization."""


class CapacityError(ThermiesError, ValueError):
    """Problem size exceeds an enumeration or evaluation cap."""


class GridRangeError(ThermiesError, ValueError):
    """Value lies outside the span of a hardware grid."""


class PrecisionError(ThermiesError, ValueError):
    """Entry is not representable on the device."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConfigurationError(ThermiesError, ValueError):
    """Invalid solver or experiment configuration."""


class InsufficientDataError(ThermiesError, ValueError):
    """Too few samples or matrices for the requested statistic."""


class EvaluationError(ThermiesError, ValueError):
    """A user-supplied function returned non-finite output."""


class DomainError(ThermiesError, ValueError):
    """Argument outside the mathematical domain of the operation."""


class FeasibilityWarning(UserWarning):
    """Target violates the sufficient condition for PSD neighbors."""


class MatrixFormatError(ThermiesError, ValueError):
    """Malformed matrix text file."""
