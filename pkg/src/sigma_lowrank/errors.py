"""Exception types shared across the package."""


class SigmaLowrankError(Exception):
    """Base class for all package errors."""


class ValidationError(SigmaLowrankError):
    """Bad input: shapes, ranks, file contents, configuration."""


class NumericalError(SigmaLowrankError):
    """A numerical routine failed beyond recovery."""


class CholeskyBreakdown(NumericalError):
    """Cholesky failed even after ridge regularization; retry with the
    eigendecomposition-based square root."""


class SingularRootError(NumericalError):
    """Covariance square root is numerically singular; increase epsilon."""
