"""
Error types shared by the co-clustering modules.
Library code raises these; cli.py maps them to exit codes.
"""


class FunCLBMError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(FunCLBMError, ValueError):
    """Malformed series, dataset, file or parameter."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateSignalError(FunCLBMError):
    """Zero-variance log-periodogram (constant signal)."""

    def __init__(self, message, n_degenerate=0):
        super().__init__(message)
        self.n_degenerate = n_degenerate


class InvalidStructureError(FunCLBMError, ValueError):
    """Requested co-cluster structure does not fit the data dimensions."""


class DegenerateStructureError(FunCLBMError):
    """Clusters keep emptying out: the structure is too large for the data."""


class NumericError(FunCLBMError, ArithmeticError):
    """Non-invertible covariance or an underflowing posterior."""
