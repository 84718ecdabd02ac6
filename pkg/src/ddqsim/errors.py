"""Exception types shared across the package."""


class DdqError(Exception):
    """Base class for all package errors."""


class ConfigError(DdqError):
    """Invalid device/campaign configuration or malformed input file."""


class SequenceError(DdqError):
    """Malformed pulse sequence."""


class EmptyLogicalSubspaceError(DdqError):
    """Postselection found no shots in the logical subspace at a delay point."""


class DegenerateModelError(DdqError):
    """Classifier covariance collapsed (blobs indistinguishable)."""


class FitConvergenceError(DdqError):
    """Nonlinear fit failed to converge; diagnostics attached."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ResampleError(DdqError):
    """Too many bootstrap resamples failed to refit."""
