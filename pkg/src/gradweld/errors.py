"""Exception hierarchy shared across the package.

Plain usage mistakes (dimension mismatches, zero batch sizes) raise
``ValueError``; everything with a dedicated CLI exit code gets its own class.
"""


class GradweldError(Exception):
    """Base class for package-specific errors."""


class ConfigError(GradweldError):
    """Invalid configuration value or unknown/missing config key."""


class DataError(GradweldError):
    """Bad numeric data: non-finite entries, insufficient samples."""


class NumericError(GradweldError):
    """Non-finite values produced during a numeric computation."""


class TrainingError(GradweldError):
    """Training diverged. Carries the last finite-loss parameters."""

    def __init__(self, message, last_params=None):
        super().__init__(message)
        self.last_params = last_params


class OracleError(GradweldError):
    """The numerical QP oracle failed to converge or to certify optimality."""


class VerificationError(GradweldError):
    """A verification suite found a residual above its bound."""
