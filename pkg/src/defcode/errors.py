"""Exception hierarchy shared across the package."""


class DefCodeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DefCodeError, ValueError):
    """Inconsistent shapes, sizes or configuration values."""


class InputError(DefCodeError, ValueError):
    """Malformed user-supplied data (bit sequences, files, CLI arguments)."""


class UsageError(DefCodeError, RuntimeError):
    """An operation was called in a state that does not support it,
    e.g. inference-mode normalization on an uncalibrated model."""


class NonFiniteGradientError(DefCodeError, FloatingPointError):
    """A gradient block contains NaN or Inf."""

    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter block {name!r}")
        self.name = name


class ModelFileError(DefCodeError, IOError):
    """Corrupt, truncated or version-mismatched model file."""
