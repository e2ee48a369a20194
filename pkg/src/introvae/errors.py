"""Exception types shared across the package."""


class IntroVAEError(Exception):
    """Base class for all package errors."""


class InvalidInputError(IntroVAEError, ValueError):
    """Non-finite or otherwise invalid numeric input."""


class ShapeError(IntroVAEError, ValueError):
    """Array shapes or dimensions do not agree."""


class ConfigError(IntroVAEError, ValueError):
    """Invalid configuration value or combination."""


class PhaseError(IntroVAEError, RuntimeError):
    """A training step was requested in the wrong phase."""


class TrainingAborted(IntroVAEError, RuntimeError):
    """Training stopped because a loss became non-finite."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class CheckpointError(IntroVAEError, RuntimeError):
    """A checkpoint could not be read."""
