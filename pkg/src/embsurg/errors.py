"""Exception hierarchy shared across the toolkit.

The CLI maps ``ConfigurationError`` to exit code 2 and every other
``EmbsurgError`` to exit code 3.
"""


class EmbsurgError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(EmbsurgError, ValueError):
    """Invalid configuration or argument value."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ShapeError(EmbsurgError, ValueError):
    pass


class InsufficientDataError(EmbsurgError, ValueError):
    pass


class DegeneratePairError(EmbsurgError, ValueError):
    """A latent pair with identical endpoints (zero denominator)."""


class StateError(EmbsurgError, RuntimeError):
    pass


class CapabilityError(EmbsurgError, RuntimeError):
    pass


class TrainingFailure(EmbsurgError, RuntimeError):
    """Non-finite loss during GAN or classifier training.

    ``last_snapshot`` carries the most recent finite checkpoint, if any.
    """

    def __init__(self, message, last_snapshot=None):
        super().__init__(message)
        self.last_snapshot = last_snapshot


class OptimizationDiverged(EmbsurgError, RuntimeError):
    """Non-finite objective during embedding optimization or finetuning."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class IntegrityError(EmbsurgError, IOError):
    pass


class UnsupportedVersionError(EmbsurgError, IOError):
    pass
