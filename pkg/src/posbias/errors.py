"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid configuration or generator parameters."""


class DomainError(ValueError):
    """Argument outside the domain of an operation (e.g. position out of range)."""


class NoInteractionError(ValueError):
    """All relevances on a slate are zero, so no item can be chosen."""


class RequestError(ValueError):
    """A serving request cannot be satisfied."""


class EstimationError(ValueError):
    """Propensity estimation cannot proceed on the given log."""


class EmptyHistogramError(ValueError):
    """A popularity histogram carries no interactions."""


class TrainingError(RuntimeError):
    """Model training diverged."""

    def __init__(self, message, epoch=None, learning_rate=None):
        super().__init__(message)
        self.epoch = epoch
        self.learning_rate = learning_rate


class LogFormatError(ValueError):
    """A serialized log line cannot be parsed; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line
