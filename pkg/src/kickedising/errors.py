"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A parameter is outside the domain an operation accepts."""


class InvalidInputError(ValueError):
    """Input data violates an operation's precondition (e.g. not unitary)."""


class ResourceLimitError(MemoryError):
    """The requested dense computation exceeds the configured memory guard."""


class DegenerateDataError(ValueError):
    """Sample data carries no spread to fit against."""


class ConvergenceError(RuntimeError):
    """An iterative method stopped before meeting its tolerance.

    The best available estimate is kept on ``best`` so callers can decide
    whether it is good enough.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ConfigError(ValueError):
    """An experiment configuration failed validation."""


class SchemaError(ValueError):
    """Result files do not share the expected column layout."""
