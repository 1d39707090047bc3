"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A parameter or input violates a documented precondition."""


class UnsupportedConfiguration(ConfigurationError):
    """The requested construction exists in principle but is not provided."""


class ConvergenceError(RuntimeError):
    """An iterative numerical routine failed to converge."""


class DivergenceError(RuntimeError):
    """An optimization run produced a non-finite or exploding iterate."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
