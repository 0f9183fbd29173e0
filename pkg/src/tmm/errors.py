"""Exception hierarchy shared by all tmm modules."""


class TmmError(Exception):
    """Base class for errors raised by tmm."""


class InvalidArgumentError(TmmError, ValueError):
    pass


class DegenerateInputError(TmmError, ValueError):
    """Point sets that make a Gram matrix singular by construction."""


class DomainError(TmmError, ValueError):
    """A point lies outside the domain of a map or model."""


class NumericalError(TmmError, ArithmeticError):
    """Non-finite values or a solver that failed to converge.

    ``trace`` carries whatever diagnostic history the caller collected
    (objective values, residuals, ...).
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(TmmError, ValueError):
    pass


class TruncationWarning(UserWarning):
    """A spectral sum was cut short by the stored support."""
