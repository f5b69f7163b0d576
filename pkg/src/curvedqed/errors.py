"""Exception hierarchy shared by all modules."""


class CurvedQEDError(Exception):
    """Base class for every error raised by the package."""


class DomainError(CurvedQEDError):
    """A point lies outside the coordinate domain or a coordinate patch."""


class ConvergenceError(CurvedQEDError):
    """An iterative solver did not converge.

    The final residual is kept on the instance so callers can report it.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class LightConeError(CurvedQEDError):
    """A logarithm was requested for a lightlike separated pair."""


class InvalidMassError(CurvedQEDError):
    """The requested propagator route does not support this mass."""


class UnsupportedOrderError(CurvedQEDError):
    """An expansion order exceeds the supported cap."""


class OrderingError(CurvedQEDError):
    """The time ordering of a point pair is wrong for the requested function."""


class ExpressionSyntaxError(CurvedQEDError):
    def __init__(self, message, position):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnknownIdentifierError(ExpressionSyntaxError):
    def __init__(self, name, position):
        CurvedQEDError.__init__(self, f"unknown identifier {name!r} at offset {position}")
        self.name = name
        self.position = position


class ValidationError(CurvedQEDError):
    """A structural check on user supplied data failed."""


class ConfigError(CurvedQEDError):
    """A job configuration is malformed; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
