"""Exception and warning types raised across the package."""


class SardError(Exception):
    """Base class for all package errors."""


class DuplicateLocation(SardError, ValueError):
    pass


class NonpositiveArea(SardError, ValueError):
    pass


class CoordinateOutOfRange(SardError, ValueError):
    pass


class TooFewLocations(SardError, ValueError):
    pass


class OutOfRange(SardError, ValueError):
    pass


class SingularStar(SardError, ArithmeticError):
    """A GFDM star whose normal matrix cannot be reliably solved."""

    def __init__(self, location, condition):
        self.location = location
        self.condition = condition
        super().__init__(
            f"star at location {location} is singular or ill-conditioned "
            f"(condition number {condition:.3g})"
        )


class DimensionMismatch(SardError, ValueError):
    pass


class NonFiniteField(SardError, FloatingPointError):
    pass


class StabilityViolation(SardError, FloatingPointError):
    pass


class RankDeficientDesign(SardError, ArithmeticError):
    pass


class DegenerateAggregate(SardError, ValueError):
    pass


class ZeroPhiTilde(SardError, ZeroDivisionError):
    pass


class NonConvergence(SardError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class LambdaOutOfRange(SardError, ValueError):
    pass


class EmptyBand(SardError, ValueError):
    pass


class NegativeForecast(SardError, ValueError):
    pass


class ConfigError(SardError, ValueError):
    pass


class DisconnectedWarning(UserWarning):
    """Some location pairs are unreachable within the contiguity graph."""


class WeakInstrumentsWarning(UserWarning):
    """A first-stage F statistic fell below 10."""
