"""Exception types raised across the package."""


class BanditError(Exception):
    """Base class for all package errors."""


class ParameterError(BanditError, ValueError):
    """A hyperparameter is outside its admissible range."""


class ShapeError(BanditError, ValueError):
    """Array dimensions are inconsistent."""


class StateError(BanditError, RuntimeError):
    """An operation was requested in a state that cannot support it."""


class NumericalError(BanditError, ArithmeticError):
    """A factorization failed even after jitter escalation."""


class ConfigError(BanditError, ValueError):
    """An experiment configuration is invalid."""
