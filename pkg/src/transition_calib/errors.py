"""Exception types raised by the calibration toolkit."""


class CalibrationError(Exception):
    """Base class for all toolkit errors."""


class StationarityError(CalibrationError, ValueError):
    """AR matrix has spectral radius >= 1."""


class DimensionError(CalibrationError, ValueError):
    """Array shapes do not match the model layout."""


class ConditioningError(CalibrationError, ArithmeticError):
    """A covariance that must be positive definite failed to factorize.

    Attributes
    ----------
    period : int or None
        Zero-based period index where the factorization failed.
    """

    def __init__(self, message, period=None):
        super().__init__(message)
        self.period = period


class NonConvergenceError(CalibrationError, ArithmeticError):
    """Newton-Raphson mode estimation hit its iteration limit."""

    def __init__(self, message, last_iterate=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class StepRejectionError(CalibrationError, ArithmeticError):
    """A Hessian block was not negative definite during mode estimation."""

    def __init__(self, message, period=None):
        super().__init__(message)
        self.period = period


class WeightCollapseError(CalibrationError, ArithmeticError):
    """Every particle weight underflowed to zero."""

    def __init__(self, message, period=None):
        super().__init__(message)
        self.period = period


class ConfigError(CalibrationError, ValueError):
    """Configuration file could not be parsed or failed validation."""
