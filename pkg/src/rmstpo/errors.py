class RMSTError(Exception):
    """Base class for all package errors."""


class ValidationError(RMSTError, ValueError):
    """Malformed or out-of-range input."""


class EstimationError(RMSTError, ArithmeticError):
    """A quantity cannot be estimated from the given data."""


class InestimableError(EstimationError):
    """The Kaplan-Meier RMST is not defined at the requested horizon."""
