class LigpError(Exception):
    """Base class for package errors."""


class InputError(LigpError, ValueError):
    """Malformed or out-of-contract input."""


class NumericalError(LigpError, ArithmeticError):
    """A factorization or estimate could not be computed stably."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class FittingError(LigpError):
    """Hyperparameter or prescale fitting failed."""
