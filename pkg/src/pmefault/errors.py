"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
``NumericalError`` -> 3.
"""


class PmeError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class ConfigError(PmeError, ValueError):
    """Invalid configuration value; the message names the offending field."""

    exit_code = 1

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DataError(PmeError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class NumericalError(PmeError, ArithmeticError):
    """Non-convergence, non-finite loss or a degenerate numerical configuration."""

    exit_code = 3


class UndefinedRateError(PmeError, ZeroDivisionError):
    """A confusion-matrix rate whose denominator is zero."""

    exit_code = 3
