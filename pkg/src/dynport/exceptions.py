"""Exception hierarchy.

Each family maps onto one CLI exit code (see :mod:`dynport.cli`).
"""


class DynportError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(DynportError, ValueError):
    """Invalid configuration, profile or problem definition."""

    exit_code = 2


class DataError(DynportError, ValueError):
    """Malformed or insufficient input data."""

    exit_code = 3


class ParseError(DataError):
    """A price file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SolverCapError(DynportError, ValueError):
    """An instance exceeds the hard size limit of a solver or builder."""

    exit_code = 4


class SolverAbort(DynportError, RuntimeError):
    """A solver stopped before completing its schedule."""

    exit_code = 4


class MpsUnderflowError(SolverAbort):
    """The MPS norm vanished or became non-finite during imaginary-time evolution."""


class PreprocessingWarning(UserWarning):
    """A period or date was dropped while preparing market data."""
