"""Exception hierarchy.

The CLI maps each family to an exit code: configuration problems exit with 2,
numerical failures with 3 and I/O problems with 4.
"""


class KinsirError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(KinsirError, ValueError):
    """Invalid parameters, scenario files or preconditions."""

    exit_code = 2


class DomainError(ConfigError):
    """Argument outside the mathematical domain of an operation."""


class InfeasibleParametersError(ConfigError):
    pass


class NumericalError(KinsirError, RuntimeError):
    """A computation produced non-finite or invariant-breaking values."""

    exit_code = 3


class NonFiniteStateError(NumericalError):
    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (t={t:.6g})")
        self.t = t


class SolverError(NumericalError):
    pass


class PositivityError(NumericalError):
    pass


class ProbabilityOverflowError(NumericalError):
    pass


class OutputError(KinsirError, OSError):
    """Reading inputs or writing results failed."""

    exit_code = 4
