"""
Error categories raised by the simulator
"""


class PlateSimError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(PlateSimError, ValueError):
    """Invalid physical constant, grid size or tolerance."""


class PreconditionError(PlateSimError, ValueError):
    """An input violates the documented precondition of an operation."""


class ConfigError(PlateSimError, ValueError):
    """Configuration text could not be parsed or validated."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class NumericalError(PlateSimError):
    """Base class for failures of the numerical machinery."""


class DomainError(NumericalError):
    """Deflection is not admissible or a sample lies outside the gap."""


class SolverError(NumericalError):
    """A linear solve broke down or failed its residual check."""


class NonconvergenceError(NumericalError):
    """An iteration did not reach its tolerance."""


class StagnationError(NumericalError):
    """An eigen-iteration stopped making progress."""


class InternalConsistencyError(NumericalError):
    """An identity that holds analytically failed beyond rounding."""
