"""Exception types shared across the solver."""

from __future__ import annotations


class SeirdError(Exception):
    """Base class for all solver errors."""


class PreconditionError(SeirdError, ValueError):
    """Input data violates a sign or positivity requirement."""


class ConvergenceError(SeirdError):
    """An iterative solve did not reach its tolerance.

    ``report`` carries the solver state at the point of failure.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class InvariantViolation(SeirdError):
    """A computed quantity left its admissible range beyond the allowed slack."""

    def __init__(self, message: str, violations=None, trajectory=None):
        super().__init__(message)
        self.violations = list(violations or [])
        self.trajectory = trajectory


class SimulationError(SeirdError):
    """A time-stepping run aborted; ``trajectory`` holds the steps completed so far."""

    def __init__(self, message: str, trajectory=None, cause: Exception | None = None):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause


class ConfigError(SeirdError, ValueError):
    """Configuration text could not be parsed or describes inadmissible data."""

    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(key)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.line = line
        self.key = key
        self.detail = message
