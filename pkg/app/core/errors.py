"""
Exception hierarchy shared by the services, the CLI and the HTTP routes.
Every error carries the process exit code the CLI reports for it.
"""

from typing import Any, Optional


class StcLabError(Exception):
    """Base class of all laboratory errors."""

    exit_code: int = 2


class ParameterError(StcLabError, ValueError):
    """A numerical parameter lies outside the admissible range."""


class ConfigurationError(StcLabError):
    """An experiment, variant or signal is configured inconsistently or unknown."""


class DomainError(StcLabError, ValueError):
    """An operation was applied to a state outside its domain."""


class UndefinedMetricError(StcLabError):
    """A metric cannot be evaluated on the given trace."""


class DivergenceError(StcLabError):
    """
    A closed-loop run left the finite region.

    Attributes:
        step (int): Step index at which |x1| or |x2| exceeded the limit.
        trace (Any): Partial trace up to and including that step, if recorded.
    """

    def __init__(self, step: int, trace: Optional[Any] = None):
        super().__init__(f"closed loop diverged at step {step}")
        self.step = step
        self.trace = trace


class OutputError(StcLabError):
    """Results could not be written."""

    exit_code = 3


# CLI exit status when an audit found violations
EXIT_VIOLATION = 1
