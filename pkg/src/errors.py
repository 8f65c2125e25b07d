"""
Exception hierarchy for interbank reconstruction and stress testing.
"""

from typing import Any, Optional


class InterbankError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(InterbankError, ValueError):
    """Invalid configuration, preset or manifest."""


class DomainError(InterbankError, ValueError):
    """An argument lies outside the domain of the operation."""


class NormalizationError(DomainError):
    """Matrix entries do not sum to one."""


class InfeasibleError(DomainError):
    """The requested object cannot exist for the given size."""


class InfiniteDivergenceError(InterbankError, ArithmeticError):
    """Positive mass on a cell where the reference matrix is zero."""


class SupportError(InterbankError, ValueError):
    """The support matrix cannot carry the marginals.

    ``axis``/``index`` name the offending row or column. When RAS hits an empty
    row or column mid-iteration, ``report`` holds the last finite iterate as a
    non-converged ReconstructionReport.
    """

    def __init__(
        self,
        message: str,
        axis: str = "",
        index: int = -1,
        report: Optional[Any] = None,
    ) -> None:
        super().__init__(message)
        self.axis = axis
        self.index = index
        self.report = report


class FitDegenerateError(InterbankError, ValueError):
    """Logistic parameters are not identifiable from the data."""


class FailureBudgetExceeded(InterbankError):
    """More sweep trials failed than the configured budget allows."""

    def __init__(self, failures: int, budget: int) -> None:
        super().__init__(f"{failures} failed trials exceed the failure budget {budget}")
        self.failures = failures
        self.budget = budget
