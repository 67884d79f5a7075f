"""
Exception hierarchy for cvlab.

Every exception carries the process exit code the command-line front end
uses for it:

- 1: report files that cannot be read or written
- 2: usage, configuration, bounds and budget problems
- 3: numerical degeneracy (singular systems, unit leverages)
- 4: statistical-check failures (reported by the CLI, never raised here)
"""

from typing import Optional


class CVLabError(Exception):
    """Base exception for cvlab."""

    exit_code: int = 1


class ConfigurationError(CVLabError):
    """Invalid configuration, generator spec or argument."""

    exit_code = 2


class BoundsError(ConfigurationError):
    """An integer argument is outside its admissible range."""
    pass


class BudgetError(BoundsError):
    """A combinatorial enumeration would exceed the split budget."""

    def __init__(self, n: int, p: int, count: int, limit: int):
        self.n = n
        self.p = p
        self.count = count
        self.limit = limit
        super().__init__(
            f"leave-p-out with n={n}, p={p} needs binomial({n}, {p}) = {count} "
            f"splits, above the limit of {limit}"
        )


class ParseError(ConfigurationError):
    """Malformed input file."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class SchemeError(ConfigurationError):
    """Operation requires a different splitting scheme."""
    pass


class ShapeError(ConfigurationError):
    """Sizes of datasets, plans or arrays do not agree."""
    pass


class GridError(ConfigurationError):
    """Histogram bin width does not define a regular grid of [0, 1]."""
    pass


class ContrastMismatchError(ConfigurationError):
    """Contrast is not compatible with the predictor or the sample kind."""
    pass


class UnsupportedTaskError(ConfigurationError):
    """Operation is undefined for the dataset kind."""
    pass


class NumericalDegeneracyError(CVLabError):
    """Base class for numerically degenerate problems."""

    exit_code = 3


class SingularityError(NumericalDegeneracyError):
    """Matrix is singular or too badly conditioned to invert."""
    pass


class DegenerateLeverageError(NumericalDegeneracyError):
    """A leverage equals one, the left-out point cannot be predicted."""
    pass


class DegenerateSmootherError(NumericalDegeneracyError):
    """Smoother trace reaches the sample size."""
    pass


class ConditioningError(NumericalDegeneracyError):
    """Linear system used to fit variance parameters is ill-conditioned."""
    pass


class RuleFailureError(CVLabError):
    """A learning rule of a menu failed; names the offending identifier."""

    def __init__(self, rule_id: str, cause: Exception):
        self.rule_id = rule_id
        self.cause = cause
        super().__init__(f"rule '{rule_id}' failed: {cause}")

    @property
    def exit_code(self) -> int:  # type: ignore[override]
        return getattr(self.cause, "exit_code", 1)
