"""Exception hierarchy. The CLI maps each class to an exit code."""


class IsometryError(Exception):
    """Base class for all errors raised by this package."""


class SpecError(IsometryError, ValueError):
    """A component, geometry or network description violates its invariants."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class DimensionError(SpecError):
    """Adjacent parts of a network do not agree on their dimensions."""


class PrerequisiteViolation(IsometryError):
    """A composition theorem's prerequisite is known to fail."""


class ConvergenceError(IsometryError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message: str, residuals=None):
        self.residuals = residuals
        super().__init__(message)


class BudgetError(IsometryError):
    """A requested matrix exceeds the configured size budget."""
