"""Exception hierarchy.

The CLI maps each class to a distinct exit code, so new errors should
subclass one of the three families below rather than ``CtfBoundsError``.
"""


class CtfBoundsError(Exception):
    exit_code = 1


class ValidationError(CtfBoundsError, ValueError):
    """Malformed or inconsistent user input (diagram, data, query, flags)."""

    exit_code = 3


class ParseError(ValidationError):
    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class CycleError(ValidationError):
    pass


class FeasibilityError(CtfBoundsError):
    """The request is well formed but cannot be served within limits."""

    exit_code = 4


class BudgetExceededError(FeasibilityError):
    pass


class InfeasibleConstraintsError(FeasibilityError):
    def __init__(self, message, max_violation=None):
        self.max_violation = max_violation
        super().__init__(message)


class InvariantViolation(CtfBoundsError, RuntimeError):
    """Internal state broke an invariant that valid inputs cannot break."""

    exit_code = 5
