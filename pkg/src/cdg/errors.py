class InvalidArgument(ValueError):
    """Raised when an argument violates an operation's precondition."""


class DegenerateResult(ArithmeticError):
    """Raised when a statistic is undefined for the given input."""
