"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition (shape, curvature, range)."""


class TapeError(RuntimeError):
    """Structural misuse of a differentiation tape."""


class OracleError(ArithmeticError):
    """A finite-difference probe produced a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap; carries the last iterate."""

    def __init__(self, message, last_iterate=None, iterations=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class FormatError(ValueError):
    """A file does not match the expected binary or text layout."""


class NonFiniteError(FloatingPointError):
    """NaN or Inf encountered where finite values are required."""
