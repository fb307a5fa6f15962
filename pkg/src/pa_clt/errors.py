"""Exception types raised across the package."""


class PAError(Exception):
    """Base class for all package errors."""


class ParameterError(PAError, ValueError):
    """Invalid model parameters (m < 1 or delta <= -m) or invalid indices."""


class SelfLoopError(PAError, ValueError):
    """An edge from the arriving vertex to itself was requested."""


class TargetRangeError(PAError, IndexError):
    """An edge target outside the set of existing vertices."""


class ShapeError(PAError, ValueError):
    """Mismatched degree ranges or (s, i) positions."""


class InsufficientDataError(PAError, ValueError):
    """Fewer observations than an estimator needs."""


class DegenerateParameterError(PAError, ArithmeticError):
    """A scaling-coefficient factor vanishes, so the coefficient is undefined."""

    def __init__(self, message, t=None, r=None):
        super().__init__(message)
        self.t = t
        self.r = r


class InvariantError(PAError, RuntimeError):
    """Internal consistency of a graph state was violated."""
