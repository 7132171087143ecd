"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An input violates a documented precondition."""


class InvariantViolation(ValueError):
    """A data object fails one of its structural invariants."""


class SolverFailure(RuntimeError):
    """An iterative or direct solve did not reach the requested accuracy."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PlacementFailure(RuntimeError):
    """Random non-overlapping placement gave up before placing every object."""

    def __init__(self, message, placed):
        super().__init__(message)
        self.placed = placed
