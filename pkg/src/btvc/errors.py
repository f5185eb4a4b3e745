"""Exception types shared across the package."""


class BtvcError(Exception):
    """Base class for all package errors."""


class ValidationError(BtvcError):
    """Invalid inputs: schema violations, domain errors, infeasible configs."""


class DivergenceError(BtvcError):
    """Optimizer produced a non-finite objective; carries the trace so far."""

    def __init__(self, message: str, trace=None, iteration: int | None = None):
        super().__init__(message)
        self.trace = [] if trace is None else list(trace)
        self.iteration = iteration
