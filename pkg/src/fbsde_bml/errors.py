"""Shared exception types."""


class DivergenceError(RuntimeError):
    """Raised when a simulation or update produces non-finite values.

    `step` carries the time-node or training-step index at which the
    non-finite value first appeared, when known.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step
