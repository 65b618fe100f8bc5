# errors.py

from typing import Optional


class GroupSetError(Exception):
    """Base class for every error raised by GroupSet."""


class InputError(GroupSetError, ValueError):
    """An operation was called with inputs that violate its preconditions."""


class DivergenceError(GroupSetError, ArithmeticError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, step: Optional[int] = None):
        if step is not None:
            message = f"{message} at step {step}"
        super().__init__(message)
        self.step = step


class DatasetIOError(GroupSetError, OSError):
    """Reading or writing a dataset, checkpoint or report failed."""

    def __init__(self, message: str, path: str):
        super().__init__(f"{message}: {path}")
        self.path = path
