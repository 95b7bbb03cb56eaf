"""Exception types raised across the package."""


class LoraFieldError(Exception):
    pass


class ShapeError(LoraFieldError, ValueError):
    """Operand dimensions do not chain."""


class NumericError(LoraFieldError, ArithmeticError):
    pass


class StateError(LoraFieldError, RuntimeError):
    pass


class DataError(LoraFieldError, ValueError):
    pass


class TrainingError(LoraFieldError, RuntimeError):
    """Optimization diverged.

    ``last_finite_step`` is the last step whose loss was finite, and
    ``partial`` carries whatever was produced before the failure (for
    sequence encoding: the frames already encoded).
    """

    def __init__(self, message, last_finite_step=None, frame=None, partial=None):
        super().__init__(message)
        self.last_finite_step = last_finite_step
        self.frame = frame
        self.partial = partial


class FormatError(LoraFieldError, OSError):
    """Bad magic, truncated payload, or hash mismatch in a binary file."""
