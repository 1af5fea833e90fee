"""Exception hierarchy shared by every module."""


class SignGTError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SignGTError, ValueError):
    pass


class InvalidShapeError(ShapeError):
    pass


class NonFiniteError(SignGTError, FloatingPointError):
    pass


class TapeError(SignGTError, RuntimeError):
    pass


class InvalidParameterError(SignGTError, ValueError):
    pass


class InvalidInputError(SignGTError, ValueError):
    pass


class UndefinedMetricError(SignGTError, ValueError):
    pass


class InvalidSplitError(SignGTError, ValueError):
    pass


class FormatError(SignGTError, ValueError):
    """A dataset file on disk does not follow the documented layout."""


class TrainingFailure(SignGTError, RuntimeError):
    """Training diverged; ``epoch`` holds the 1-based epoch where it happened."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")
