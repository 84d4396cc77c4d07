"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation requires."""


class NonFiniteError(ValueError):
    """An operation received NaN or infinite values."""


class ParseError(Exception):
    """A corpus file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(Exception):
    """Well-formed input that violates a semantic constraint."""


class NumericalError(Exception):
    """Training produced a non-finite quantity."""


class CheckpointError(Exception):
    """A checkpoint file is unreadable or incompatible with the data it is used with."""
