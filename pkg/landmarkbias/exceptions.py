"""
Custom exceptions for the landmark geometry toolkit.
"""

from typing import Iterable, Optional


class LandmarkError(Exception):
    """Base exception for landmarkbias errors."""
    pass


class SchemeError(LandmarkError):
    """Raised when a landmark scheme is malformed or inconsistent."""
    pass


class SchemeParseError(SchemeError):
    """Raised when a scheme document cannot be parsed."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.line = line
        self.field = field


class SchemeValidationError(SchemeError):
    """Raised when a parsed scheme violates a topology invariant."""

    def __init__(self, message: str, edge: Optional[str] = None):
        super().__init__(f"edge '{edge}': {message}" if edge is not None else message)
        self.edge = edge


class DimensionError(LandmarkError):
    """Raised when array shapes or point counts do not match."""
    pass


class ConfigError(LandmarkError):
    """Raised when a hyperparameter is out of its valid range."""
    pass


class InputError(LandmarkError):
    """Raised when input data is non-finite, negative or malformed."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class DuplicateIdError(InputError):
    """Raised when a record id appears twice in one stream."""
    pass


class JoinError(LandmarkError):
    """Raised when prediction and annotation ids do not match as sets."""

    def __init__(self, missing: Iterable[str], extra: Iterable[str]):
        self.missing = sorted(missing)
        self.extra = sorted(extra)
        super().__init__(
            "prediction ids do not match annotation ids: "
            f"missing predictions {self.missing}, unknown predictions {self.extra}"
        )


class DegeneracyError(LandmarkError):
    """Raised when a heatmap channel carries no mass to decode."""
    pass


class DivergenceError(LandmarkError):
    """Raised when an optimization run blows up."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} at step {step}")
        self.step = step


class UndefinedRateError(LandmarkError):
    """Raised when the bias rate is requested for a zero normal NME."""
    pass
