"""
Typed errors for feast-events.

Every error carries a stable code, a human-readable message and a details
dict, so the CLI can report failures as one machine-readable JSON line.
"""

from typing import Any, Optional


class FeastError(Exception):
    """
    Base exception for all feast-events errors.

    Attributes:
        code: Error code (e.g., "MALFORMED_STREAM", "TIME_REGRESSION")
        message: Human-readable error message
        details: Additional error details
        retryable: Whether the operation may succeed if repeated
    """

    def __init__(
        self,
        code: str,
        message: str,
        details: Optional[dict[str, Any]] = None,
        retryable: bool = False,
    ):
        super().__init__(message)
        self.code = code
        self.message = message
        self.details = details or {}
        self.retryable = retryable

    def to_dict(self) -> dict[str, Any]:
        """Machine-readable form used by the CLI error channel."""
        return {
            "code": self.code,
            "message": self.message,
            "details": self.details,
            "retryable": self.retryable,
        }

    def __repr__(self) -> str:
        parts = [f"code={self.code!r}", f"message={self.message!r}"]
        if self.details:
            parts.append(f"details={self.details!r}")
        return f"{self.__class__.__name__}({', '.join(parts)})"


# ============================================================================
# Event streams
# ============================================================================


class MalformedStreamError(FeastError):
    """Raised when an encoded event stream cannot be split into ordered records."""

    def __init__(
        self,
        message: str,
        byte_length: Optional[int] = None,
        record_index: Optional[int] = None,
    ):
        details: dict[str, Any] = {}
        if byte_length is not None:
            details["byte_length"] = byte_length
        if record_index is not None:
            details["record_index"] = record_index
        super().__init__(code="MALFORMED_STREAM", message=message, details=details)


class OutOfRangeError(FeastError):
    """Raised when a decoded record addresses a pixel outside the sensor."""

    def __init__(
        self,
        message: str,
        record_index: int,
        x: Optional[int] = None,
        y: Optional[int] = None,
    ):
        details: dict[str, Any] = {"record_index": record_index}
        if x is not None:
            details["x"] = x
        if y is not None:
            details["y"] = y
        super().__init__(code="OUT_OF_RANGE", message=message, details=details)
        self.record_index = record_index


class EncodeRangeError(FeastError):
    """Raised when an event field does not fit its encoded bit width."""

    def __init__(self, message: str, field: str, value: int, index: int):
        super().__init__(
            code="RANGE_ERROR",
            message=message,
            details={"field": field, "value": value, "index": index},
        )


class DimensionMismatchError(FeastError):
    """Raised when streams with different sensor dimensions are combined."""

    def __init__(self, message: str, expected: tuple[int, int], got: tuple[int, int]):
        super().__init__(
            code="DIMENSION_MISMATCH",
            message=message,
            details={"expected": list(expected), "got": list(got)},
        )


# ============================================================================
# Surfaces
# ============================================================================


class OutOfBoundsError(FeastError):
    """Raised when an event lies outside the surface grid."""

    def __init__(self, message: str, x: int, y: int):
        super().__init__(code="OUT_OF_BOUNDS", message=message, details={"x": x, "y": y})


class TimeRegressionError(FeastError):
    """Raised when an event is older than the last event stored at its pixel."""

    def __init__(self, message: str, x: int, y: int, last_t: int, t: int):
        super().__init__(
            code="TIME_REGRESSION",
            message=message,
            details={"x": x, "y": y, "last_t": last_t, "t": t},
        )


class InternalInvariantError(FeastError):
    """Raised when an internal invariant is violated (a bug, not bad input)."""

    def __init__(self, message: str, details: Optional[dict[str, Any]] = None):
        super().__init__(code="INTERNAL_INVARIANT", message=message, details=details)


# ============================================================================
# Parameters and numerics
# ============================================================================


class ParameterError(FeastError):
    """Raised when an operation parameter violates its precondition."""

    def __init__(self, message: str, parameter: Optional[str] = None, value: Any = None):
        details: dict[str, Any] = {}
        if parameter:
            details["parameter"] = parameter
            details["value"] = value
        super().__init__(code="INVALID_PARAMETER", message=message, details=details)


class ShapeMismatchError(FeastError):
    """Raised when arrays or snapshots do not share the expected shape."""

    def __init__(self, message: str, expected: Any = None, got: Any = None):
        super().__init__(
            code="SHAPE_MISMATCH",
            message=message,
            details={"expected": expected, "got": got},
        )


class UndefinedInputError(FeastError):
    """Raised when a statistic is undefined for the given input."""

    def __init__(self, message: str):
        super().__init__(code="UNDEFINED_INPUT", message=message)


class NonFiniteInputError(FeastError):
    """Raised when a classifier receives NaN or infinite values."""

    def __init__(self, message: str = "Input contains non-finite values"):
        super().__init__(code="NON_FINITE_INPUT", message=message)


class LabelRangeError(FeastError):
    """Raised when a class label falls outside [0, n_classes)."""

    def __init__(self, message: str, label: int, n_classes: Optional[int] = None):
        details: dict[str, Any] = {"label": label}
        if n_classes is not None:
            details["n_classes"] = n_classes
        super().__init__(code="LABEL_OUT_OF_RANGE", message=message, details=details)


# ============================================================================
# Configuration, datasets and artifacts
# ============================================================================


class ConfigError(FeastError):
    """Raised when an experiment configuration fails validation."""

    def __init__(self, message: str, field_errors: Optional[list[dict[str, str]]] = None):
        details = {"field_errors": field_errors} if field_errors else {}
        super().__init__(code="CONFIG_INVALID", message=message, details=details)


class DatasetError(FeastError):
    """Raised when a dataset location is missing or unreadable."""

    def __init__(self, message: str, path: Optional[str] = None):
        details = {"path": path} if path else {}
        super().__init__(code="DATASET_ERROR", message=message, details=details)


class ArtifactError(FeastError):
    """Raised when a persisted artifact cannot be read back."""

    def __init__(self, message: str, path: Optional[str] = None):
        details = {"path": path} if path else {}
        super().__init__(code="ARTIFACT_INVALID", message=message, details=details)


class DownloadError(FeastError):
    """Raised when a dataset archive download fails."""

    def __init__(
        self,
        message: str,
        url: Optional[str] = None,
        status: Optional[int] = None,
        retryable: bool = True,
    ):
        details: dict[str, Any] = {}
        if url:
            details["url"] = url
        if status:
            details["status"] = status
        super().__init__(
            code="DOWNLOAD_FAILED", message=message, details=details, retryable=retryable
        )


# Error class to process exit code mapping
EXIT_CODES: dict[type[FeastError], int] = {
    ConfigError: 2,
    DatasetError: 3,
    ArtifactError: 3,
    MalformedStreamError: 4,
    OutOfRangeError: 4,
    EncodeRangeError: 4,
    DimensionMismatchError: 4,
    OutOfBoundsError: 5,
    TimeRegressionError: 5,
    ParameterError: 6,
    ShapeMismatchError: 6,
    UndefinedInputError: 6,
    NonFiniteInputError: 6,
    LabelRangeError: 6,
    DownloadError: 7,
    InternalInvariantError: 70,
}


def exit_code_for(error: FeastError) -> int:
    """
    Resolve the process exit code for an error.

    Args:
        error: Raised error

    Returns:
        Exit code of the nearest mapped class in the error's MRO, or 1
    """
    for cls in type(error).__mro__:
        if cls in EXIT_CODES:
            return EXIT_CODES[cls]
    return 1
