"""Custom exceptions for the extreme-event GAN project."""

from typing import Any, Dict, Optional


class EventGanError(Exception):
    """Base exception for the extreme-event GAN project."""

    exit_code: int = 1

    def __init__(
        self,
        message: str,
        error_code: Optional[str] = None,
        details: Optional[Dict[str, Any]] = None,
    ):
        """Initialize project error.

        Args:
            message: Error message
            error_code: Optional error code
            details: Optional error details
        """
        super().__init__(message)
        self.message = message
        self.error_code = error_code
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to dictionary."""
        return {
            "error_type": self.__class__.__name__,
            "message": self.message,
            "error_code": self.error_code,
            "exit_code": self.exit_code,
            "details": self.details,
        }


class ValidationError(EventGanError):
    """Exception raised for value validation errors."""

    exit_code = 2

    def __init__(
        self,
        message: str,
        field: Optional[str] = None,
        value: Optional[Any] = None,
    ):
        """Initialize validation error.

        Args:
            message: Error message
            field: Field that failed validation
            value: Value that failed validation
        """
        super().__init__(message, error_code="VALIDATION_ERROR")
        self.field = field
        self.value = value
        self.details.update(
            {"field": field, "value": str(value) if value is not None else None}
        )


class ConfigurationError(EventGanError):
    """Exception raised for configuration errors."""

    exit_code = 2

    def __init__(self, message: str, config_key: Optional[str] = None):
        """Initialize configuration error.

        Args:
            message: Error message
            config_key: Configuration key that caused the error
        """
        super().__init__(message, error_code="CONFIGURATION_ERROR")
        self.config_key = config_key
        self.details.update({"config_key": config_key})


class ShapeError(EventGanError):
    """Exception raised when tensor shapes disagree with a layer or spec."""

    exit_code = 2

    def __init__(
        self,
        message: str,
        expected: Optional[Any] = None,
        actual: Optional[Any] = None,
    ):
        """Initialize shape error.

        Args:
            message: Error message
            expected: Expected shape or dimension
            actual: Shape or dimension that was received
        """
        super().__init__(message, error_code="SHAPE_ERROR")
        self.expected = expected
        self.actual = actual
        self.details.update(
            {
                "expected": str(expected) if expected is not None else None,
                "actual": str(actual) if actual is not None else None,
            }
        )


class DataProcessingError(EventGanError):
    """Exception raised for data processing errors."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        stage: Optional[str] = None,
        data_source: Optional[str] = None,
        error_code: str = "DATA_PROCESSING_ERROR",
    ):
        """Initialize data processing error.

        Args:
            message: Error message
            stage: Processing stage where error occurred
            data_source: Data source that caused the error
            error_code: Error code of the concrete failure
        """
        super().__init__(message, error_code=error_code)
        self.stage = stage
        self.data_source = data_source
        self.details.update({"stage": stage, "data_source": data_source})


class DataFormatError(DataProcessingError):
    """Raised when on-disk records do not follow the record format."""

    def __init__(
        self, message: str, stage: Optional[str] = None, data_source: Optional[str] = None
    ):
        super().__init__(message, stage, data_source, error_code="DATA_FORMAT_ERROR")


class DegenerateDataError(DataProcessingError):
    """Raised when data cannot support the requested statistics."""

    def __init__(
        self, message: str, stage: Optional[str] = None, data_source: Optional[str] = None
    ):
        super().__init__(message, stage, data_source, error_code="DEGENERATE_DATA_ERROR")


class IntegrityError(DataProcessingError):
    """Raised when a stored file is truncated, corrupted or fails its checksum."""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(
            message, stage="integrity", data_source=path, error_code="INTEGRITY_ERROR"
        )
        self.path = path


class WindowRangeError(DataProcessingError, IndexError):
    """Raised when a window index falls outside the manifest."""

    def __init__(self, index: int, record_count: int):
        super().__init__(
            f"Window index {index} out of range [0, {record_count})",
            stage="read_window",
            error_code="WINDOW_RANGE_ERROR",
        )
        self.index = index
        self.record_count = record_count
        self.details.update({"index": index, "record_count": record_count})


class NumericError(EventGanError):
    """Exception raised when a computation produces non-finite values."""

    exit_code = 4

    def __init__(
        self,
        message: str,
        operation: Optional[str] = None,
        step: Optional[int] = None,
    ):
        """Initialize numeric error.

        Args:
            message: Error message
            operation: Name of the first offending operation
            step: Training step at which the failure surfaced
        """
        super().__init__(message, error_code="NUMERIC_ERROR")
        self.operation = operation
        self.step = step
        self.details.update({"operation": operation, "step": step})
