"""Extreme-event GAN - Utility Modules.

This package contains the shared configuration, error, logging and validation
helpers used by the models, the data pipeline and the command line.
"""

__version__ = "1.0.0"
__author__ = "Weather Generative Modelling Team"

from .common.config import ConfigManager, config_hash, load_config
from .common.exceptions import (
    ConfigurationError,
    DataFormatError,
    DataProcessingError,
    DegenerateDataError,
    EventGanError,
    IntegrityError,
    NumericError,
    ShapeError,
    ValidationError,
    WindowRangeError,
)

# Common utilities
from .common.logging import StructuredLogger, get_logger, log_performance, setup_logging
from .common.validation import (
    DataValidator,
    SchemaValidator,
    validate_not_empty,
    validate_positive_int,
    validate_positive_number,
)

__all__ = [
    # Version info
    "__version__",
    "__author__",
    # Common utilities
    "setup_logging",
    "get_logger",
    "log_performance",
    "StructuredLogger",
    "ConfigManager",
    "load_config",
    "config_hash",
    "DataValidator",
    "SchemaValidator",
    "validate_positive_int",
    "validate_positive_number",
    "validate_not_empty",
    # Errors
    "EventGanError",
    "ValidationError",
    "ConfigurationError",
    "ShapeError",
    "DataProcessingError",
    "DataFormatError",
    "DegenerateDataError",
    "IntegrityError",
    "WindowRangeError",
    "NumericError",
]
