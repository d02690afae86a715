#!/usr/bin/env python3
"""
Error types for the quantum attribution toolkit.

Every error knows the exit code the command line maps it to, so library
code can raise freely and `cli.py` only has to translate.
"""

from typing import Any, Dict, Optional

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4


class QAttrError(Exception):
    """Base class for all toolkit errors."""

    exit_code = EXIT_FAILURE

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form written to stderr by the CLI."""
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
            "details": {key: _jsonable(value) for key, value in self.details.items()},
        }


class ConfigError(QAttrError, ValueError):
    """Invalid or unknown configuration value."""

    exit_code = EXIT_CONFIG

    def __init__(self, message: str, field: Optional[str] = None, **details: Any):
        super().__init__(message, field=field, **details)
        self.field = field


class DataIOError(QAttrError, OSError):
    """Missing, unreadable or unwritable file."""

    exit_code = EXIT_IO


class DataFormatError(DataIOError):
    """File exists but its contents are not in the expected format."""


class NumericalError(QAttrError, ArithmeticError):
    """A computation left its numerically valid domain."""

    exit_code = EXIT_NUMERICAL


class NearOverflowSingularity(NumericalError):
    """Overflow amplitude too close to zero for the pixel chain rule."""

    def __init__(self, message: str, overflow_amplitude: float, alpha: Optional[float] = None):
        super().__init__(message, overflow_amplitude=overflow_amplitude, alpha=alpha)
        self.overflow_amplitude = overflow_amplitude
        self.alpha = alpha


class TrainingDivergence(NumericalError):
    """Loss became NaN or infinite during optimisation."""


class CircuitError(QAttrError, ValueError):
    """Gate or circuit does not fit the register it is applied to."""


class EncodingError(QAttrError, ValueError):
    """Features cannot be encoded in the requested mode."""


class ModelError(QAttrError, ValueError):
    """Model definition or input does not match."""


class GradientError(QAttrError, ValueError):
    """Gradient request is not supported for this model or input."""

    exit_code = EXIT_CONFIG


class AttributionError(QAttrError, ValueError):
    """Attribution request is malformed."""


class DatasetError(QAttrError, ValueError):
    """Dataset request cannot be satisfied (unknown class, empty class, bad shape)."""


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and value != value:
        return None
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    return str(value)
