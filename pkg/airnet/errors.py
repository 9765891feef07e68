"""Exception hierarchy for the airnet package."""

from __future__ import annotations


class AirNetError(Exception):
    """Base exception for airnet errors."""


class ShapeMismatchError(AirNetError, ValueError):
    """Exception for incompatible tensor extents, widths or index ranges."""


class NumericError(AirNetError, ArithmeticError):
    """Exception for NaN/Inf values and failed gradient checks."""


class ConfigError(AirNetError, ValueError):
    """Exception for invalid configuration or command-line values."""


class DataFormatError(AirNetError, ValueError):
    """Exception for malformed point-cloud, supervision, mesh or checkpoint files."""


class DegenerateShapeError(AirNetError, ValueError):
    """Exception for shapes that cannot be sampled or do not fit the unit cube."""
