"""Attentive implicit surface reconstruction from sparse point clouds."""

from .const import VERSION
from .errors import (
    AirNetError,
    ConfigError,
    DataFormatError,
    DegenerateShapeError,
    NumericError,
    ShapeMismatchError,
)
from .model.network import AirNet, ModelConfig
from .rng import RngStream

__version__ = VERSION

__all__ = [
    "AirNet",
    "AirNetError",
    "ConfigError",
    "DataFormatError",
    "DegenerateShapeError",
    "ModelConfig",
    "NumericError",
    "RngStream",
    "ShapeMismatchError",
    "__version__",
]
