"""Point cloud to mesh: encode once, refine the occupancy grid, march it."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
import logging
from typing import Any

import numpy as np

from ..const import (
    BBOX_INFLATE,
    DEFAULT_OCCUPANCY_THRESHOLD,
    DEFAULT_RES0,
    DEFAULT_UPSAMPLING_STEPS,
    GRID_PADDING,
    MIN_RES0,
    UNIT_CUBE_HALF,
)
from ..errors import ConfigError
from ..geometry.pointcloud_io import PointCloud
from .marching_cubes import marching_cubes
from .mesh import TriangleMesh
from .mise import OccupancyFunction, mise

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractionConfig:
    res0: int = DEFAULT_RES0
    upsampling_steps: int = DEFAULT_UPSAMPLING_STEPS
    threshold: float = DEFAULT_OCCUPANCY_THRESHOLD
    padding: float = GRID_PADDING
    inflate: float = BBOX_INFLATE

    def __post_init__(self) -> None:
        if self.res0 < MIN_RES0:
            raise ConfigError(f"extract.res0 must be >= {MIN_RES0}, got {self.res0}")
        if self.upsampling_steps < 0:
            raise ConfigError(f"extract.upsampling_steps must be >= 0, got {self.upsampling_steps}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"extract.threshold must lie in (0, 1), got {self.threshold}")

    @classmethod
    def from_section(cls, section: Mapping[str, Any]) -> ExtractionConfig:
        return cls(
            res0=int(section.get("res0", DEFAULT_RES0)),
            upsampling_steps=int(section.get("upsampling_steps", DEFAULT_UPSAMPLING_STEPS)),
            threshold=float(section.get("threshold", DEFAULT_OCCUPANCY_THRESHOLD)),
        )

    @property
    def final_resolution(self) -> int:
        return self.res0 * 2**self.upsampling_steps

    @property
    def domain(self) -> float:
        """Half side of the padded unit cube every grid is clamped to."""
        return UNIT_CUBE_HALF + self.padding


def grid_bounds(points: np.ndarray, config: ExtractionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned box of ``points`` grown by ``inflate``, clamped to the padded unit cube."""
    points = np.asarray(points, dtype=np.float64)
    low = np.maximum(points.min(axis=0) - config.inflate, -config.domain)
    high = np.minimum(points.max(axis=0) + config.inflate, config.domain)
    return low, high


def extract(
    occupancy: OccupancyFunction,
    low,
    high,
    config: ExtractionConfig,
) -> TriangleMesh:
    grid = mise(
        occupancy,
        low,
        high,
        res0=config.res0,
        upsampling_steps=config.upsampling_steps,
        threshold=config.threshold,
    )
    return marching_cubes(grid)


def reconstruct(
    model,
    cloud: PointCloud | np.ndarray,
    config: ExtractionConfig | None = None,
    workers: int = 1,
) -> TriangleMesh:
    """Reconstruct the surface a trained ``model`` sees in ``cloud``."""
    config = config or ExtractionConfig()
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    low, high = grid_bounds(points, config)
    mesh = extract(model.occupancy_function(points, workers), low, high, config)
    _LOGGER.debug(
        "Reconstructed %d points into %d vertices / %d faces", len(points), len(mesh.vertices), len(mesh.faces)
    )
    return mesh


def reconstruct_shape(shape, config: ExtractionConfig | None = None) -> TriangleMesh:
    """Ground-truth mesh of an analytic shape, from its exact occupancy on the padded unit cube."""
    config = config or ExtractionConfig()
    corner = np.full(3, config.domain)
    return extract(shape.occupancy, -corner, corner, config)
