"""Surface point clouds, occupancy supervision and random shape generation."""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np

from ..const import (
    MAX_OCCUPIED_FRACTION,
    MIN_OCCUPIED_FRACTION,
    NEAR_SURFACE_SIGMAS,
    REGIME_NEAR_SURFACE,
    REGIME_UNIFORM,
    REGIMES,
    SHAPE_MARGIN,
    UNIT_CUBE_HALF,
)
from ..errors import ConfigError, DegenerateShapeError, ShapeMismatchError
from ..geometry.pointcloud_io import PointCloud
from ..rng import RngStream
from .shapes import Box, Part, Pose, SdfShape, Sphere, Torus

_LOGGER = logging.getLogger(__name__)

# Rounds of union rejection sampling before giving up on a shape.
_MAX_SURFACE_ROUNDS = 64
_MAX_SHAPE_ATTEMPTS = 200
_BALANCE_PROBES = 4096


@dataclass
class OccupancySampleSet:
    """Supervision points ``Q`` (``T x 3`` float32) with labels ``O`` (``T`` uint8)."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ShapeMismatchError(f"supervision points must be T x 3, got {self.points.shape}")
        if len(self.labels) != len(self.points):
            raise ShapeMismatchError(
                f"{len(self.points)} supervision points but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.points)

    @property
    def occupied_fraction(self) -> float:
        return float(self.labels.mean()) if len(self.labels) else 0.0


def sample_surface(
    shape: SdfShape, count: int, noise_sigma: float, stream: RngStream
) -> PointCloud:
    """Area-uniform surface samples of ``shape`` plus isotropic Gaussian noise.

    Union parts are sampled in proportion to their area; samples that fall
    strictly inside another part are rejected.

    Raises:
        DegenerateShapeError: if no surface is left to sample.
    """
    if count < 1:
        raise ShapeMismatchError(f"need at least one surface sample, got {count}")
    areas = np.array([part.area() for part in shape.parts])
    if not np.all(np.isfinite(areas)) or areas.sum() <= 0.0:
        raise DegenerateShapeError("shape has zero surface area")
    weights = np.cumsum(areas / areas.sum())

    accepted: list[np.ndarray] = []
    have = 0
    for _ in range(_MAX_SURFACE_ROUNDS):
        if have >= count:
            break
        batch = 2 * (count - have) + 16
        part_index = np.minimum(
            np.searchsorted(weights, stream.uniform(batch), side="right"), len(areas) - 1
        )
        for index, part in enumerate(shape.parts):
            n_part = int(np.count_nonzero(part_index == index))
            if n_part == 0:
                continue
            candidates = part.sample_surface(stream, n_part)
            others = [other for j, other in enumerate(shape.parts) if j != index]
            if others:
                other_sdf = np.min([other.sdf(candidates) for other in others], axis=0)
                candidates = candidates[other_sdf >= 0.0]
            accepted.append(candidates)
            have += len(candidates)
    if have < count:
        raise DegenerateShapeError(f"could only place {have} of {count} surface samples")

    points = np.concatenate(accepted)[:count]
    if noise_sigma > 0.0:
        points = points + stream.gaussian(3 * count, noise_sigma).reshape(count, 3)
    return PointCloud(points.astype(np.float32))


def sample_supervision(
    shape: SdfShape, count: int, regime: str, stream: RngStream
) -> OccupancySampleSet:
    """Occupancy-labelled query points in one of the two sampling regimes.

    ``near_surface`` displaces surface samples by Gaussian offsets, half with
    each sigma in ``NEAR_SURFACE_SIGMAS``; ``uniform`` draws i.i.d. points in
    the unit cube. Coordinates are rounded to float32 before labelling, so
    stored labels always agree with the stored points.
    """
    if count < 1:
        raise ShapeMismatchError(f"need at least one supervision sample, got {count}")
    if regime == REGIME_UNIFORM:
        points = stream.uniform(3 * count).reshape(count, 3) - UNIT_CUBE_HALF
    elif regime == REGIME_NEAR_SURFACE:
        surface = sample_surface(shape, count, 0.0, stream).points.astype(np.float64)
        sigmas = np.empty(count)
        half = count // 2
        sigmas[:half] = NEAR_SURFACE_SIGMAS[0]
        sigmas[half:] = NEAR_SURFACE_SIGMAS[1]
        offsets = stream.gaussian(3 * count).reshape(count, 3) * sigmas[:, None]
        points = surface + offsets
    else:
        raise ConfigError(f"unknown supervision regime {regime!r}; expected one of {REGIMES}")
    points = points.astype(np.float32)
    labels = (shape.sdf(points.astype(np.float64)) <= 0.0).astype(np.uint8)
    return OccupancySampleSet(points, labels)


# --- Random shapes ---------------------------------------------------------


def _random_primitive(stream: RngStream):
    u = stream.uniform(5)
    kind = int(u[0] * 3)
    if kind == 0:
        return Sphere(0.15 + 0.2 * u[1])
    if kind == 1:
        return Box(tuple(float(v) for v in 0.1 + 0.2 * u[1:4]))
    major = 0.18 + 0.12 * u[1]
    minor = 0.07 + 0.05 * u[2]
    return Torus(major, minor, axis=min(int(u[3] * 3), 2))


def random_shape(stream: RngStream) -> SdfShape:
    """Draw a union of one to three primitives that fits the unit cube.

    Shapes are redrawn until their occupied volume fraction lies between
    ``MIN_OCCUPIED_FRACTION`` and ``MAX_OCCUPIED_FRACTION``.

    Raises:
        DegenerateShapeError: if no acceptable shape is found.
    """
    limit = UNIT_CUBE_HALF - SHAPE_MARGIN
    for attempt in range(_MAX_SHAPE_ATTEMPTS):
        trial = stream.split(f"attempt-{attempt}")
        n_parts = 1 + min(int(trial.uniform(1)[0] * 3), 2)
        parts = []
        for _ in range(n_parts):
            primitive = _random_primitive(trial)
            half = primitive.half_extents()
            if np.any(half > limit):
                continue
            center = (2.0 * trial.uniform(3) - 1.0) * (limit - half)
            parts.append(Part(primitive, Pose(tuple(float(c) for c in center))))
        if not parts:
            continue
        shape = SdfShape(tuple(parts))
        probes = trial.uniform(3 * _BALANCE_PROBES).reshape(-1, 3) - UNIT_CUBE_HALF
        fraction = float(shape.occupancy(probes).mean())
        if MIN_OCCUPIED_FRACTION <= fraction <= MAX_OCCUPIED_FRACTION:
            return shape.validate()
        _LOGGER.debug("Rejected shape with occupied fraction %.3f", fraction)
    raise DegenerateShapeError(
        f"no shape with occupied fraction in [{MIN_OCCUPIED_FRACTION}, "
        f"{MAX_OCCUPIED_FRACTION}] after {_MAX_SHAPE_ATTEMPTS} attempts"
    )
