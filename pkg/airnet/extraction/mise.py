"""Multiresolution isosurface extraction over an occupancy function.

The lattice is evaluated densely at the initial resolution. Each upsampling
step doubles the resolution. Cells that straddle the threshold, plus their
26 neighbors, are refined by evaluating their new vertices; everything else
takes trilinear values from the coarser level. A refined vertex whose sign
disagrees with the interpolated guess activates the coarse cells around it.
At the new level the surface is then followed cell by cell until every
straddling cell and its neighbors are fully evaluated.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass
import itertools
import logging

import numpy as np
from scipy import ndimage

from ..const import DEFAULT_OCCUPANCY_THRESHOLD, DEFAULT_RES0, DEFAULT_UPSAMPLING_STEPS, MIN_RES0
from ..errors import ConfigError, NumericError, ShapeMismatchError

_LOGGER = logging.getLogger(__name__)

OccupancyFunction = Callable[[np.ndarray], np.ndarray]

_CELL_VERTEX_OFFSETS = np.array(list(itertools.product(range(3), repeat=3)))
_CELL_CORNERS = np.array(list(itertools.product(range(2), repeat=3)))
_NEIGHBORS = np.ones((3, 3, 3), dtype=bool)


@dataclass
class OccupancyGrid:
    """Occupancy values on the ``(R + 1)^3`` vertices of a box split into ``R^3`` cells."""

    values: np.ndarray
    evaluated: np.ndarray
    low: np.ndarray
    high: np.ndarray
    resolution: int
    threshold: float
    n_evaluations: int

    @property
    def spacing(self) -> np.ndarray:
        return (self.high - self.low) / self.resolution

    @property
    def dense_evaluations(self) -> int:
        return (self.resolution + 1) ** 3

    def occupied(self) -> np.ndarray:
        return self.values >= self.threshold

    def vertex_positions(self, index: np.ndarray) -> np.ndarray:
        return self.low + np.asarray(index) * self.spacing


def _check_threshold(threshold: float) -> None:
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"occupancy threshold must lie in (0, 1), got {threshold}")


def _evaluate(
    occupancy: OccupancyFunction, low: np.ndarray, spacing: np.ndarray, index: np.ndarray
) -> np.ndarray:
    if len(index) == 0:
        return np.empty(0)
    values = np.asarray(occupancy(low + index * spacing), dtype=np.float64).reshape(-1)
    if len(values) != len(index):
        raise ShapeMismatchError(f"occupancy returned {len(values)} values for {len(index)} points")
    if not np.all(np.isfinite(values)):
        raise NumericError("occupancy function returned non-finite values")
    return values


def _lattice(resolution: int) -> np.ndarray:
    axis = np.arange(resolution + 1)
    return np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)


def _upsample(values: np.ndarray) -> np.ndarray:
    """Separable linear upsampling from ``n`` to ``2n - 1`` vertices per axis."""
    for axis in range(3):
        coarse = np.moveaxis(values, axis, 0)
        fine = np.empty((2 * len(coarse) - 1, *coarse.shape[1:]))
        fine[0::2] = coarse
        fine[1::2] = 0.5 * (coarse[:-1] + coarse[1:])
        values = np.moveaxis(fine, 0, axis)
    return values


def straddling_cells(values: np.ndarray, threshold: float) -> np.ndarray:
    """Cells whose eight corners are neither all inside nor all outside."""
    occupied = values >= threshold
    nx, ny, nz = (size - 1 for size in values.shape)
    any_inside = np.zeros((nx, ny, nz), dtype=bool)
    all_inside = np.ones((nx, ny, nz), dtype=bool)
    for ox, oy, oz in _CELL_CORNERS:
        corner = occupied[ox : ox + nx, oy : oy + ny, oz : oz + nz]
        any_inside |= corner
        all_inside &= corner
    return any_inside & ~all_inside


def _cells_around(fine_index: np.ndarray, n_cells: int) -> np.ndarray:
    """Coarse cells whose closure contains each fine vertex (up to 8 per vertex)."""
    if len(fine_index) == 0:
        return np.empty((0, 3), dtype=np.int64)
    choices = np.stack([(fine_index - 1) // 2, fine_index // 2])
    cells = np.concatenate(
        [np.stack([choices[bx, :, 0], choices[by, :, 1], choices[bz, :, 2]], axis=1) for bx, by, bz in _CELL_CORNERS]
    )
    valid = np.all((cells >= 0) & (cells < n_cells), axis=1)
    return cells[valid]


def _vertices_of(cells: np.ndarray) -> np.ndarray:
    """Vertex mask of the ``(n + 1)^3`` lattice touched by a ``n^3`` cell mask."""
    n = cells.shape[0]
    touched = np.zeros((n + 1,) * 3, dtype=bool)
    for ox, oy, oz in _CELL_CORNERS:
        touched[ox : ox + n, oy : oy + n, oz : oz + n] |= cells
    return touched


def _follow_surface(
    occupancy: OccupancyFunction,
    values: np.ndarray,
    evaluated: np.ndarray,
    low: np.ndarray,
    spacing: np.ndarray,
    threshold: float,
) -> int:
    """Evaluate straddling cells and their 26 neighbors until the surface closes.

    Every cell that straddles ``threshold`` under the current values ends up
    with all of its own and its neighbors' corners evaluated, so every surface
    component touched by an evaluated vertex is traced in full.

    Returns:
        The number of new evaluations.
    """
    count = 0
    while True:
        band = ndimage.binary_dilation(straddling_cells(values, threshold), structure=_NEIGHBORS)
        index = np.argwhere(_vertices_of(band) & ~evaluated)
        if len(index) == 0:
            return count
        values[tuple(index.T)] = _evaluate(occupancy, low, spacing, index)
        evaluated[tuple(index.T)] = True
        count += len(index)


def _refine(occupancy: OccupancyFunction, grid: OccupancyGrid) -> OccupancyGrid:
    tau = grid.threshold
    n_cells = grid.resolution
    active = ndimage.binary_dilation(straddling_cells(grid.values, tau), structure=_NEIGHBORS)

    resolution = 2 * n_cells
    spacing = (grid.high - grid.low) / resolution
    values = _upsample(grid.values)
    guessed_inside = values >= tau
    evaluated = np.zeros(values.shape, dtype=bool)
    evaluated[::2, ::2, ::2] = grid.evaluated
    n_evaluations = grid.n_evaluations

    # Coarse cells first: a vertex whose sign disagrees with its interpolated
    # guess activates every coarse cell around it.
    pending = active.copy()
    while pending.any():
        cells = np.argwhere(pending)
        touched = np.zeros(values.shape, dtype=bool)
        corners = (2 * cells[:, None, :] + _CELL_VERTEX_OFFSETS[None]).reshape(-1, 3)
        touched[tuple(corners.T)] = True
        index = np.argwhere(touched & ~evaluated)
        fresh = _evaluate(occupancy, grid.low, spacing, index)
        values[tuple(index.T)] = fresh
        evaluated[tuple(index.T)] = True
        n_evaluations += len(index)

        flipped = index[(fresh >= tau) != guessed_inside[tuple(index.T)]]
        grow = np.zeros_like(active)
        around = _cells_around(flipped, n_cells)
        grow[tuple(around.T)] = True
        pending = grow & ~active
        active |= pending

    n_evaluations += _follow_surface(occupancy, values, evaluated, grid.low, spacing, tau)
    _LOGGER.debug(
        "Refined to resolution %d: %d active coarse cells, %d evaluations so far",
        resolution,
        int(active.sum()),
        n_evaluations,
    )
    return OccupancyGrid(values, evaluated, grid.low, grid.high, resolution, tau, n_evaluations)


def mise(
    occupancy: OccupancyFunction,
    low=(-0.55, -0.55, -0.55),
    high=(0.55, 0.55, 0.55),
    res0: int = DEFAULT_RES0,
    upsampling_steps: int = DEFAULT_UPSAMPLING_STEPS,
    threshold: float = DEFAULT_OCCUPANCY_THRESHOLD,
) -> OccupancyGrid:
    """Evaluate ``occupancy`` on a ``res0 * 2**upsampling_steps`` grid, refining only near the surface.

    Args:
        occupancy: maps ``K x 3`` points to ``K`` occupancy probabilities.
        low: lower corner of the grid box.
        high: upper corner of the grid box.
        res0: cells per axis at the initial level.
        upsampling_steps: number of resolution doublings.
        threshold: isolevel in (0, 1).

    Raises:
        ConfigError: for ``res0 < 8``, negative steps or a threshold outside (0, 1).
        NumericError: if ``occupancy`` returns non-finite values.
    """
    if res0 < MIN_RES0:
        raise ConfigError(f"initial resolution must be >= {MIN_RES0}, got {res0}")
    if upsampling_steps < 0:
        raise ConfigError(f"upsampling steps must be >= 0, got {upsampling_steps}")
    _check_threshold(threshold)
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if np.any(high <= low):
        raise ConfigError(f"grid box is empty: low={low.tolist()} high={high.tolist()}")

    index = _lattice(res0)
    values = _evaluate(occupancy, low, (high - low) / res0, index).reshape((res0 + 1,) * 3)
    grid = OccupancyGrid(
        values, np.ones(values.shape, dtype=bool), low, high, res0, threshold, len(index)
    )
    for _ in range(upsampling_steps):
        grid = _refine(occupancy, grid)
    _LOGGER.debug(
        "MISE evaluated %d of %d vertices (%.1f%%)",
        grid.n_evaluations,
        grid.dense_evaluations,
        100.0 * grid.n_evaluations / grid.dense_evaluations,
    )
    return grid


def dense_grid(
    occupancy: OccupancyFunction,
    low=(-0.55, -0.55, -0.55),
    high=(0.55, 0.55, 0.55),
    resolution: int = DEFAULT_RES0,
    threshold: float = DEFAULT_OCCUPANCY_THRESHOLD,
) -> OccupancyGrid:
    """Evaluate every vertex of the grid; the reference :func:`mise` is checked against."""
    _check_threshold(threshold)
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    index = _lattice(resolution)
    values = _evaluate(occupancy, low, (high - low) / resolution, index)
    values = values.reshape((resolution + 1,) * 3)
    return OccupancyGrid(
        values, np.ones(values.shape, dtype=bool), low, high, resolution, threshold, len(index)
    )
