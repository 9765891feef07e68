"""Occupancy grids to triangle meshes."""

from .marching_cubes import marching_cubes, marching_cubes_array
from .mesh import TriangleMesh, read_obj, write_obj
from .mise import OccupancyGrid, dense_grid, mise
from .reconstruct import ExtractionConfig, reconstruct, reconstruct_shape

__all__ = [
    "ExtractionConfig",
    "OccupancyGrid",
    "TriangleMesh",
    "dense_grid",
    "marching_cubes",
    "marching_cubes_array",
    "mise",
    "read_obj",
    "reconstruct",
    "reconstruct_shape",
    "write_obj",
]
