"""Synthetic shapes with analytic occupancy."""

from .dataset import Dataset, ShapeRecord, make_dataset, read_dataset, write_dataset
from .sampling import OccupancySampleSet, random_shape, sample_supervision, sample_surface
from .shapes import SdfShape, box, sphere, torus, union

__all__ = [
    "Dataset",
    "OccupancySampleSet",
    "SdfShape",
    "ShapeRecord",
    "box",
    "make_dataset",
    "random_shape",
    "read_dataset",
    "sample_supervision",
    "sample_surface",
    "sphere",
    "torus",
    "union",
    "write_dataset",
]
