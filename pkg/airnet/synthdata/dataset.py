"""Reproducible synthetic datasets and their on-disk layout.

A dataset directory holds ``manifest.json`` plus one ``shape_XXXXX``
directory per shape with ``input.xyz`` (the input point cloud),
``supervision.bin`` (labelled query points) and ``shape.json`` (the analytic
shape parameters).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import json
import logging
from pathlib import Path
import struct
from typing import Any

import numpy as np

from ..const import (
    DATASET_MANIFEST,
    DEFAULT_INPUT_POINTS,
    DEFAULT_SUPERVISION_POINTS,
    INPUT_FILE,
    REGIME_NEAR_SURFACE,
    SHAPE_DIR_TEMPLATE,
    SHAPE_FILE,
    SUPERVISION_FILE,
)
from ..errors import DataFormatError
from ..geometry.pointcloud_io import PointCloud, read_point_cloud, write_point_cloud
from ..rng import RngStream
from .sampling import OccupancySampleSet, random_shape, sample_supervision, sample_surface
from .shapes import SdfShape

_LOGGER = logging.getLogger(__name__)

_COUNT = struct.Struct("<I")


@dataclass
class ShapeRecord:
    index: int
    shape: SdfShape
    cloud: PointCloud
    supervision: OccupancySampleSet

    @property
    def name(self) -> str:
        return SHAPE_DIR_TEMPLATE.format(index=self.index)


@dataclass
class Dataset:
    records: list[ShapeRecord]
    manifest: dict[str, Any]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, position: int) -> ShapeRecord:
        return self.records[position]


# --- Generation ------------------------------------------------------------


def make_record(
    index: int,
    seed: int,
    regime: str = REGIME_NEAR_SURFACE,
    noise_sigma: float = 0.0,
    n_points: int = DEFAULT_INPUT_POINTS,
    n_supervision: int = DEFAULT_SUPERVISION_POINTS,
) -> ShapeRecord:
    """Generate shape ``index`` from its own stream, independent of every other shape."""
    stream = RngStream(seed).split(f"shape-{index}")
    shape = random_shape(stream.split("shape"))
    cloud = sample_surface(shape, n_points, noise_sigma, stream.split("input"))
    supervision = sample_supervision(shape, n_supervision, regime, stream.split("supervision"))
    return ShapeRecord(index, shape, cloud, supervision)


def make_dataset(
    count: int,
    seed: int,
    regime: str = REGIME_NEAR_SURFACE,
    noise_sigma: float = 0.0,
    n_points: int = DEFAULT_INPUT_POINTS,
    n_supervision: int = DEFAULT_SUPERVISION_POINTS,
    workers: int = 1,
) -> Dataset:
    """Generate ``count`` shapes; the result depends only on the arguments, not on ``workers``."""
    manifest = {
        "count": count,
        "seed": seed,
        "regime": regime,
        "noise_sigma": noise_sigma,
        "points": n_points,
        "supervision_points": n_supervision,
        "shapes": [SHAPE_DIR_TEMPLATE.format(index=i) for i in range(count)],
    }

    def build(index: int) -> ShapeRecord:
        return make_record(index, seed, regime, noise_sigma, n_points, n_supervision)

    if workers <= 1 or count <= 1:
        records = [build(i) for i in range(count)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(build, range(count)))
    _LOGGER.info("Generated %d shapes (regime=%s, seed=%d)", count, regime, seed)
    return Dataset(records, manifest)


# --- Supervision codec -----------------------------------------------------


def encode_supervision(samples: OccupancySampleSet) -> bytes:
    points = np.ascontiguousarray(samples.points, dtype="<f4")
    labels = np.ascontiguousarray(samples.labels, dtype=np.uint8)
    return _COUNT.pack(len(samples)) + points.tobytes() + labels.tobytes()


def decode_supervision(blob: bytes, source: str = "<bytes>") -> OccupancySampleSet:
    if len(blob) < _COUNT.size:
        raise DataFormatError(f"{source}: truncated supervision header")
    (count,) = _COUNT.unpack_from(blob)
    expected = _COUNT.size + count * 13
    if len(blob) != expected:
        raise DataFormatError(f"{source}: expected {expected} bytes, got {len(blob)}")
    points = np.frombuffer(blob, dtype="<f4", count=3 * count, offset=_COUNT.size)
    labels = np.frombuffer(blob, dtype=np.uint8, offset=_COUNT.size + 12 * count)
    if np.any(labels > 1):
        raise DataFormatError(f"{source}: occupancy labels must be 0 or 1")
    return OccupancySampleSet(points.reshape(count, 3).astype(np.float32), labels.copy())


# --- Directories -----------------------------------------------------------


def _dump_json(data: dict[str, Any]) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_record(root: Path, record: ShapeRecord) -> Path:
    directory = root / record.name
    directory.mkdir(parents=True, exist_ok=True)
    write_point_cloud(directory / INPUT_FILE, record.cloud)
    (directory / SUPERVISION_FILE).write_bytes(encode_supervision(record.supervision))
    (directory / SHAPE_FILE).write_text(_dump_json(record.shape.to_dict()), encoding="utf-8")
    return directory


def write_dataset(root: Path | str, dataset: Dataset) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for record in dataset.records:
        write_record(root, record)
    (root / DATASET_MANIFEST).write_text(_dump_json(dataset.manifest), encoding="utf-8")
    _LOGGER.info("Wrote dataset of %d shapes to %s", len(dataset), root)
    return root


def read_manifest(root: Path | str) -> dict[str, Any]:
    path = Path(root) / DATASET_MANIFEST
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise DataFormatError(f"cannot read dataset manifest {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise DataFormatError(f"{path}: invalid JSON: {err}") from err
    if not isinstance(manifest, dict) or not isinstance(manifest.get("shapes"), list):
        raise DataFormatError(f"{path}: manifest has no shape list")
    return manifest


def read_record(directory: Path, index: int) -> ShapeRecord:
    try:
        shape_data = json.loads((directory / SHAPE_FILE).read_text(encoding="utf-8"))
        blob = (directory / SUPERVISION_FILE).read_bytes()
    except OSError as err:
        raise DataFormatError(f"cannot read shape directory {directory}: {err}") from err
    except json.JSONDecodeError as err:
        raise DataFormatError(f"{directory / SHAPE_FILE}: invalid JSON: {err}") from err
    return ShapeRecord(
        index,
        SdfShape.from_dict(shape_data),
        read_point_cloud(directory / INPUT_FILE),
        decode_supervision(blob, str(directory / SUPERVISION_FILE)),
    )


def read_dataset(root: Path | str) -> Dataset:
    """Load a dataset written by :func:`write_dataset`.

    Raises:
        DataFormatError: if the manifest or any shape directory is missing or malformed.
    """
    root = Path(root)
    manifest = read_manifest(root)
    records = []
    for position, name in enumerate(manifest["shapes"]):
        index = int(str(name).rsplit("_", 1)[-1]) if "_" in str(name) else position
        records.append(read_record(root / str(name), index))
    _LOGGER.debug("Read %d shapes from %s", len(records), root)
    return Dataset(records, manifest)
