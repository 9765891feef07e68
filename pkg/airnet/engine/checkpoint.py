"""Checkpoint files: a UTF-8 manifest followed by little-endian f32 payloads.

Layout::

    AIRNET-CHECKPOINT 1
    meta seed=7
    meta encoder.feature_dim=256
    tensor encoder.initial.vsa.delta.layers.0.weight float32 3,256
    ...
    end
    <raw float32 data, one block per tensor record, in manifest order>

Scalars use ``-`` as their shape.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np

from ..const import CHECKPOINT_MAGIC
from ..errors import DataFormatError

_LOGGER = logging.getLogger(__name__)

_PAYLOAD_DTYPE = np.dtype("<f4")
_END = "end"


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)


def _format_shape(shape: tuple[int, ...]) -> str:
    return ",".join(str(extent) for extent in shape) if shape else "-"


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "-":
        return ()
    try:
        return tuple(int(extent) for extent in text.split(","))
    except ValueError as err:
        raise DataFormatError(f"bad tensor shape {text!r} in checkpoint") from err


def encode_checkpoint(
    arrays: Sequence[tuple[str, np.ndarray]], meta: Mapping[str, object] | None = None
) -> bytes:
    lines = [CHECKPOINT_MAGIC]
    for key, value in (meta or {}).items():
        text = str(value)
        if "\n" in text or "=" in key:
            raise DataFormatError(f"checkpoint meta entry {key!r} is not a single line")
        lines.append(f"meta {key}={text}")
    payload = []
    for name, array in arrays:
        if any(ch.isspace() for ch in name):
            raise DataFormatError(f"tensor name {name!r} contains whitespace")
        array = np.asarray(array)
        lines.append(f"tensor {name} float32 {_format_shape(array.shape)}")
        payload.append(np.ascontiguousarray(array, dtype=_PAYLOAD_DTYPE).tobytes())
    lines.append(_END)
    header = ("\n".join(lines) + "\n").encode("utf-8")
    return header + b"".join(payload)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    """Parse checkpoint bytes.

    Raises:
        DataFormatError: on a bad magic line, malformed record or short payload.
    """
    checkpoint = Checkpoint()
    records: list[tuple[str, tuple[int, ...]]] = []
    offset = 0
    first = True
    while True:
        newline = blob.find(b"\n", offset)
        if newline < 0:
            raise DataFormatError("checkpoint manifest is not terminated by 'end'")
        line = blob[offset:newline].decode("utf-8", errors="replace")
        offset = newline + 1
        if first:
            if line != CHECKPOINT_MAGIC:
                raise DataFormatError(f"not an airnet checkpoint (header {line[:40]!r})")
            first = False
            continue
        if line == _END:
            break
        kind, _, rest = line.partition(" ")
        if kind == "meta":
            key, sep, value = rest.partition("=")
            if not sep:
                raise DataFormatError(f"bad meta record {line!r}")
            checkpoint.meta[key] = value
        elif kind == "tensor":
            parts = rest.split(" ")
            if len(parts) != 3 or parts[1] != "float32":
                raise DataFormatError(f"bad tensor record {line!r}")
            records.append((parts[0], _parse_shape(parts[2])))
        else:
            raise DataFormatError(f"unknown checkpoint record {line!r}")

    for name, shape in records:
        count = int(np.prod(shape)) if shape else 1
        size = count * _PAYLOAD_DTYPE.itemsize
        if offset + size > len(blob):
            raise DataFormatError(f"checkpoint payload truncated at tensor {name}")
        data = np.frombuffer(blob, dtype=_PAYLOAD_DTYPE, count=count, offset=offset)
        checkpoint.arrays[name] = data.astype(np.float32).reshape(shape)
        offset += size
    if offset != len(blob):
        raise DataFormatError(f"{len(blob) - offset} trailing bytes after checkpoint payload")
    return checkpoint


def write_checkpoint(
    path: Path | str,
    arrays: Sequence[tuple[str, np.ndarray]],
    meta: Mapping[str, object] | None = None,
) -> None:
    path = Path(path)
    path.write_bytes(encode_checkpoint(arrays, meta))
    _LOGGER.debug("Wrote checkpoint %s (%d tensors)", path, len(arrays))


def read_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as err:
        raise DataFormatError(f"cannot read checkpoint {path}: {err}") from err
    return decode_checkpoint(blob)
