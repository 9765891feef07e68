"""Tests for checkpoint files and model persistence."""

from __future__ import annotations

import numpy as np
import pytest

from airnet.const import CHECKPOINT_MAGIC
from airnet.engine.checkpoint import decode_checkpoint, encode_checkpoint, read_checkpoint
from airnet.errors import DataFormatError
from airnet.model.network import AirNet, ModelConfig


def test_checkpoint_keeps_arrays_and_meta():
    """Arrays come back as float32 with their shapes; meta values come back as text."""
    arrays = [
        ("a.weight", np.arange(6, dtype=np.float32).reshape(2, 3)),
        ("a.scalar", np.float32(2.5)),
    ]
    checkpoint = decode_checkpoint(encode_checkpoint(arrays, {"seed": 7, "train.lr": 0.0005}))
    assert np.array_equal(checkpoint.arrays["a.weight"], arrays[0][1])
    assert checkpoint.arrays["a.scalar"].shape == ()
    assert checkpoint.meta == {"seed": "7", "train.lr": "0.0005"}


def test_checkpoint_header_is_text():
    """The manifest starts with the magic line and is readable UTF-8."""
    blob = encode_checkpoint([("w", np.zeros((2, 2), dtype=np.float32))], {"seed": 1})
    header = blob.split(b"\nend\n", 1)[0].decode("utf-8")
    assert header.splitlines() == [CHECKPOINT_MAGIC, "meta seed=1", "tensor w float32 2,2"]


def test_checkpoint_rejects_bad_magic():
    """Files without the magic line are not checkpoints."""
    with pytest.raises(DataFormatError):
        decode_checkpoint(b"SOMETHING ELSE\nend\n")


def test_checkpoint_rejects_truncated_payload():
    """A payload shorter than the manifest promises is an error."""
    blob = encode_checkpoint([("w", np.ones(4, dtype=np.float32))])
    with pytest.raises(DataFormatError):
        decode_checkpoint(blob[:-1])


def test_checkpoint_rejects_trailing_bytes():
    """Extra bytes after the last tensor are an error."""
    blob = encode_checkpoint([("w", np.ones(4, dtype=np.float32))])
    with pytest.raises(DataFormatError):
        decode_checkpoint(blob + b"\x00")


def test_checkpoint_rejects_whitespace_names():
    """Tensor names are single tokens."""
    with pytest.raises(DataFormatError):
        encode_checkpoint([("bad name", np.ones(1))])


def test_missing_checkpoint_file(tmp_path):
    """An unreadable path is a data error, not an OSError."""
    with pytest.raises(DataFormatError):
        read_checkpoint(tmp_path / "missing.ckpt")


def test_model_round_trip_is_bit_identical(tmp_path, tiny_config_factory, torus_points):
    """A float32 model reloaded from disk predicts exactly the same occupancies."""
    model = AirNet.create(tiny_config_factory("float32"), seed=4)
    path = tmp_path / "model.ckpt"
    model.save(path, {"seed": 4})
    loaded = AirNet.from_checkpoint(path)
    assert loaded.config == model.config
    queries = torus_points[:10] * 1.1
    expected = model.occupancy_function(torus_points)(queries)
    assert np.array_equal(loaded.occupancy_function(torus_points)(queries), expected)
    assert read_checkpoint(path).meta["seed"] == "4"


def test_model_config_mapping_round_trip(tiny_config):
    """The flat string mapping reproduces the config."""
    assert ModelConfig.from_mapping(tiny_config.to_mapping()) == tiny_config


def test_load_arrays_rejects_other_architecture(tiny_model, tiny_config_factory):
    """Names or shapes from a different architecture are refused."""
    other = AirNet.create(tiny_config_factory(feature_dim=16), seed=0)
    with pytest.raises(DataFormatError):
        tiny_model.load_arrays(other.snapshot())
