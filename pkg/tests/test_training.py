"""Tests for the BCE objective, the LR schedule and the training loop."""

from __future__ import annotations

import math

import numpy as np
import pytest

from airnet.const import BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_LOG
from airnet.engine.adam import AdamState
from airnet.engine.checkpoint import read_checkpoint
from airnet.errors import ConfigError, DataFormatError, ShapeMismatchError
from airnet.model.network import AirNet
from airnet.rng import RngStream
from airnet.synthdata.dataset import make_record
from airnet.training import (
    PROB_CLAMP,
    EpochRecord,
    TrainConfig,
    bce_loss,
    fit,
    lr_at_epoch,
    split_dataset,
    train_step,
    validation_loss,
)


def _train_config(**overrides) -> TrainConfig:
    values = {"batch_size": 2, "points_per_shape": 16, "epochs": 2, "lr": 1e-3, "seed": 4}
    values.update(overrides)
    return TrainConfig(**values)


# --- Objective and schedule ------------------------------------------------


def test_bce_of_half_probability():
    """p = 0.5 costs ln 2 whatever the label."""
    assert bce_loss(np.full(4, 0.5), np.array([0, 1, 1, 0])) == pytest.approx(math.log(2.0))


def test_bce_clamps_certain_mistakes():
    """Confidently wrong predictions cost -ln(1e-7), not infinity."""
    loss = bce_loss(np.array([0.0, 1.0]), np.array([1, 0]))
    assert loss == pytest.approx(-math.log(PROB_CLAMP), rel=1e-6)


def test_bce_input_checks():
    """Labels must be binary and match the probabilities."""
    with pytest.raises(DataFormatError):
        bce_loss(np.full(2, 0.5), np.array([0, 2]))
    with pytest.raises(ShapeMismatchError):
        bce_loss(np.full(3, 0.5), np.array([0, 1]))


def test_step_decay_schedule():
    """The rate drops by 0.2 every 200 epochs."""
    config = TrainConfig()
    assert lr_at_epoch(config, 0) == pytest.approx(5e-4)
    assert lr_at_epoch(config, 199) == pytest.approx(5e-4)
    assert lr_at_epoch(config, 200) == pytest.approx(1e-4)
    assert lr_at_epoch(config, 450) == pytest.approx(2e-5)


@pytest.mark.parametrize(
    "kwargs", [{"batch_size": 0}, {"epochs": -1}, {"lr": -1.0}, {"points_per_shape": 0}]
)
def test_invalid_train_config(kwargs):
    """Out-of-range hyper-parameters are rejected."""
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_train_config_from_section_ignores_unknown_keys():
    """Only train fields are taken from a config section."""
    config = TrainConfig.from_section({"epochs": 3, "other": 1}, seed=9)
    assert config.epochs == 3
    assert config.seed == 9
    assert config.to_mapping()["train.epochs"] == "3"


def test_epoch_record_format():
    """Log lines are key=value pairs with '-' for a skipped validation."""
    line = EpochRecord(3, 0.5, None, 5e-4).format()
    assert line == "epoch=3 train_loss=0.5 val_loss=- lr=0.0005"


# --- Splits ----------------------------------------------------------------


def test_split_is_a_partition():
    """Every shape is in exactly one split and both splits are non-empty."""
    records = [make_record(i, seed=2, n_points=8, n_supervision=8) for i in range(25)]
    train, val = split_dataset(records)
    assert sorted(train + val) == list(range(25))
    assert train and val
    assert split_dataset(records) == (train, val)


def test_single_shape_validates_on_itself(tiny_records):
    """With one shape it serves as both splits."""
    assert split_dataset(tiny_records[:1]) == ([0], [0])


def test_empty_dataset_cannot_be_split():
    """Training needs at least one shape."""
    with pytest.raises(DataFormatError):
        split_dataset([])


# --- Steps -----------------------------------------------------------------


def test_zero_learning_rate_keeps_parameters(tiny_model, tiny_records):
    """A step with lr = 0 changes no parameter."""
    before = {name: tensor.data.copy() for name, tensor in tiny_model.named_parameters()}
    state = AdamState.for_parameters(tiny_model.named_parameters())
    loss = train_step(tiny_model, tiny_records[:2], state, _train_config(), RngStream(0), lr=0.0)
    assert math.isfinite(loss)
    for name, tensor in tiny_model.named_parameters():
        assert np.array_equal(tensor.data, before[name])


def test_step_updates_parameters(tiny_model, tiny_records):
    """A regular step moves the weights."""
    before = tiny_model.snapshot()
    state = AdamState.for_parameters(tiny_model.named_parameters())
    train_step(tiny_model, tiny_records[:2], state, _train_config(), RngStream(0))
    changed = [
        name for name, tensor in tiny_model.named_parameters()
        if not np.array_equal(tensor.data, before[name])
    ]
    assert changed


def test_more_queries_than_supervision(tiny_model, tiny_records):
    """points_per_shape cannot exceed the stored supervision."""
    state = AdamState.for_parameters(tiny_model.named_parameters())
    with pytest.raises(ConfigError):
        train_step(
            tiny_model, tiny_records[:1], state, _train_config(points_per_shape=65), RngStream(0)
        )


def test_validation_loss_is_deterministic(tiny_model, tiny_records):
    """Validation uses a fixed subset and eval-mode statistics."""
    config = _train_config()
    first = validation_loss(tiny_model, tiny_records, config)
    assert validation_loss(tiny_model, tiny_records, config) == first
    assert first > 0.0


# --- Fit -------------------------------------------------------------------


def test_zero_epochs_writes_an_empty_log(tmp_path, tiny_model, tiny_records):
    """No epochs: empty metrics log, a last checkpoint and no best epoch."""
    result = fit(tiny_records, tiny_model, _train_config(epochs=0), tmp_path)
    assert result.log == []
    assert result.best_epoch is None
    assert (tmp_path / METRICS_LOG).read_text() == ""
    assert (tmp_path / LAST_CHECKPOINT).is_file()
    assert not (tmp_path / BEST_CHECKPOINT).exists()


def test_short_fit_writes_log_and_checkpoints(tmp_path, tiny_model, tiny_records):
    """Every epoch is logged and the restored model is the best checkpoint."""
    result = fit(tiny_records, tiny_model, _train_config(epochs=3), tmp_path)
    lines = (tmp_path / METRICS_LOG).read_text().splitlines()
    assert len(lines) == 3
    assert all(line.startswith(f"epoch={i} train_loss=") for i, line in enumerate(lines))
    assert result.best_epoch is not None
    best = read_checkpoint(tmp_path / BEST_CHECKPOINT)
    assert best.meta["epoch"] == str(result.best_epoch)
    for name, array in tiny_model.state_arrays():
        assert np.array_equal(best.arrays[name], array.astype(np.float32))


def test_fit_is_deterministic(tmp_path, tiny_config, tiny_records):
    """Same seed, same data: byte-identical logs and checkpoints."""
    outputs = []
    for run in range(2):
        out = tmp_path / f"run{run}"
        fit(tiny_records, AirNet.create(tiny_config, seed=1), _train_config(epochs=2), out)
        outputs.append(out)
    for name in (METRICS_LOG, LAST_CHECKPOINT, BEST_CHECKPOINT):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()


def test_validation_every_other_epoch(tiny_model, tiny_records):
    """Skipped validations are logged as None; the final epoch is always validated."""
    result = fit(tiny_records, tiny_model, _train_config(epochs=3, eval_every=2))
    assert [record.val_loss is None for record in result.log] == [True, False, False]
    assert not result.stopped_early


@pytest.mark.slow
def test_overfits_a_single_shape(tiny_config):
    """Repeated steps on one shape drive its training loss down.

    This is a trend check on the tiny model only. The full overfitting bar
    (BCE below 0.05 and IoU of at least 0.95 after 2000 steps) is checked by
    `scripts/verify-desk-scale.py overfit`.
    """
    record = make_record(0, seed=6, n_points=24, n_supervision=256)
    model = AirNet.create(tiny_config, seed=2)
    config = _train_config(epochs=60, batch_size=1, points_per_shape=128, lr=5e-3)
    losses = [entry.train_loss for entry in fit([record], model, config).log]
    assert np.mean(losses[-5:]) < 0.8 * np.mean(losses[:5])
