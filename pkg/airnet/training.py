"""Mini-batch BCE training with Adam, step LR decay and best-val selection."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
import hashlib
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np

from .const import (
    BEST_CHECKPOINT,
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    DEFAULT_POINTS_PER_SHAPE,
    EARLY_STOP_PATIENCE,
    LAST_CHECKPOINT,
    LR_DECAY_EVERY,
    LR_DECAY_FACTOR,
    METRICS_LOG,
    VAL_BUCKETS,
)
from .engine.adam import AdamState, adam_step
from .engine.tensor import GradientTape
from .errors import ConfigError, DataFormatError, NumericError, ShapeMismatchError
from .model.network import AirNet
from .rng import RngStream
from .synthdata.dataset import ShapeRecord

_LOGGER = logging.getLogger(__name__)

# Probabilities are clamped into [PROB_CLAMP, 1 - PROB_CLAMP] by bce_loss.
PROB_CLAMP = 1e-7


@dataclass
class TrainConfig:
    batch_size: int = DEFAULT_BATCH_SIZE
    points_per_shape: int = DEFAULT_POINTS_PER_SHAPE
    lr: float = DEFAULT_LR
    lr_decay: float = LR_DECAY_FACTOR
    lr_decay_every: int = LR_DECAY_EVERY
    epochs: int = DEFAULT_EPOCHS
    eval_every: int = 1
    patience: int = EARLY_STOP_PATIENCE
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("batch_size", "points_per_shape", "lr_decay_every", "eval_every", "patience"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"train.epochs must be >= 0, got {self.epochs}")
        if self.lr < 0.0 or self.lr_decay < 0.0:
            raise ConfigError("train.lr and train.lr_decay must be non-negative")

    @classmethod
    def from_section(cls, section: Mapping[str, Any], seed: int = 0) -> TrainConfig:
        known = {name for name in cls.__dataclass_fields__ if name != "seed"}
        return cls(**{k: v for k, v in section.items() if k in known}, seed=seed)

    def to_mapping(self) -> dict[str, str]:
        return {f"train.{key}": str(value) for key, value in asdict(self).items()}


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float | None
    lr: float

    def format(self) -> str:
        val = "-" if self.val_loss is None else f"{self.val_loss:.9g}"
        return f"epoch={self.epoch} train_loss={self.train_loss:.9g} val_loss={val} lr={self.lr:.9g}"


@dataclass
class FitResult:
    model: AirNet
    log: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float | None = None
    stopped_early: bool = False


def bce_loss(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy of probabilities against 0/1 labels.

    Raises:
        DataFormatError: if a label is not 0 or 1.
        ShapeMismatchError: if the shapes differ.
    """
    p = np.asarray(probabilities, dtype=np.float64)
    o = np.asarray(labels)
    if p.shape != o.shape:
        raise ShapeMismatchError(f"probabilities {p.shape} do not match labels {o.shape}")
    if not np.all((o == 0) | (o == 1)):
        raise DataFormatError("binary cross-entropy labels must be 0 or 1")
    p = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    o = o.astype(np.float64)
    return float(np.mean(-(o * np.log(p) + (1.0 - o) * np.log1p(-p))))


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Step schedule: ``lr * lr_decay ** (epoch // lr_decay_every)``, epochs counted from 0."""
    return config.lr * config.lr_decay ** (epoch // config.lr_decay_every)


def _is_validation(index: int) -> bool:
    digest = hashlib.blake2b(str(index).encode("ascii"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % VAL_BUCKETS == 0


def split_dataset(records: Sequence[ShapeRecord]) -> tuple[list[int], list[int]]:
    """Positions of the train and validation shapes, split by a hash of the shape index.

    Raises:
        DataFormatError: if there are no shapes.
    """
    if not records:
        raise DataFormatError("cannot train on an empty dataset")
    train, val = [], []
    for position, record in enumerate(records):
        (val if _is_validation(record.index) else train).append(position)
    if len(records) == 1:
        _LOGGER.warning("Single-shape dataset: validating on the training shape")
        return [0], [0]
    if not val:
        _LOGGER.warning("No shape hashed into the validation split; holding out the last one")
        val.append(train.pop())
    elif not train:
        train.append(val.pop())
    return train, val


def _stack_batch(
    batch: Sequence[ShapeRecord], count: int, stream: RngStream
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    points = np.stack([record.cloud.points for record in batch])
    queries, labels = [], []
    for position, record in enumerate(batch):
        available = len(record.supervision)
        if count > available:
            raise ConfigError(
                f"train.points_per_shape={count} exceeds the {available} supervision "
                f"points of shape {record.index}"
            )
        chosen = stream.split(position).choice(available, count)
        queries.append(record.supervision.points[chosen])
        labels.append(record.supervision.labels[chosen])
    return points, np.stack(queries), np.stack(labels)


def train_step(
    model: AirNet,
    batch: Sequence[ShapeRecord],
    state: AdamState,
    config: TrainConfig,
    stream: RngStream,
    lr: float | None = None,
) -> float:
    """One Adam step on the mean BCE of a mini-batch.

    Each shape contributes ``points_per_shape`` supervision points drawn
    without replacement from ``stream``.

    Returns:
        The loss before the update.

    Raises:
        NumericError: if the loss is not finite.
    """
    if not batch:
        raise ShapeMismatchError("train_step needs a non-empty batch")
    points, queries, labels = _stack_batch(batch, config.points_per_shape, stream)
    params = model.named_parameters()
    with GradientTape() as tape:
        tape.watch([tensor for _, tensor in params])
        loss = model.loss(points, queries, labels, training=True)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericError(
            f"non-finite training loss {value} on shapes {[record.index for record in batch]}"
        )
    grads = tape.backward(loss)
    adam_step(
        params,
        {name: grad for (name, _), grad in zip(params, grads, strict=True)},
        state,
        config.lr if lr is None else lr,
    )
    return value


def validation_loss(
    model: AirNet, records: Sequence[ShapeRecord], config: TrainConfig
) -> float:
    """Eval-mode BCE on a fixed per-shape subset of the supervision points."""
    stream = RngStream(config.seed).split("validation")
    total = 0.0
    for record in records:
        count = min(config.points_per_shape, len(record.supervision))
        chosen = stream.split(record.index).choice(len(record.supervision), count)
        loss = model.loss(
            record.cloud.points,
            record.supervision.points[chosen],
            record.supervision.labels[chosen],
            training=False,
        )
        total += float(loss.data)
    return total / len(records)


def fit(
    records: Sequence[ShapeRecord],
    model: AirNet,
    config: TrainConfig,
    out_dir: Path | str | None = None,
) -> FitResult:
    """Train ``model`` in place and restore the parameters of the best validation epoch.

    With ``out_dir``, the per-epoch log goes to ``metrics.log`` and the best
    and final parameters to ``best.ckpt`` and ``last.ckpt``.

    Raises:
        DataFormatError: on an empty dataset.
        NumericError: if a training loss becomes non-finite.
    """
    train_idx, val_idx = split_dataset(records)
    train_records = [records[i] for i in train_idx]
    val_records = [records[i] for i in val_idx]
    _LOGGER.info(
        "Training on %d shapes, validating on %d, for up to %d epochs",
        len(train_records),
        len(val_records),
        config.epochs,
    )

    out_path = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_file = (out_path / METRICS_LOG).open("w", encoding="utf-8")

    result = FitResult(model)
    state = AdamState.for_parameters(model.named_parameters())
    root = RngStream(config.seed).split("train")
    best_snapshot: dict[str, np.ndarray] | None = None
    since_best = 0
    meta = {"seed": config.seed, **config.to_mapping()}

    try:
        for epoch in range(config.epochs):
            lr = lr_at_epoch(config, epoch)
            epoch_stream = root.split(f"epoch-{epoch}")
            order = [train_records[i] for i in epoch_stream.split("order").permutation(len(train_records))]
            losses = []
            for step, start in enumerate(range(0, len(order), config.batch_size)):
                batch = order[start : start + config.batch_size]
                loss = train_step(model, batch, state, config, epoch_stream.split(f"step-{step}"), lr)
                losses.append(loss)
                _LOGGER.debug("epoch %d step %d loss %.6f", epoch, step, loss)
            train_loss = float(np.mean(losses))

            val_loss = None
            if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
                val_loss = validation_loss(model, val_records, config)
                if result.best_val_loss is None or val_loss < result.best_val_loss:
                    result.best_val_loss = val_loss
                    result.best_epoch = epoch
                    best_snapshot = model.snapshot()
                    since_best = 0
                    if out_path is not None:
                        model.save(out_path / BEST_CHECKPOINT, {**meta, "epoch": epoch})
                else:
                    since_best += config.eval_every

            record = EpochRecord(epoch, train_loss, val_loss, lr)
            result.log.append(record)
            if log_file is not None:
                log_file.write(record.format() + "\n")
                log_file.flush()
            _LOGGER.info("%s", record.format())

            if since_best >= config.patience:
                _LOGGER.info(
                    "Validation loss has not improved for %d epochs; stopping", since_best
                )
                result.stopped_early = True
                break
    finally:
        if log_file is not None:
            log_file.close()

    if out_path is not None:
        model.save(out_path / LAST_CHECKPOINT, {**meta, "epoch": len(result.log)})
    if best_snapshot is not None:
        model.load_arrays(best_snapshot)
        _LOGGER.info(
            "Restored epoch %d (val_loss=%.6f)", result.best_epoch, result.best_val_loss
        )
    return result
