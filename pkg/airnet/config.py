"""Run configuration: flat ``key=value`` files, CLI overrides and validation.

A config file holds one ``key=value`` per line; ``#`` starts a comment. Values
given on the command line win over the file. The merged mapping is validated
(unknown keys are rejected, types coerced, ranges checked) and the effective
config is written back as sorted ``key=value`` text next to every output.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field
import logging
import os
from pathlib import Path
from typing import Any

import voluptuous as vol

from .const import (
    CONFIG_FILE,
    DECODER_KINDS,
    DEFAULT_BATCH_SIZE,
    DEFAULT_DECODER_DIM,
    DEFAULT_DOWNSAMPLING_LAYERS,
    DEFAULT_EPOCHS,
    DEFAULT_F_SCORE_THRESHOLD,
    DEFAULT_FEATURE_DIM,
    DEFAULT_FULL_ATTENTION_LAYERS,
    DEFAULT_HEAD_HIDDEN,
    DEFAULT_HEAD_LAYERS,
    DEFAULT_INPUT_POINTS,
    DEFAULT_IOU_SAMPLES,
    DEFAULT_K_DEC,
    DEFAULT_K_ENC,
    DEFAULT_LR,
    DEFAULT_NUM_ANCHORS,
    DEFAULT_OCCUPANCY_THRESHOLD,
    DEFAULT_POINTS_PER_SHAPE,
    DEFAULT_RES0,
    DEFAULT_SUPERVISION_POINTS,
    DEFAULT_SURFACE_SAMPLES,
    DEFAULT_UPSAMPLING_STEPS,
    EARLY_STOP_PATIENCE,
    ENCODER_FAMILIES,
    ENCODER_FAMILY_ATTENTIVE,
    ENV_THREADS,
    LR_DECAY_EVERY,
    LR_DECAY_FACTOR,
    MIN_RES0,
    REGIME_NEAR_SURFACE,
    REGIMES,
)
from .errors import ConfigError

_LOGGER = logging.getLogger(__name__)

# --- Keys ------------------------------------------------------------------

CONF_SEED = "seed"
CONF_MODEL_DTYPE = "model.dtype"
CONF_DATA_COUNT = "data.count"
CONF_DATA_REGIME = "data.regime"
CONF_DATA_NOISE = "data.noise_sigma"
CONF_DATA_POINTS = "data.points"
CONF_DATA_SUPERVISION = "data.supervision_points"
CONF_TRAIN_BATCH = "train.batch_size"
CONF_TRAIN_POINTS = "train.points_per_shape"
CONF_TRAIN_LR = "train.lr"
CONF_TRAIN_DECAY = "train.lr_decay"
CONF_TRAIN_DECAY_EVERY = "train.lr_decay_every"
CONF_TRAIN_EPOCHS = "train.epochs"
CONF_TRAIN_EVAL_EVERY = "train.eval_every"
CONF_TRAIN_PATIENCE = "train.patience"
CONF_EXTRACT_RES0 = "extract.res0"
CONF_EXTRACT_UPSAMPLE = "extract.upsampling_steps"
CONF_EXTRACT_THRESHOLD = "extract.threshold"
CONF_EVAL_IOU = "eval.iou_samples"
CONF_EVAL_SURFACE = "eval.surface_samples"
CONF_EVAL_TAU = "eval.f_score_threshold"

_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
_NON_NEGATIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=0))
_NON_NEGATIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0.0))
_PROBABILITY = vol.All(vol.Coerce(float), vol.Range(min=0.0, max=1.0, min_included=False, max_included=False))


def _cardinalities(value: Any) -> str:
    text = ",".join(str(v) for v in value) if isinstance(value, list | tuple) else str(value)
    for item in filter(None, text.split(",")):
        if not item.strip().isdigit() or int(item) < 1:
            raise vol.Invalid(f"expected comma-separated positive integers, got {text!r}")
    return text.replace(" ", "")


CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_SEED, default=0): _NON_NEGATIVE_INT,
        vol.Optional(CONF_MODEL_DTYPE, default="float32"): vol.In(("float32", "float64")),
        vol.Optional("encoder.feature_dim", default=DEFAULT_FEATURE_DIM): _POSITIVE_INT,
        vol.Optional("encoder.num_anchors", default=DEFAULT_NUM_ANCHORS): _POSITIVE_INT,
        vol.Optional(
            "encoder.downsampling_layers", default=DEFAULT_DOWNSAMPLING_LAYERS
        ): _POSITIVE_INT,
        vol.Optional(
            "encoder.full_attention_layers", default=DEFAULT_FULL_ATTENTION_LAYERS
        ): _NON_NEGATIVE_INT,
        vol.Optional("encoder.k_enc", default=DEFAULT_K_ENC): _POSITIVE_INT,
        vol.Optional("encoder.cardinalities", default=""): _cardinalities,
        vol.Optional("encoder.family", default=ENCODER_FAMILY_ATTENTIVE): vol.In(ENCODER_FAMILIES),
        vol.Optional("decoder.k_dec", default=DEFAULT_K_DEC): _POSITIVE_INT,
        vol.Optional("decoder.width", default=DEFAULT_DECODER_DIM): _POSITIVE_INT,
        vol.Optional("decoder.head_layers", default=DEFAULT_HEAD_LAYERS): _POSITIVE_INT,
        vol.Optional("decoder.head_hidden", default=DEFAULT_HEAD_HIDDEN): _POSITIVE_INT,
        vol.Optional("decoder.threshold", default=DEFAULT_OCCUPANCY_THRESHOLD): _PROBABILITY,
        vol.Optional("decoder.kind", default=DECODER_KINDS[0]): vol.In(DECODER_KINDS),
        vol.Optional(CONF_DATA_COUNT, default=100): _NON_NEGATIVE_INT,
        vol.Optional(CONF_DATA_REGIME, default=REGIME_NEAR_SURFACE): vol.In(REGIMES),
        vol.Optional(CONF_DATA_NOISE, default=0.0): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_DATA_POINTS, default=DEFAULT_INPUT_POINTS): _POSITIVE_INT,
        vol.Optional(CONF_DATA_SUPERVISION, default=DEFAULT_SUPERVISION_POINTS): _POSITIVE_INT,
        vol.Optional(CONF_TRAIN_BATCH, default=DEFAULT_BATCH_SIZE): _POSITIVE_INT,
        vol.Optional(CONF_TRAIN_POINTS, default=DEFAULT_POINTS_PER_SHAPE): _POSITIVE_INT,
        vol.Optional(CONF_TRAIN_LR, default=DEFAULT_LR): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_TRAIN_DECAY, default=LR_DECAY_FACTOR): _NON_NEGATIVE_FLOAT,
        vol.Optional(CONF_TRAIN_DECAY_EVERY, default=LR_DECAY_EVERY): _POSITIVE_INT,
        vol.Optional(CONF_TRAIN_EPOCHS, default=DEFAULT_EPOCHS): _NON_NEGATIVE_INT,
        vol.Optional(CONF_TRAIN_EVAL_EVERY, default=1): _POSITIVE_INT,
        vol.Optional(CONF_TRAIN_PATIENCE, default=EARLY_STOP_PATIENCE): _POSITIVE_INT,
        vol.Optional(CONF_EXTRACT_RES0, default=DEFAULT_RES0): vol.All(
            vol.Coerce(int), vol.Range(min=MIN_RES0)
        ),
        vol.Optional(CONF_EXTRACT_UPSAMPLE, default=DEFAULT_UPSAMPLING_STEPS): _NON_NEGATIVE_INT,
        vol.Optional(CONF_EXTRACT_THRESHOLD, default=DEFAULT_OCCUPANCY_THRESHOLD): _PROBABILITY,
        vol.Optional(CONF_EVAL_IOU, default=DEFAULT_IOU_SAMPLES): _POSITIVE_INT,
        vol.Optional(CONF_EVAL_SURFACE, default=DEFAULT_SURFACE_SAMPLES): _POSITIVE_INT,
        vol.Optional(CONF_EVAL_TAU, default=DEFAULT_F_SCORE_THRESHOLD): vol.All(
            vol.Coerce(float), vol.Range(min=0.0, min_included=False)
        ),
    },
    extra=vol.PREVENT_EXTRA,
)


# --- Files -----------------------------------------------------------------


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key=value`` lines; later duplicates win."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def read_config_file(path: Path | str) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    return parse_config_text(text, str(path))


def format_config(values: Mapping[str, Any]) -> str:
    return "".join(f"{key}={values[key]}\n" for key in sorted(values))


def write_effective_config(out_dir: Path | str, values: Mapping[str, Any]) -> Path:
    path = Path(out_dir) / CONFIG_FILE
    path.write_text(format_config(values), encoding="utf-8")
    return path


def validate_config(values: Mapping[str, Any]) -> dict[str, Any]:
    """Coerce and range-check ``values``, filling defaults.

    Raises:
        ConfigError: on unknown keys or invalid values.
    """
    try:
        return CONFIG_SCHEMA(dict(values))
    except vol.MultipleInvalid as err:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in error.path) or '<root>'}: {error.msg}"
            for error in err.errors
        )
        raise ConfigError(f"invalid configuration: {problems}") from err


def resolve_config(
    file_values: Mapping[str, Any] | None, cli_values: Mapping[str, Any] | None
) -> dict[str, Any]:
    """Merge file values under CLI values (CLI wins) and validate the result."""
    merged: dict[str, Any] = dict(file_values or {})
    merged.update({key: value for key, value in (cli_values or {}).items() if value is not None})
    return validate_config(merged)


def worker_count() -> int:
    """Worker threads for fan-out, capped by ``AIRNET_THREADS`` when set."""
    raw = os.environ.get(ENV_THREADS)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        count = int(raw)
    except ValueError as err:
        raise ConfigError(f"{ENV_THREADS} must be an integer, got {raw!r}") from err
    if count < 1:
        raise ConfigError(f"{ENV_THREADS} must be >= 1, got {count}")
    return count


@dataclass
class RunConfig:
    """Effective configuration of one CLI command."""

    command: str
    values: dict[str, Any]
    paths: dict[str, Path] = field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.values[CONF_SEED])

    def section(self, prefix: str) -> dict[str, Any]:
        """Values under ``prefix.``, with the prefix stripped."""
        start = f"{prefix}."
        return {key[len(start) :]: value for key, value in self.values.items() if key.startswith(start)}

    def echo(self) -> dict[str, Any]:
        """The mapping written to ``config.txt``: values plus command and paths."""
        out: dict[str, Any] = {"command": self.command}
        out.update(self.values)
        out.update({f"path.{name}": str(path) for name, path in self.paths.items()})
        return out
