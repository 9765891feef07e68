"""The full occupancy network: encoder + decoder parameters and their config."""

from __future__ import annotations

from collections.abc import Callable, Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
import logging
from pathlib import Path

import numpy as np

from ..const import DECODE_CHUNK
from ..engine import tensor as T
from ..engine.checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from ..engine.layers import named_buffers, named_parameters
from ..errors import ConfigError, DataFormatError
from ..rng import RngStream
from .decoder import DecoderConfig, DecoderParams, decode_batch, decode_logits
from .encoder import EncoderConfig, EncoderParams, ShapeEncoding, encode

_LOGGER = logging.getLogger(__name__)

DTYPES = ("float32", "float64")


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.dtype not in DTYPES:
            raise ConfigError(f"model dtype must be one of {DTYPES}, got {self.dtype!r}")

    def to_mapping(self) -> dict[str, str]:
        """Flat ``encoder.*`` / ``decoder.*`` string mapping (checkpoint meta)."""
        out = {"model.dtype": self.dtype}
        for prefix, section in (("encoder", self.encoder), ("decoder", self.decoder)):
            for key, value in asdict(section).items():
                if isinstance(value, tuple | list):
                    value = ",".join(str(v) for v in value)
                out[f"{prefix}.{key}"] = str(value)
        return out

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> ModelConfig:
        sections: dict[str, dict[str, object]] = {"encoder": {}, "decoder": {}}
        for section_name, section_cls in (("encoder", EncoderConfig), ("decoder", DecoderConfig)):
            for f in fields(section_cls):
                key = f"{section_name}.{f.name}"
                if key not in mapping:
                    continue
                raw = mapping[key]
                default = getattr(section_cls(), f.name)
                if isinstance(default, tuple):
                    value: object = tuple(int(v) for v in raw.split(",") if v)
                elif isinstance(default, bool):
                    value = raw == "True"
                elif isinstance(default, int):
                    value = int(raw)
                elif isinstance(default, float):
                    value = float(raw)
                else:
                    value = raw
                sections[section_name][f.name] = value
        return cls(
            encoder=EncoderConfig(**sections["encoder"]),
            decoder=DecoderConfig(**sections["decoder"]),
            dtype=mapping.get("model.dtype", "float32"),
        )


@dataclass
class AirNet:
    """Trainable parameters plus the config that shaped them."""

    config: ModelConfig
    encoder: EncoderParams
    decoder: DecoderParams

    @classmethod
    def create(cls, config: ModelConfig, seed: int) -> AirNet:
        stream = RngStream(seed).split("init")
        return cls(
            config,
            EncoderParams.create(stream.split("encoder"), config.encoder, config.dtype),
            DecoderParams.create(
                stream.split("decoder"),
                config.decoder,
                config.encoder.feature_dim,
                config.dtype,
            ),
        )

    # --- Parameters --------------------------------------------------------

    def named_parameters(self) -> list[tuple[str, T.Tensor]]:
        return named_parameters(self.encoder, "encoder") + named_parameters(
            self.decoder, "decoder"
        )

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return named_buffers(self.encoder, "encoder") + named_buffers(self.decoder, "decoder")

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        params = [(name, tensor.data) for name, tensor in self.named_parameters()]
        return params + self.named_buffers()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: array.copy() for name, array in self.state_arrays()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Copy values into this model's parameters and buffers in place.

        Raises:
            DataFormatError: when names or shapes differ from this model.
        """
        own = dict(self.state_arrays())
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise DataFormatError(
                f"parameter names differ: missing={missing[:3]} unexpected={extra[:3]}"
            )
        for name, target in own.items():
            source = np.asarray(arrays[name])
            if source.shape != target.shape:
                raise DataFormatError(
                    f"{name}: checkpoint shape {source.shape}, model shape {target.shape}"
                )
            target[...] = source

    def astype(self, dtype: str) -> AirNet:
        """A copy of this model with every array cast to ``dtype``."""
        config = ModelConfig(self.config.encoder, self.config.decoder, dtype)
        clone = AirNet.create(config, seed=0)
        clone.load_arrays({name: array.astype(dtype) for name, array in self.state_arrays()})
        return clone

    # --- Forward -----------------------------------------------------------

    def encode(self, points: np.ndarray, training: bool = False) -> ShapeEncoding:
        return encode(points, self.config.encoder, self.encoder, training)

    def decode_logits(self, queries: np.ndarray, encoding: ShapeEncoding) -> T.Tensor:
        return decode_logits(queries, encoding, self.config.decoder, self.decoder)

    def decode_batch(
        self, queries: np.ndarray, encoding: ShapeEncoding, workers: int = 1
    ) -> np.ndarray:
        """Occupancy probabilities, decoded in fixed-size chunks.

        Chunks are independent, so fanning them out over ``workers`` threads
        gives the same values as a serial loop.
        """
        queries = np.asarray(queries)

        def run(chunk: np.ndarray) -> np.ndarray:
            return decode_batch(chunk, encoding, self.config.decoder, self.decoder)

        if queries.ndim == 3 or len(queries) <= DECODE_CHUNK:
            return run(queries)
        chunks = [queries[i : i + DECODE_CHUNK] for i in range(0, len(queries), DECODE_CHUNK)]
        if workers <= 1:
            return np.concatenate([run(chunk) for chunk in chunks])
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.concatenate(list(pool.map(run, chunks)))

    def occupancy_function(
        self, points: np.ndarray, workers: int = 1
    ) -> Callable[[np.ndarray], np.ndarray]:
        """Encode ``points`` once and return ``queries -> probabilities``."""
        encoding = self.encode(points, training=False)
        return lambda queries: self.decode_batch(queries, encoding, workers)

    def loss(
        self,
        points: np.ndarray,
        queries: np.ndarray,
        labels: np.ndarray,
        training: bool = True,
    ) -> T.Tensor:
        """Mean BCE over every (shape, query) pair of a batch."""
        encoding = self.encode(points, training=training)
        logits = self.decode_logits(queries, encoding)
        return T.bce_with_logits(logits, np.asarray(labels).reshape(-1))

    # --- Persistence -------------------------------------------------------

    def save(self, path: Path | str, meta: Mapping[str, object] | None = None) -> None:
        full_meta: dict[str, object] = dict(self.config.to_mapping())
        full_meta.update(meta or {})
        write_checkpoint(path, self.state_arrays(), full_meta)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint | Path | str) -> AirNet:
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = read_checkpoint(checkpoint)
        try:
            config = ModelConfig.from_mapping(checkpoint.meta)
        except (TypeError, ValueError) as err:
            raise DataFormatError(f"checkpoint model config is invalid: {err}") from err
        model = cls.create(config, seed=0)
        model.load_arrays(checkpoint.arrays)
        _LOGGER.debug("Loaded %d arrays from checkpoint", len(checkpoint.arrays))
        return model
