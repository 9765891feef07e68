"""Occupancy decoders conditioned on a :class:`ShapeEncoding`.

The attentive decoder lets each query point, carrying ``z_glob`` as its
features, attend over its ``k_dec`` nearest anchors plus one global token.
The interpolation decoder (ablation) blends the nearest latents by inverse
distance instead. Both feed the same residual occupancy head.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..const import (
    DECODER_ATTENTIVE,
    DECODER_INTERP,
    DECODER_KINDS,
    DEFAULT_DECODER_DIM,
    DEFAULT_HEAD_HIDDEN,
    DEFAULT_HEAD_LAYERS,
    DEFAULT_K_DEC,
    DEFAULT_OCCUPANCY_THRESHOLD,
    INTERP_EPS,
)
from ..engine import tensor as T
from ..engine.layers import Linear
from ..errors import ConfigError, ShapeMismatchError
from ..geometry.sampling import as_batch, batched_knn
from ..rng import RngStream
from .attention import VcaParams, vca
from .encoder import ShapeEncoding


@dataclass
class DecoderConfig:
    k_dec: int = DEFAULT_K_DEC
    width: int = DEFAULT_DECODER_DIM
    head_layers: int = DEFAULT_HEAD_LAYERS
    head_hidden: int = DEFAULT_HEAD_HIDDEN
    threshold: float = DEFAULT_OCCUPANCY_THRESHOLD
    kind: str = DECODER_ATTENTIVE

    def __post_init__(self) -> None:
        if self.kind not in DECODER_KINDS:
            raise ConfigError(f"unknown decoder {self.kind!r}; expected one of {DECODER_KINDS}")
        for name in ("k_dec", "width", "head_layers", "head_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"decoder {name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"occupancy threshold must be in (0, 1), got {self.threshold}")


@dataclass
class ResnetBlock:
    fc_0: Linear
    fc_1: Linear

    def __call__(self, x: T.Tensor) -> T.Tensor:
        hidden = self.fc_0(T.relu(x))
        return T.add(x, self.fc_1(T.relu(hidden)))


@dataclass
class OccupancyHead:
    """Input projection, residual fully-connected blocks, scalar logit."""

    project: Linear
    blocks: list[ResnetBlock]
    output: Linear

    @classmethod
    def create(
        cls, stream: RngStream, d_in: int, hidden: int, layers: int, dtype="float32"
    ) -> OccupancyHead:
        return cls(
            project=Linear.create(stream, d_in, hidden, dtype),
            blocks=[
                ResnetBlock(
                    Linear.create(stream, hidden, hidden, dtype),
                    Linear.create(stream, hidden, hidden, dtype),
                )
                for _ in range(layers)
            ],
            output=Linear.create(stream, hidden, 1, dtype),
        )

    def __call__(self, x: T.Tensor) -> T.Tensor:
        hidden = self.project(x)
        for block in self.blocks:
            hidden = block(hidden)
        logits = self.output(T.relu(hidden))
        return T.reshape(logits, (logits.shape[0],))


@dataclass
class DecoderParams:
    head: OccupancyHead
    attention: VcaParams | None = None

    @classmethod
    def create(
        cls, stream: RngStream, config: DecoderConfig, latent_dim: int, dtype="float32"
    ) -> DecoderParams:
        if config.kind == DECODER_INTERP:
            head = OccupancyHead.create(
                stream.split("head"), 2 * latent_dim, config.head_hidden, config.head_layers, dtype
            )
            return cls(head)
        attention = VcaParams.create(
            stream.split("attention"), config.width, d_q=latent_dim, d_kv=latent_dim, dtype=dtype
        )
        head = OccupancyHead.create(
            stream.split("head"), config.width, config.head_hidden, config.head_layers, dtype
        )
        return cls(head, attention)


def _query_batch(queries: np.ndarray, encoding: ShapeEncoding) -> np.ndarray:
    batch = as_batch(queries)
    if len(batch) != encoding.batch_size:
        raise ShapeMismatchError(
            f"{len(batch)} query sets for {encoding.batch_size} encoded shapes"
        )
    return batch.astype(encoding.anchors.dtype, copy=False)


def _global_rows(encoding: ShapeEncoding, n_queries: int) -> T.Tensor:
    shape_index = np.repeat(np.arange(encoding.batch_size), n_queries)
    return T.take_rows(encoding.global_latent, shape_index)


def interpolation_weights(
    queries: np.ndarray, anchors: np.ndarray, neighborhood: np.ndarray
) -> np.ndarray:
    """Normalized inverse-distance weights ``1 / (dist + eps)`` per query."""
    dist = np.linalg.norm(queries[:, None, :] - anchors[neighborhood], axis=-1)
    inverse = 1.0 / (dist + INTERP_EPS)
    return inverse / inverse.sum(axis=1, keepdims=True)


def decode_logits(
    queries: np.ndarray,
    encoding: ShapeEncoding,
    config: DecoderConfig,
    params: DecoderParams,
) -> T.Tensor:
    """Occupancy logits for ``B x T x 3`` queries (``T x 3`` for one shape).

    Returns:
        ``(B * T)`` logits, shape-major.
    """
    if params.head is None:
        raise ConfigError("decoder parameters are not initialized")
    batch = _query_batch(queries, encoding)
    n_queries = batch.shape[1]
    k = min(config.k_dec, encoding.num_anchors)
    neighborhood = batched_knn(batch, encoding.anchors, k)
    flat_queries = batch.reshape(-1, 3)
    flat_anchors = encoding.anchors.reshape(-1, 3)
    global_rows = _global_rows(encoding, n_queries)

    if config.kind == DECODER_INTERP:
        weights = interpolation_weights(flat_queries, flat_anchors, neighborhood)
        blended = T.sum(
            T.mul(
                T.take_rows(encoding.latents, neighborhood),
                weights[..., None].astype(encoding.latents.dtype),
            ),
            axis=1,
        )
        return params.head(T.concat([blended, global_rows], axis=-1))

    local = vca(
        flat_queries,
        global_rows,
        flat_anchors,
        encoding.latents,
        neighborhood,
        params.attention,
        global_tokens=global_rows,
    )
    return params.head(local)


def _probabilities(logits: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(logits))
    return np.where(logits >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def decode_batch(
    queries: np.ndarray,
    encoding: ShapeEncoding,
    config: DecoderConfig,
    params: DecoderParams,
) -> np.ndarray:
    """Occupancy probabilities for ``T x 3`` (-> ``T``) or ``B x T x 3`` (-> ``B x T``)."""
    single = np.asarray(queries).ndim == 2
    batch = _query_batch(queries, encoding)
    logits = decode_logits(batch, encoding, config, params).data
    probabilities = _probabilities(logits.astype(np.float64)).reshape(batch.shape[:2])
    return probabilities[0] if single else probabilities


def decode(
    query: np.ndarray,
    encoding: ShapeEncoding,
    config: DecoderConfig,
    params: DecoderParams,
) -> float:
    """Occupancy probability at a single 3-vector for a single encoded shape."""
    return float(decode_batch(np.asarray(query).reshape(1, 3), encoding, config, params)[0])


def decode_interp(
    query: np.ndarray,
    encoding: ShapeEncoding,
    config: DecoderConfig,
    params: DecoderParams,
) -> float:
    """Like :func:`decode`, but only for the inverse-distance interpolation decoder."""
    if config.kind != DECODER_INTERP or params.attention is not None:
        raise ConfigError(f"decode_interp needs an {DECODER_INTERP!r} decoder, got {config.kind!r}")
    return decode(query, encoding, config, params)
