"""Point-cloud encoder producing anchors, local latents and a global latent.

Pipeline for the attentive family (``ours``)::

    feature-free PTB on the input points
    L1 x [ set abstraction -> FFN -> PTB -> FFN ]      (downsample to n1 .. M)
    L2 x [ full-attention PTB -> FFN ]                   (all M anchors)
    z_glob = MLP(maxpool(latents))

``PT`` swaps the set abstraction for the maxpool variant; ``PN`` also drops
every PTB, so its first set abstraction sees relative positions only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np

from ..const import (
    DEFAULT_DOWNSAMPLING_LAYERS,
    DEFAULT_FEATURE_DIM,
    DEFAULT_FULL_ATTENTION_LAYERS,
    DEFAULT_K_ENC,
    DEFAULT_NUM_ANCHORS,
    DENSE_INPUT_POINTS,
    DENSE_INTERMEDIATE_POINTS,
    ENCODER_FAMILIES,
    ENCODER_FAMILY_ATTENTIVE,
    ENCODER_FAMILY_POINTNET,
    SET_ABS_ATTENTIVE,
    SET_ABS_MAXPOOL,
    SPARSE_INTERMEDIATE_POINTS,
)
from ..engine import tensor as T
from ..engine.layers import FfnParams, MlpParams
from ..errors import ConfigError, ShapeMismatchError
from ..geometry.sampling import as_batch, batched_fps, batched_knn
from ..rng import RngStream
from .attention import PtbParams, VcaParams, ptb, vca

_LOGGER = logging.getLogger(__name__)


@dataclass
class EncoderConfig:
    feature_dim: int = DEFAULT_FEATURE_DIM
    num_anchors: int = DEFAULT_NUM_ANCHORS
    downsampling_layers: int = DEFAULT_DOWNSAMPLING_LAYERS
    full_attention_layers: int = DEFAULT_FULL_ATTENTION_LAYERS
    k_enc: int = DEFAULT_K_ENC
    # Explicit n1 .. n_L1 (last must equal num_anchors); derived when empty.
    cardinalities: tuple[int, ...] = field(default_factory=tuple)
    family: str = ENCODER_FAMILY_ATTENTIVE

    def __post_init__(self) -> None:
        self.cardinalities = tuple(int(n) for n in self.cardinalities)
        self.validate()

    def validate(self) -> None:
        if self.family not in ENCODER_FAMILIES:
            raise ConfigError(
                f"unknown encoder family {self.family!r}; expected one of {ENCODER_FAMILIES}"
            )
        for name in ("feature_dim", "num_anchors", "downsampling_layers", "k_enc"):
            if getattr(self, name) < 1:
                raise ConfigError(f"encoder {name} must be >= 1, got {getattr(self, name)}")
        if self.full_attention_layers < 0:
            raise ConfigError("encoder full_attention_layers must be >= 0")
        if self.family == ENCODER_FAMILY_POINTNET and self.full_attention_layers:
            raise ConfigError("the PN encoder has no attention layers; use full_attention_layers=0")
        if self.cardinalities:
            if len(self.cardinalities) != self.downsampling_layers:
                raise ConfigError(
                    f"{len(self.cardinalities)} cardinalities for "
                    f"{self.downsampling_layers} downsampling layers"
                )
            if self.cardinalities[-1] != self.num_anchors:
                raise ConfigError("the last cardinality must equal num_anchors")
            if any(a <= b for a, b in zip(self.cardinalities, self.cardinalities[1:], strict=False)):
                raise ConfigError(f"cardinalities must decrease strictly: {self.cardinalities}")

    @property
    def set_abs_mode(self) -> str:
        return SET_ABS_ATTENTIVE if self.family == ENCODER_FAMILY_ATTENTIVE else SET_ABS_MAXPOOL

    @property
    def uses_ptb(self) -> bool:
        return self.family != ENCODER_FAMILY_POINTNET

    def resolve_cardinalities(self, n_points: int) -> tuple[int, ...]:
        """Point counts after each downsampling layer for an ``n_points`` input.

        The default n1 is 200 for sparse inputs and 500 from 3000 points up;
        further layers are spaced geometrically down to ``num_anchors``. Counts
        are clamped to ``n_points`` so tiny inputs still run.
        """
        if n_points < self.num_anchors:
            raise ShapeMismatchError(
                f"input has {n_points} points, fewer than {self.num_anchors} anchors"
            )
        if self.cardinalities:
            counts = self.cardinalities
        elif self.downsampling_layers == 1:
            counts = (self.num_anchors,)
        else:
            first = (
                DENSE_INTERMEDIATE_POINTS
                if n_points >= DENSE_INPUT_POINTS
                else SPARSE_INTERMEDIATE_POINTS
            )
            first = max(first, self.num_anchors + self.downsampling_layers - 1)
            steps = self.downsampling_layers - 1
            ratio = self.num_anchors / first
            counts = tuple(
                max(round(first * ratio ** (i / steps)), self.num_anchors)
                for i in range(self.downsampling_layers)
            )
        clamped = tuple(min(n, n_points) for n in counts)
        if clamped != counts:
            _LOGGER.warning(
                "Clamped encoder cardinalities %s to %s for a %d-point input",
                counts,
                clamped,
                n_points,
            )
        return clamped


@dataclass
class ShapeEncoding:
    """Anchors ``B x M x 3``, latents ``(B * M) x d`` and global latents ``B x d``."""

    anchors: np.ndarray
    latents: T.Tensor
    global_latent: T.Tensor

    @property
    def batch_size(self) -> int:
        return self.anchors.shape[0]

    @property
    def num_anchors(self) -> int:
        return self.anchors.shape[1]

    def local_array(self, index: int = 0) -> np.ndarray:
        m = self.num_anchors
        return self.latents.data[index * m : (index + 1) * m]

    def global_array(self, index: int = 0) -> np.ndarray:
        return self.global_latent.data[index]


# --- Parameters ------------------------------------------------------------


@dataclass
class AttentiveSetAbsParams:
    """Two rounds of VCA from the central points, each followed by an FFN."""

    first: VcaParams
    first_ffn: FfnParams
    second: VcaParams
    second_ffn: FfnParams


@dataclass
class MaxpoolSetAbsParams:
    """Shared per-neighbor MLP on ``[X_j, P_j - P_c]`` then a channel max."""

    mlp: MlpParams


@dataclass
class DownsamplingParams:
    set_abs: AttentiveSetAbsParams | MaxpoolSetAbsParams
    set_abs_ffn: FfnParams
    ptb: PtbParams | None = None
    ptb_ffn: FfnParams | None = None


@dataclass
class FullAttentionParams:
    ptb: PtbParams
    ffn: FfnParams


@dataclass
class EncoderParams:
    initial: PtbParams | None
    downsampling: list[DownsamplingParams]
    full_attention: list[FullAttentionParams]
    global_head: MlpParams

    @classmethod
    def create(cls, stream: RngStream, config: EncoderConfig, dtype="float32") -> EncoderParams:
        d = config.feature_dim
        initial = (
            PtbParams.create(stream.split("initial"), d, feature_free=True, dtype=dtype)
            if config.uses_ptb
            else None
        )
        downsampling = []
        for layer in range(config.downsampling_layers):
            sub = stream.split(f"down-{layer}")
            if config.set_abs_mode == SET_ABS_ATTENTIVE:
                set_abs = AttentiveSetAbsParams(
                    first=VcaParams.create(sub, d, dtype=dtype),
                    first_ffn=FfnParams.create(sub, d, dtype),
                    second=VcaParams.create(sub, d, dtype=dtype),
                    second_ffn=FfnParams.create(sub, d, dtype),
                )
            else:
                d_in = 3 if (layer == 0 and not config.uses_ptb) else d + 3
                set_abs = MaxpoolSetAbsParams(MlpParams.create(sub, (d_in, d, d), dtype))
            downsampling.append(
                DownsamplingParams(
                    set_abs=set_abs,
                    set_abs_ffn=FfnParams.create(sub, d, dtype),
                    ptb=PtbParams.create(sub, d, dtype=dtype) if config.uses_ptb else None,
                    ptb_ffn=FfnParams.create(sub, d, dtype) if config.uses_ptb else None,
                )
            )
        full_attention = []
        for layer in range(config.full_attention_layers):
            sub = stream.split(f"full-{layer}")
            full_attention.append(
                FullAttentionParams(
                    PtbParams.create(sub, d, dtype=dtype), FfnParams.create(sub, d, dtype)
                )
            )
        head = MlpParams.create(stream.split("global"), (d, d, d), dtype)
        return cls(initial, downsampling, full_attention, head)


# --- Forward ---------------------------------------------------------------


def _gather_positions(points: np.ndarray, index: np.ndarray) -> np.ndarray:
    return np.take_along_axis(points, index[..., None], axis=1)


def _flat_rows(index: np.ndarray, n_per_shape: int) -> np.ndarray:
    offsets = np.arange(len(index))[:, None] * n_per_shape
    return (index + offsets).reshape(-1)


def set_abs(
    positions: np.ndarray,
    features: T.Tensor | None,
    count: int,
    k: int,
    params: AttentiveSetAbsParams | MaxpoolSetAbsParams,
    training: bool,
) -> tuple[np.ndarray, T.Tensor]:
    """Downsample a batch to ``count`` central points with summarized features.

    Args:
        positions: ``B x n x 3``.
        features: ``(B * n) x d`` or ``None`` (maxpool mode only).
        count: central points per shape (FPS).
        k: neighbors per central point.
        params: attentive or maxpool set-abstraction weights.
        training: BN mode.

    Returns:
        ``(B x count x 3 positions, (B * count) x d features)``.

    Raises:
        ShapeMismatchError: if ``count`` or ``k`` exceed the point count.
    """
    batch = as_batch(positions)
    n = batch.shape[1]
    if count > n:
        raise ShapeMismatchError(f"set abstraction cannot keep {count} of {n} points")
    if k > n:
        raise ShapeMismatchError(f"set abstraction k={k} exceeds {n} points")

    centers = batched_fps(batch, count)
    center_positions = _gather_positions(batch, centers)
    neighborhood = batched_knn(center_positions, batch, k)
    flat_centers = center_positions.reshape(-1, 3)
    flat_points = batch.reshape(-1, 3)

    if isinstance(params, AttentiveSetAbsParams):
        if features is None:
            raise ShapeMismatchError("attentive set abstraction needs input features")
        center_features = T.take_rows(features, _flat_rows(centers, n))
        summary = vca(
            flat_centers, center_features, flat_points, features, neighborhood, params.first
        )
        summary = params.first_ffn(summary, training)
        refined = vca(
            flat_centers, summary, flat_points, features, neighborhood, params.second
        )
        return center_positions, params.second_ffn(refined, training)

    dtype = params.mlp.layers[0].weight.dtype
    relative = T.Tensor(
        (flat_points[neighborhood] - flat_centers[:, None, :]).astype(dtype)
    )
    inputs = relative if features is None else T.concat(
        [T.take_rows(features, neighborhood), relative], axis=-1
    )
    return center_positions, T.maxpool_rows(params.mlp(inputs))


def encode(
    points: np.ndarray,
    config: EncoderConfig,
    params: EncoderParams,
    training: bool = False,
) -> ShapeEncoding:
    """Encode one ``N x 3`` cloud or a ``B x N x 3`` batch.

    Raises:
        ShapeMismatchError: if ``N`` is smaller than the anchor count or ``k_enc``.
    """
    batch = as_batch(points)
    dtype = params.global_head.layers[0].weight.dtype
    batch = batch.astype(dtype, copy=False)
    n_shapes, n_points, _ = batch.shape
    if n_points < config.k_enc:
        raise ShapeMismatchError(f"input has {n_points} points, fewer than k_enc={config.k_enc}")
    counts = config.resolve_cardinalities(n_points)

    positions = batch
    features: T.Tensor | None = None
    if params.initial is not None:
        positions, features = ptb(positions, None, config.k_enc, params.initial, training)

    for count, layer in zip(counts, params.downsampling, strict=True):
        k = min(config.k_enc, positions.shape[1])
        positions, features = set_abs(positions, features, count, k, layer.set_abs, training)
        features = layer.set_abs_ffn(features, training)
        if layer.ptb is not None:
            positions, features = ptb(
                positions, features, min(config.k_enc, count), layer.ptb, training
            )
            features = layer.ptb_ffn(features, training)
        _LOGGER.debug("Downsampled to %d points per shape", count)

    n_anchors = positions.shape[1]
    full_neighborhood = batched_knn(positions, positions, n_anchors)
    for layer in params.full_attention:
        positions, features = ptb(
            positions, features, n_anchors, layer.ptb, training, full_neighborhood
        )
        features = layer.ffn(features, training)

    pooled = T.maxpool_rows(T.reshape(features, (n_shapes, n_anchors, features.shape[-1])))
    return ShapeEncoding(positions, features, params.global_head(pooled))
