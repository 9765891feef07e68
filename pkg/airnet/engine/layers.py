"""Parameter containers and the small layers built from tensor ops."""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass, fields, is_dataclass
import math
from typing import Any

import numpy as np

from ..errors import ShapeMismatchError
from ..rng import RngStream
from .tensor import Tensor, add, batch_norm, linear, relu

ACTIVATION_RELU = "relu"
ACTIVATION_NONE = "none"


def _uniform_init(stream: RngStream, shape: tuple[int, ...], fan_in: int, dtype) -> Tensor:
    bound = math.sqrt(1.0 / fan_in)
    size = int(np.prod(shape))
    values = (2.0 * stream.uniform(size) - 1.0) * bound
    return Tensor(values.reshape(shape).astype(dtype), requires_grad=True)


@dataclass
class Linear:
    """Affine layer ``x @ weight + bias``."""

    weight: Tensor
    bias: Tensor | None = None

    @classmethod
    def create(
        cls, stream: RngStream, d_in: int, d_out: int, dtype="float32", bias: bool = True
    ) -> Linear:
        weight = _uniform_init(stream, (d_in, d_out), d_in, dtype)
        bias_tensor = (
            Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None
        )
        return cls(weight, bias_tensor)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


@dataclass
class MlpParams:
    """Stack of linear layers, each followed by its activation marker."""

    layers: list[Linear]
    activations: list[str]

    def __post_init__(self) -> None:
        if len(self.layers) != len(self.activations):
            raise ShapeMismatchError(
                f"{len(self.layers)} layers but {len(self.activations)} activations"
            )
        for prev, nxt in zip(self.layers, self.layers[1:], strict=False):
            if prev.d_out != nxt.d_in:
                raise ShapeMismatchError(
                    f"MLP layer widths do not chain: {prev.d_out} -> {nxt.d_in}"
                )

    @classmethod
    def create(cls, stream: RngStream, widths: Sequence[int], dtype="float32") -> MlpParams:
        """Build an MLP with ReLU between layers and a linear output."""
        layers = [
            Linear.create(stream, d_in, d_out, dtype)
            for d_in, d_out in zip(widths, widths[1:], strict=False)
        ]
        activations = [ACTIVATION_RELU] * (len(layers) - 1) + [ACTIVATION_NONE]
        return cls(layers, activations)

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out

    def __call__(self, x: Tensor) -> Tensor:
        for layer, activation in zip(self.layers, self.activations, strict=True):
            x = layer(x)
            if activation == ACTIVATION_RELU:
                x = relu(x)
        return x


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics of one BN layer."""

    scale: Tensor
    shift: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def create(cls, width: int, dtype="float32") -> BatchNormState:
        return cls(
            scale=Tensor(np.ones(width, dtype=dtype), requires_grad=True),
            shift=Tensor(np.zeros(width, dtype=dtype), requires_grad=True),
            running_mean=np.zeros(width, dtype=dtype),
            running_var=np.ones(width, dtype=dtype),
        )

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(
            x, self.scale, self.shift, self.running_mean, self.running_var, training
        )


@dataclass
class FfnParams:
    """Feed-forward block ``BN(x + MLP(x))`` with hidden width equal to ``d``."""

    mlp: MlpParams
    norm: BatchNormState

    @classmethod
    def create(cls, stream: RngStream, width: int, dtype="float32") -> FfnParams:
        return cls(
            MlpParams.create(stream, (width, width, width), dtype),
            BatchNormState.create(width, dtype),
        )

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.norm(add(x, self.mlp(x)), training)


# --- Parameter traversal ---------------------------------------------------


def _walk(obj: Any, prefix: str) -> Iterator[tuple[str, Any]]:
    if isinstance(obj, Tensor | np.ndarray):
        yield prefix, obj
    elif is_dataclass(obj) and not isinstance(obj, type):
        for field in fields(obj):
            yield from _walk(getattr(obj, field.name), _join(prefix, field.name))
    elif isinstance(obj, list | tuple):
        for index, item in enumerate(obj):
            yield from _walk(item, _join(prefix, str(index)))


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def named_parameters(obj: Any, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Every trainable tensor under ``obj``, with dotted names, in field order."""
    return [(name, value) for name, value in _walk(obj, prefix) if isinstance(value, Tensor)]


def named_buffers(obj: Any, prefix: str = "") -> list[tuple[str, np.ndarray]]:
    """Every non-trainable array under ``obj`` (BN running statistics)."""
    return [
        (name, value) for name, value in _walk(obj, prefix) if isinstance(value, np.ndarray)
    ]
