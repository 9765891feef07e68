"""Dense tensors with a reverse-mode gradient tape.

Operations are plain functions over :class:`Tensor`. When a
:class:`GradientTape` is active in the current context, every op whose inputs
require gradients appends a node ``(output, parents, rule, saved)``; outside a
tape nothing is recorded, so frozen-parameter inference never touches shared
state and can run from several worker threads at once.

Backward rules live in :data:`BACKWARD_RULES` and are looked up when the tape
is replayed, not when the node is recorded.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Sequence
from contextvars import ContextVar
from dataclasses import dataclass
import logging
import os
from typing import Any

import numpy as np

from ..const import BN_EPS, BN_MOMENTUM, ENV_FINITE_CHECKS
from ..errors import AirNetError, DataFormatError, NumericError, ShapeMismatchError

_LOGGER = logging.getLogger(__name__)

_ACTIVE_TAPE: ContextVar[GradientTape | None] = ContextVar("airnet_tape", default=None)
_FINITE_CHECKS = os.environ.get(ENV_FINITE_CHECKS, "1") != "0"


def set_finite_checks(enabled: bool) -> bool:
    """Toggle NaN/Inf policing at op outputs; returns the previous setting."""
    global _FINITE_CHECKS
    previous = _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)
    return previous


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


def _check_finite(op: str, data: np.ndarray) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise NumericError(f"{op} produced {bad} non-finite value(s) in shape {data.shape}")


class Tensor:
    """A numpy array that may take part in a gradient tape."""

    __slots__ = ("data", "grad", "name", "requires_grad")

    def __init__(
        self, data: Any, requires_grad: bool = False, name: str | None = None
    ) -> None:
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return mul(other, self)

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)


@dataclass
class _Node:
    output: Tensor
    parents: tuple[Tensor, ...]
    rule: str
    saved: tuple[Any, ...]


class GradientTape:
    """Records operations for one forward pass; discarded after backward.

    Usage::

        with GradientTape() as tape:
            tape.watch(parameters)
            loss = objective(...)
        grads = tape.backward(loss)
    """

    def __init__(self) -> None:
        self._nodes: list[_Node] = []
        self._watched: list[Tensor] = []
        self._token = None
        self._consumed = False

    def __enter__(self) -> GradientTape:
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc_info: object) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, tensors: Iterable[Tensor] | Tensor) -> None:
        """Register leaves that receive a gradient, zero when unreached."""
        if isinstance(tensors, Tensor):
            tensors = [tensors]
        for tensor in tensors:
            tensor.requires_grad = True
            self._watched.append(tensor)

    def record(
        self, output: Tensor, parents: tuple[Tensor, ...], rule: str, saved: tuple
    ) -> None:
        self._nodes.append(_Node(output, parents, rule, saved))

    def backward(self, loss: Tensor) -> list[np.ndarray]:
        """Accumulate gradients of a scalar ``loss`` into every watched leaf.

        Returns:
            The gradients in watch order; each is also stored on ``leaf.grad``.

        Raises:
            ShapeMismatchError: if ``loss`` is not a scalar.
            AirNetError: if ``loss`` was not produced on this tape, or the tape
                was already replayed.
        """
        if loss.data.size != 1:
            raise ShapeMismatchError(f"loss must be a scalar, got shape {loss.shape}")
        if self._consumed:
            raise AirNetError("gradient tape was already used for a backward pass")
        if not any(node.output is loss for node in reversed(self._nodes)):
            raise AirNetError("loss was not recorded on this gradient tape")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            upstream = grads.pop(id(node.output), None)
            if upstream is None:
                continue
            parent_grads = BACKWARD_RULES[node.rule](upstream, *node.saved)
            for parent, grad in zip(node.parents, parent_grads, strict=True):
                if grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + grad
                else:
                    grads[key] = grad

        results = []
        for leaf in self._watched:
            grad = grads.get(id(leaf))
            leaf.grad = np.zeros_like(leaf.data) if grad is None else grad
            results.append(leaf.grad)
        self._nodes.clear()
        self._consumed = True
        return results


def active_tape() -> GradientTape | None:
    return _ACTIVE_TAPE.get()


def as_tensor(value: Any, dtype: np.dtype | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    data = np.asarray(value)
    if dtype is not None:
        data = data.astype(dtype, copy=False)
    return Tensor(data)


def _emit(rule: str, data: np.ndarray, parents: tuple[Tensor, ...], *saved: Any) -> Tensor:
    _check_finite(rule, data)
    out = Tensor(data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, rule, saved)
    return out


def _pair(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a.dtype)
    b = as_tensor(b)
    return as_tensor(a, b.dtype), b


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- Elementwise -----------------------------------------------------------


def add(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return _emit("add", a.data + b.data, (a, b), a.shape, b.shape)


def _add_backward(grad, a_shape, b_shape):
    return _unbroadcast(grad, a_shape), _unbroadcast(grad, b_shape)


def sub(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return _emit("sub", a.data - b.data, (a, b), a.shape, b.shape)


def _sub_backward(grad, a_shape, b_shape):
    return _unbroadcast(grad, a_shape), -_unbroadcast(grad, b_shape)


def mul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return _emit("mul", a.data * b.data, (a, b), a.data, b.data)


def _mul_backward(grad, a, b):
    return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


def relu(x: Tensor) -> Tensor:
    return _emit("relu", np.maximum(x.data, 0), (x,), x.data > 0)


def _relu_backward(grad, positive):
    return (grad * positive,)


def sigmoid(x: Tensor) -> Tensor:
    # exp of a non-positive argument on both branches
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _emit("sigmoid", out, (x,), out)


def _sigmoid_backward(grad, out):
    return (grad * out * (1.0 - out),)


# --- Linear algebra --------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis of ``x``: ``x @ weight + bias``.

    Raises:
        ShapeMismatchError: if the inner dimensions or the bias width disagree.
    """
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeMismatchError(
            f"linear: input width {x.shape[-1]} does not match weight {weight.shape}"
        )
    out = x.data @ weight.data
    parents: tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeMismatchError(
                f"linear: bias shape {bias.shape} does not match weight {weight.shape}"
            )
        out = out + bias.data
        parents = (x, weight, bias)
    return _emit("linear", out, parents, x.data, weight.data, bias is not None)


def _linear_backward(grad, x, weight, has_bias):
    flat_x = x.reshape(-1, x.shape[-1])
    flat_grad = grad.reshape(-1, grad.shape[-1])
    grads = [grad @ weight.T, flat_x.T @ flat_grad]
    if has_bias:
        grads.append(flat_grad.sum(axis=0))
    return tuple(grads)


# --- Reductions and reshaping ----------------------------------------------


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    return _emit("sum", np.sum(x.data, axis=axis), (x,), x.shape, axis)


def _sum_backward(grad, shape, axis):
    if axis is not None:
        grad = np.expand_dims(grad, axis)
    return (np.broadcast_to(grad, shape).copy(),)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return _emit("mean", np.mean(x.data, axis=axis), (x,), x.shape, axis, count)


def _mean_backward(grad, shape, axis, count):
    if axis is not None:
        grad = np.expand_dims(grad, axis)
    return (np.broadcast_to(grad / count, shape).copy(),)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _emit("reshape", x.data.reshape(shape), (x,), x.shape)


def _reshape_backward(grad, shape):
    return (grad.reshape(shape),)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _emit("concat", out, tensors, sizes, axis)


def _concat_backward(grad, sizes, axis):
    splits = np.cumsum(sizes)[:-1]
    return tuple(np.split(grad, splits, axis=axis))


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of ``x`` (axis 0) by an integer index array of any shape."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeMismatchError(
            f"row index out of range [0, {x.shape[0]}): "
            f"min={index.min()} max={index.max()}"
        )
    return _emit("take_rows", x.data[index], (x,), x.shape, index)


def _take_rows_backward(grad, shape, index):
    out = np.zeros(shape, dtype=grad.dtype)
    np.add.at(out, index, grad)
    return (out,)


def maxpool_rows(x: Tensor) -> Tensor:
    """Per-channel max over the second-to-last axis (``[..., n, d] -> [..., d]``).

    The gradient goes to the first row attaining the maximum.
    """
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeMismatchError(f"maxpool_rows needs at least one row, got {x.shape}")
    arg = np.argmax(x.data, axis=-2)
    out = np.take_along_axis(x.data, arg[..., None, :], axis=-2)[..., 0, :]
    return _emit("maxpool_rows", out, (x,), x.shape, arg)


def _maxpool_rows_backward(grad, shape, arg):
    out = np.zeros(shape, dtype=grad.dtype)
    np.put_along_axis(out, arg[..., None, :], grad[..., None, :], axis=-2)
    return (out,)


# --- Normalization ---------------------------------------------------------


def channel_softmax(scores: Tensor, axis: int = 1) -> Tensor:
    """Softmax along the neighborhood axis, independently for every channel."""
    shifted = scores.data - scores.data.max(axis=axis, keepdims=True)
    weights = np.exp(shifted)
    weights /= weights.sum(axis=axis, keepdims=True)
    return _emit("channel_softmax", weights, (scores,), weights, axis)


def _channel_softmax_backward(grad, weights, axis):
    inner = (grad * weights).sum(axis=axis, keepdims=True)
    return (weights * (grad - inner),)


def batch_norm(
    x: Tensor,
    scale: Tensor,
    shift: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization over all rows of an ``[n, d]`` input.

    In training mode the batch statistics normalize the input and the running
    estimates are updated in place (unbiased variance). In eval mode the
    running estimates are used.

    Raises:
        ShapeMismatchError: in training mode with fewer than two rows.
    """
    if x.ndim != 2 or x.shape[1] != scale.shape[0]:
        raise ShapeMismatchError(
            f"batch_norm: input {x.shape} does not match {scale.shape[0]} channels"
        )
    n = x.shape[0]
    if training:
        if n < 2:
            raise ShapeMismatchError(f"batch_norm in training mode needs >= 2 rows, got {n}")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / (n - 1))
    else:
        mu = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
    inv_std = 1.0 / np.sqrt(var + eps)
    normed = (x.data - mu) * inv_std
    out = normed * scale.data + shift.data
    return _emit(
        "batch_norm", out, (x, scale, shift), normed, inv_std, scale.data, training
    )


def _batch_norm_backward(grad, normed, inv_std, scale, training):
    grad_scale = (grad * normed).sum(axis=0)
    grad_shift = grad.sum(axis=0)
    grad_normed = grad * scale
    if training:
        n = grad.shape[0]
        grad_x = (inv_std / n) * (
            n * grad_normed
            - grad_normed.sum(axis=0)
            - normed * (grad_normed * normed).sum(axis=0)
        )
    else:
        grad_x = grad_normed * inv_std
    return grad_x, grad_scale, grad_shift


# --- Loss ------------------------------------------------------------------


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy computed from logits.

    Uses ``max(l, 0) - l*y + log1p(exp(-|l|))``, finite for every finite
    logit, so no clamping of probabilities is needed.

    Raises:
        DataFormatError: if a label is not 0 or 1.
    """
    labels = np.asarray(labels)
    if labels.shape != logits.shape:
        raise ShapeMismatchError(
            f"labels {labels.shape} do not match logits {logits.shape}"
        )
    if not np.all((labels == 0) | (labels == 1)):
        raise DataFormatError("binary cross-entropy labels must be 0 or 1")
    y = labels.astype(logits.dtype)
    l = logits.data  # noqa: E741
    per_item = np.maximum(l, 0) - l * y + np.log1p(np.exp(-np.abs(l)))
    return _emit("bce_with_logits", np.mean(per_item), (logits,), l, y)


def _bce_with_logits_backward(grad, logits, labels):
    z = np.exp(-np.abs(logits))
    prob = np.where(logits >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return (grad * (prob - labels) / logits.size,)


BACKWARD_RULES: dict[str, Callable[..., tuple[np.ndarray | None, ...]]] = {
    "add": _add_backward,
    "sub": _sub_backward,
    "mul": _mul_backward,
    "relu": _relu_backward,
    "sigmoid": _sigmoid_backward,
    "linear": _linear_backward,
    "sum": _sum_backward,
    "mean": _mean_backward,
    "reshape": _reshape_backward,
    "concat": _concat_backward,
    "take_rows": _take_rows_backward,
    "maxpool_rows": _maxpool_rows_backward,
    "channel_softmax": _channel_softmax_backward,
    "batch_norm": _batch_norm_backward,
    "bce_with_logits": _bce_with_logits_backward,
}
