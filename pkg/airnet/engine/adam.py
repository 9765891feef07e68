"""Adam optimizer over named parameters."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from ..const import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from ..errors import ShapeMismatchError
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_parameters(cls, params: Sequence[tuple[str, Tensor]], **kwargs) -> AdamState:
        state = cls(**kwargs)
        for name, tensor in params:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


def adam_step(
    params: Sequence[tuple[str, Tensor]],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place.

    Args:
        params: ``(name, tensor)`` pairs, as produced by ``named_parameters``.
        grads: gradient per parameter name.
        state: moment accumulators; ``state.step`` is incremented.
        lr: learning rate for this step.

    Raises:
        ShapeMismatchError: if a gradient or moment shape differs from its
            parameter.
    """
    state.step += 1
    bias1 = 1.0 - state.beta1**state.step
    bias2 = 1.0 - state.beta2**state.step
    step_size = lr / bias1

    for name, tensor in params:
        grad = grads[name]
        if grad.shape != tensor.shape:
            raise ShapeMismatchError(
                f"gradient for {name} has shape {grad.shape}, parameter is {tensor.shape}"
            )
        m = state.m.setdefault(name, np.zeros_like(tensor.data))
        v = state.v.setdefault(name, np.zeros_like(tensor.data))
        if m.shape != tensor.shape or v.shape != tensor.shape:
            raise ShapeMismatchError(f"Adam moments for {name} do not match {tensor.shape}")

        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        update = step_size * m / (np.sqrt(v / bias2) + state.eps)
        tensor.data -= update.astype(tensor.dtype, copy=False)
