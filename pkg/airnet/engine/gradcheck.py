"""Finite-difference verification of the tape gradients of a whole model."""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
import logging

import numpy as np

from ..errors import ConfigError
from ..rng import RngStream
from .tensor import GradientTape, Tensor

_LOGGER = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
# Groups whose finite-difference gradient is this small are compared in
# absolute terms; a BN-cancelled bias has an exact zero gradient.
GRADIENT_FLOOR = 1e-6


@dataclass(frozen=True)
class GroupResult:
    name: str
    checked: int
    max_abs_error: float
    max_rel_error: float

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error <= tolerance


@dataclass
class GradcheckReport:
    groups: list[GroupResult]
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return max((group.max_rel_error for group in self.groups), default=0.0)

    @property
    def passed(self) -> bool:
        return all(group.passed(self.tolerance) for group in self.groups)

    def failures(self) -> list[GroupResult]:
        return [group for group in self.groups if not group.passed(self.tolerance)]

    def format(self) -> str:
        lines = [f"{'parameter':<60} {'checked':>7} {'max rel err':>12}"]
        for group in self.groups:
            flag = "" if group.passed(self.tolerance) else "  FAIL"
            lines.append(
                f"{group.name:<60} {group.checked:>7} {group.max_rel_error:>12.3e}{flag}"
            )
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max relative error {self.max_rel_error:.3e} (tolerance {self.tolerance:g})")
        return "\n".join(lines)


def check_gradients(
    objective: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    max_entries: int | None = None,
    stream: RngStream | None = None,
) -> GradcheckReport:
    """Compare tape gradients of ``objective`` with central differences.

    Args:
        objective: recomputes the scalar loss from the current parameter values.
        params: named parameter tensors (float64 for meaningful results).
        step: finite-difference step ``h``.
        tolerance: maximum relative error per parameter group.
        max_entries: check at most this many entries per tensor (all when
            ``None``); the subset is drawn from ``stream``.
        stream: random stream for entry selection.

    Returns:
        Per-tensor maximum relative error
        ``max|g_tape - g_fd| / max(max|g_fd|, floor)``.

    Raises:
        ConfigError: if ``params`` is empty.
    """
    if not params:
        raise ConfigError("gradient check needs at least one parameter")
    stream = stream or RngStream(0, stream=1)

    with GradientTape() as tape:
        tape.watch([tensor for _, tensor in params])
        loss = objective()
    analytic = tape.backward(loss)

    groups = []
    for (name, tensor), grad in zip(params, analytic, strict=True):
        flat = tensor.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = np.sort(stream.split(name).choice(flat.size, max_entries))
        numeric = np.empty(len(entries))
        for out, entry in enumerate(entries):
            original = flat[entry]
            flat[entry] = original + step
            upper = float(objective().data)
            flat[entry] = original - step
            lower = float(objective().data)
            flat[entry] = original
            numeric[out] = (upper - lower) / (2.0 * step)
        tape_values = grad.reshape(-1)[entries]
        abs_error = float(np.max(np.abs(tape_values - numeric)))
        scale = max(float(np.max(np.abs(numeric))), GRADIENT_FLOOR)
        groups.append(GroupResult(name, len(entries), abs_error, abs_error / scale))
        _LOGGER.debug("gradcheck %s: rel err %.3e over %d entries", name, abs_error / scale, len(entries))
    return GradcheckReport(groups, tolerance)


def check_model(
    model,
    points: np.ndarray,
    queries: np.ndarray,
    labels: np.ndarray,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Gradient-check the training objective of ``model`` on one fixed batch.

    The model is cast to float64 first; BN runs in training mode, exactly as
    in a training step.
    """
    model64 = model.astype("float64")
    params = model64.named_parameters()
    if not params:
        raise ConfigError("model has no parameters to check")

    def objective() -> Tensor:
        return model64.loss(points, queries, labels, training=True)

    return check_gradients(
        objective,
        params,
        step=step,
        tolerance=tolerance,
        max_entries=max_entries,
        stream=RngStream(seed).split("gradcheck"),
    )
