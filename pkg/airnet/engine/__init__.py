"""Reverse-mode tensors, layers, optimizer and checkpoints."""

from .adam import AdamState, adam_step
from .checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from .tensor import GradientTape, Tensor

__all__ = [
    "AdamState",
    "Checkpoint",
    "GradientTape",
    "Tensor",
    "adam_step",
    "read_checkpoint",
    "write_checkpoint",
]
