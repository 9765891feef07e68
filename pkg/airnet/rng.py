"""Deterministic, splittable random streams.

Every stream is identified by ``(seed, stream)`` and a ``counter``. The pair is
hashed into a 128-bit Philox key; the counter addresses Philox blocks directly,
so the words a stream produces depend only on ``(seed, stream, counter)`` and
never on how many other streams were used before. Workers split child streams
by a stable label (``"shape-17"``) and never share a sequential generator.

A stream is owned by one consumer at a time; drawing advances its counter.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

# Philox4x64 emits four 64-bit words per counter value.
_BLOCK_WORDS = 4
_COUNTER_LIMIT = 2**64
_TWO_PI = 2.0 * math.pi


def _digest(text: str, size: int) -> bytes:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=size).digest()


class RngStream:
    """A counter-based random stream."""

    __slots__ = ("_key", "counter", "seed", "stream")

    def __init__(self, seed: int, stream: int = 0, counter: int = 0) -> None:
        """Initialize the stream.

        Args:
            seed: experiment seed (recorded in every artifact).
            stream: stream id; distinct ids give independent sequences.
            counter: first Philox block to draw from.
        """
        self.seed = int(seed)
        self.stream = int(stream)
        self.counter = int(counter)
        self._key = int.from_bytes(_digest(f"{self.seed}:{self.stream}", 16), "little")

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def split(self, label: str | int) -> RngStream:
        """Derive an independent child stream; the parent is not advanced."""
        child = _digest(f"{self.seed}:{self.stream}:{label}", 8)
        return RngStream(self.seed, int.from_bytes(child, "little"))

    def raw(self, n: int) -> np.ndarray:
        """Return ``n`` raw 64-bit words and advance past the blocks used."""
        if n < 0:
            raise ValueError(f"sample count must be >= 0, got {n}")
        if n == 0:
            return np.empty(0, dtype=np.uint64)
        blocks = -(-n // _BLOCK_WORDS)
        generator = np.random.Philox(key=self._key, counter=self.counter % _COUNTER_LIMIT)
        words = generator.random_raw(blocks * _BLOCK_WORDS)
        self.counter += blocks
        return words[:n]

    def uniform(self, n: int) -> np.ndarray:
        """Return ``n`` float64 values in ``[0, 1)`` with 53 random bits each."""
        words = self.raw(n)
        return (words >> np.uint64(11)).astype(np.float64) * (1.0 / 2**53)

    def gaussian(self, n: int, sigma: float = 1.0) -> np.ndarray:
        """Return ``n`` normal samples with standard deviation ``sigma`` (Box-Muller)."""
        if n == 0:
            return np.empty(0, dtype=np.float64)
        pairs = -(-n // 2)
        u = self.uniform(2 * pairs)
        # 1 - u maps [0, 1) onto (0, 1], keeping the log finite.
        radius = np.sqrt(-2.0 * np.log1p(-u[:pairs]))
        angle = _TWO_PI * u[pairs:]
        normals = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return sigma * normals[:n]

    def integers(self, n: int, high: int) -> np.ndarray:
        """Return ``n`` integers in ``[0, high)``."""
        if high <= 0:
            raise ValueError(f"high must be positive, got {high}")
        values = np.floor(self.uniform(n) * high).astype(np.int64)
        return np.minimum(values, high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Return a random permutation of ``range(n)``."""
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, population: int, k: int) -> np.ndarray:
        """Draw ``k`` distinct indices from ``range(population)``, in draw order."""
        if k > population:
            raise ValueError(f"cannot draw {k} distinct items from {population}")
        return self.permutation(population)[:k]

    def derive_seed(self) -> int:
        """Return a 32-bit integer seed for libraries that take their own seed."""
        return int(self.raw(1)[0] >> np.uint64(32))
