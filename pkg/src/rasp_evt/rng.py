"""Counter-based random streams keyed by (master seed, stream index, step).

Each uniform is a pure function of its key, so any subset of streams can be
generated in any order, vectorised across streams, or split between worker
processes without changing a single bit of output.  The mixing function is
the SplitMix64 finaliser.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
STREAM_MULT = np.uint64(0xD1B54A32D192ED03)
M1 = np.uint64(0xBF58476D1CE4E5B9)
M2 = np.uint64(0x94D049BB133111EB)
MASK64 = (1 << 64) - 1
# slots per step: 0 is the Bernoulli draw, 1.. are reset coordinates (with
# re-draws), the top REFRESH_SLOTS refill low-order bits of expanding coordinates
SLOTS = 64
REFRESH_SLOTS = 4
TO_UNIT = 2.0 ** -53


def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * M1
        z = (z ^ (z >> np.uint64(27))) * M2
        return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, streams) -> np.ndarray:
    """64-bit key of each stream index under the master seed."""
    base = mix64(np.uint64((int(seed) + int(GOLDEN)) & MASK64))
    s = np.asarray(streams, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(base ^ mix64((s + np.uint64(1)) * STREAM_MULT))


def counter(step: int, slot: int) -> np.uint64:
    """Counter of a draw; ``step = -1`` is reserved for the initial point."""
    return np.uint64(((step + 1) * SLOTS + slot) & MASK64)


def counters(steps: np.ndarray, slot: int) -> np.ndarray:
    """Vectorised :func:`counter` over an array of steps."""
    steps = np.asarray(steps, dtype=np.int64)
    with np.errstate(over="ignore"):
        return (steps + 1).astype(np.uint64) * np.uint64(SLOTS) + np.uint64(slot)


def uniforms_over_steps(key: np.uint64, steps: np.ndarray, slot: int) -> np.ndarray:
    """Uniforms of one stream at many steps (same values as :func:`uniforms`)."""
    with np.errstate(over="ignore"):
        z = mix64(key + (counters(steps, slot) + np.uint64(1)) * GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * TO_UNIT


def uniforms(keys: np.ndarray, step: int, slot: int) -> np.ndarray:
    """One uniform in [0, 1) per key for the given (step, slot)."""
    with np.errstate(over="ignore"):
        z = mix64(keys + (counter(step, slot) + np.uint64(1)) * GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * TO_UNIT


class StreamBatch:
    """A vector of independent streams sharing a master seed."""

    def __init__(self, seed: int, stream_indices):
        self.seed = int(seed)
        self.indices = np.asarray(stream_indices, dtype=np.int64)
        self.keys = stream_keys(self.seed, self.indices)

    def __len__(self):
        return len(self.indices)

    def subset(self, rows) -> "StreamBatch":
        out = object.__new__(StreamBatch)
        out.seed = self.seed
        out.indices = self.indices[rows]
        out.keys = self.keys[rows]
        return out

    def uniform(self, step: int, slot: int, rows=None) -> np.ndarray:
        keys = self.keys if rows is None else self.keys[rows]
        return uniforms(keys, step, slot)

    def resets(self, step: int, epsilon: float, rows=None) -> np.ndarray:
        """``True`` where the step is a reset (probability ``epsilon``)."""
        return self.uniform(step, 0, rows) < epsilon

    def points(self, step: int, dim: int, rows=None, attempt: int = 0) -> np.ndarray:
        """Uniform points of ``[0, 1)^dim`` for the given step and re-draw attempt."""
        base = 1 + attempt * dim
        if base + dim > SLOTS - REFRESH_SLOTS:
            raise RuntimeError("exhausted re-draw slots for a reset point")
        return np.column_stack([self.uniform(step, base + d, rows) for d in range(dim)])


    def refresh(self, step: int, axis: int, rows=None) -> np.ndarray:
        """Uniform used to refill the bits an expanding branch shifts out of ``axis``."""
        return self.uniform(step, SLOTS - 1 - axis, rows)


class CounterStream:
    """Single stream view used by step-by-step code paths."""

    def __init__(self, seed: int, stream_index: int = 0):
        self._batch = StreamBatch(seed, [stream_index])
        self.seed = int(seed)
        self.stream_index = int(stream_index)

    def refresh(self, step: int, axis: int) -> float:
        return float(self._batch.refresh(step, axis)[0])

    def is_reset(self, step: int, epsilon: float) -> bool:
        return bool(self._batch.resets(step, epsilon)[0])

    def point(self, step: int, dim: int, attempt: int = 0) -> np.ndarray:
        return self._batch.points(step, dim, attempt=attempt)[0]


class ForcedStream:
    """Scripted stream for tests: fixed reset decisions and reset points."""

    def __init__(self, resets, points=()):
        self._resets = list(resets)
        self._points = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
        self._next_point = 0

    def is_reset(self, step: int, epsilon: float) -> bool:
        return bool(self._resets[step])

    def refresh(self, step: int, axis: int) -> float:
        return 0.0

    def point(self, step: int, dim: int, attempt: int = 0) -> np.ndarray:
        p = self._points[self._next_point]
        self._next_point += 1
        return p
