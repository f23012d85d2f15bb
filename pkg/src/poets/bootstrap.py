"""Online Poisson bootstrap weights and the aligned FIFO replay buffers."""

from __future__ import annotations

from collections import deque

import numpy as np

from .policy import RolloutBatch


def draw_weights(rng: np.random.Generator, n: int, group_size: int, lam: float = 1.0) -> np.ndarray:
    """Per-member, per-sample Poisson(1) weights, shrunk toward 1 by ``lam``.

    ``lam=1`` gives the raw integer bootstrap, ``lam=0`` gives all ones. The raw draws
    are consumed from ``rng`` regardless of ``lam`` so that runs differing only in
    ``lam`` share their random stream.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    raw = rng.poisson(1.0, size=(n, group_size))
    if lam == 1.0:
        return raw.astype(np.float64)
    return lam * raw + (1.0 - lam)


class ReplayBuffers:
    """Three aligned FIFO queues (actions, rewards, weights) holding the last ``capacity`` batches."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.actions: deque[RolloutBatch] = deque(maxlen=capacity)
        self.rewards: deque[np.ndarray] = deque(maxlen=capacity)
        self.weights: deque[np.ndarray] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.actions)

    def push(self, batch: RolloutBatch, weights: np.ndarray):
        if batch.rewards is None:
            raise ValueError("batch rewards must be set before pushing")
        self.actions.append(batch)
        self.rewards.append(batch.rewards)
        self.weights.append(np.asarray(weights, dtype=np.float64))

    def fetch(self, t: int) -> tuple[RolloutBatch, np.ndarray, np.ndarray]:
        """Return the ``t``-th oldest stored triple (1-based)."""
        if not 1 <= t <= len(self):
            raise IndexError(f"fetch index {t} out of range for {len(self)} stored batches")
        return self.actions[t - 1], self.rewards[t - 1], self.weights[t - 1]

    def __iter__(self):
        for t in range(1, len(self) + 1):
            yield self.fetch(t)

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "batches": [b.to_dict() for b in self.actions],
            "weights": [w.tolist() for w in self.weights],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ReplayBuffers:
        buf = cls(d["capacity"])
        for b, w in zip(d["batches"], d["weights"]):
            buf.push(RolloutBatch.from_dict(b), np.asarray(w, dtype=np.float64))
        return buf
