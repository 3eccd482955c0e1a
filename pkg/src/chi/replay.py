from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Array


@dataclass(frozen=True)
class Transition:
    s: Array
    a: Array
    r: float
    s2: Array
    done: bool
    synthetic: bool = False


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with a real/synthetic flag."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.synthetic = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @property
    def n_synthetic(self) -> int:
        return int(self.synthetic[: self._size].sum())

    def add(self, t: Transition) -> None:
        self.add_batch(t.s[None], t.a[None], np.array([t.r]), t.s2[None], np.array([float(t.done)]), t.synthetic)

    def add_batch(self, s: Array, a: Array, r: Array, s2: Array, done: Array, synthetic: bool) -> int:
        """Append rows, evicting the oldest entries when full. Non-finite rows are dropped."""
        keep = np.isfinite(s).all(1) & np.isfinite(a).all(1) & np.isfinite(r) & np.isfinite(s2).all(1)
        s, a, r, s2, done = s[keep], a[keep], r[keep], s2[keep], np.asarray(done)[keep]
        n = len(s)
        if n > self.capacity:
            s, a, r, s2, done = s[-self.capacity :], a[-self.capacity :], r[-self.capacity :], s2[-self.capacity :], done[-self.capacity :]
            n = self.capacity
        idx = (self._next + np.arange(n)) % self.capacity
        self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx] = s, a, r, s2, done
        self.synthetic[idx] = synthetic
        self._next = (self._next + n) % self.capacity
        self._size = min(self._size + n, self.capacity)
        return n

    def _rows(self, idx: Array) -> dict[str, Array]:
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx], "s2": self.s2[idx], "done": self.done[idx]}

    def sample(self, batch_size: int, rng: np.random.Generator, synthetic_cap: float = 1.0) -> dict[str, Array]:
        """Uniform minibatch; at most ``synthetic_cap`` of it synthetic while real rows exist."""
        size = self._size
        syn = self.synthetic[:size]
        n_syn_total = int(syn.sum())
        if n_syn_total == 0 or n_syn_total == size or synthetic_cap >= 1.0:
            return self._rows(rng.integers(size, size=batch_size))
        n_syn = min(int(rng.binomial(batch_size, n_syn_total / size)), int(synthetic_cap * batch_size))
        syn_idx = np.flatnonzero(syn)
        real_idx = np.flatnonzero(~syn)
        idx = np.concatenate(
            [syn_idx[rng.integers(len(syn_idx), size=n_syn)], real_idx[rng.integers(len(real_idx), size=batch_size - n_syn)]]
        )
        return self._rows(idx)

    def arrays(self, synthetic: bool | None = None) -> dict[str, Array]:
        """Stored rows in insertion order, optionally filtered by flag."""
        order = (self._next - self._size + np.arange(self._size)) % self.capacity
        if synthetic is not None:
            order = order[self.synthetic[order] == synthetic]
        out = self._rows(order)
        out["synthetic"] = self.synthetic[order]
        return out
