"""Ring replay buffer with thread-safe pushes."""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np


class NotReady(Exception):
    """The buffer holds fewer transitions than requested."""


class ContractError(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminated: bool


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros((capacity, act_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.d = np.zeros(capacity)
        self.inserted = 0  # total pushes ever
        self._lock = threading.Lock()

    def __len__(self):
        return min(self.inserted, self.capacity)

    def push(self, t: Transition):
        s = np.asarray(t.s, dtype=float)
        a = np.asarray(t.a, dtype=float)
        s2 = np.asarray(t.s_next, dtype=float)
        if s.shape != (self.obs_dim,) or s2.shape != (self.obs_dim,) or a.shape != (self.act_dim,):
            raise ContractError(f"transition shapes {s.shape}, {a.shape}, {s2.shape} do not match "
                                f"obs {self.obs_dim} / act {self.act_dim}")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a)) and np.all(np.isfinite(s2))
                and np.isfinite(t.r)):
            raise ContractError("transition has non-finite entries")
        with self._lock:
            i = self.inserted % self.capacity
            self.s[i], self.a[i], self.r[i], self.s2[i] = s, a, t.r, s2
            self.d[i] = float(bool(t.terminated))
            self.inserted += 1

    def sample(self, batch: int, rng: np.random.Generator):
        with self._lock:
            n = len(self)
            if n < batch or n == 0:
                raise NotReady(f"{n} transitions stored, {batch} requested")
            idx = rng.integers(0, n, size=batch)
            return {"s": self.s[idx].copy(), "a": self.a[idx].copy(), "r": self.r[idx].copy(),
                    "s2": self.s2[idx].copy(), "d": self.d[idx].copy()}

    def items(self):
        """Stored transitions oldest first."""
        with self._lock:
            n = len(self)
            start = self.inserted % self.capacity if self.inserted > self.capacity else 0
            order = (np.arange(n) + start) % self.capacity
            return [Transition(self.s[i].copy(), self.a[i].copy(), float(self.r[i]),
                               self.s2[i].copy(), bool(self.d[i])) for i in order]

    def meta(self):
        return {"capacity": self.capacity, "size": len(self), "inserted": self.inserted,
                "obs_dim": self.obs_dim, "act_dim": self.act_dim}
