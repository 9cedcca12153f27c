"""Counter-based random streams with reproducible, platform-stable draws."""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


class RngStream:
    """Deterministic stream keyed by (seed, counter).

    Every draw consumes one counter tick and is generated by a Philox
    counter-based generator keyed on (seed, counter), so identical
    (seed, counter) pairs reproduce identical values on any platform.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter) & _MASK64

    def _next_gen(self) -> np.random.Generator:
        gen = np.random.Generator(np.random.Philox(key=[self.seed, self.counter]))
        self.counter = (self.counter + 1) & _MASK64
        return gen

    def child(self, index: int) -> "RngStream":
        """Derive an independent stream, e.g. one per task or per step."""
        return RngStream(_splitmix64(self.seed ^ _splitmix64(index & _MASK64)))

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._next_gen().uniform(low, high, size=shape).astype(np.float32)

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self._next_gen().normal(mean, std, size=shape).astype(np.float32)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._next_gen().integers(low, high, size=shape)

    def randint(self, high: int) -> int:
        return int(self._next_gen().integers(0, high))

    def permutation(self, n: int) -> np.ndarray:
        return self._next_gen().permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._next_gen().choice(n, size=size, replace=replace)

    def gumbel(self, shape=()) -> np.ndarray:
        # -log(-log(u)) with u clamped away from {0, 1} so draws stay finite
        u = self._next_gen().uniform(0.0, 1.0, size=shape)
        u = np.clip(u, 1e-9, 1.0 - 1e-9)
        return (-np.log(-np.log(u))).astype(np.float32)

    def state(self) -> dict:
        return {"seed": self.seed, "counter": self.counter}

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        return cls(state["seed"], state["counter"])

    def __repr__(self):
        return f"RngStream(seed={self.seed}, counter={self.counter})"
