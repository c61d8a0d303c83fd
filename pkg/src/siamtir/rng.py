"""SplitMix64, the one random source of the package.

State transition and output function (all arithmetic mod 2**64)::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

Derived draws:

* ``random``: ``(out >> 11) * 2**-53``, uniform on [0, 1).
* ``normal``: Box-Muller on consecutive uniform pairs ``(u1, u2)``:
  ``r = sqrt(-2 ln(1 - u1))``, emitting ``r cos(2 pi u2)`` then
  ``r sin(2 pi u2)``; an odd request discards the final sine.
* ``integers(lo, hi)``: ``lo + floor(random * (hi - lo))``.
* ``spawn(key)``: a child generator seeded with the SplitMix64 output of
  ``seed ^ (key * 0xD1B54A32D192ED03)``.

Because the state advances by a constant, a block of ``n`` outputs is a
pure function of the starting state and is generated vectorised.
"""
from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
SPAWN = 0xD1B54A32D192ED03
MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * MIX1
    z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def splitmix64(value: int) -> int:
    """Output for a single state value (the state already advanced)."""
    return int(_mix(np.array([value & MASK], dtype=np.uint64))[0])


class SplitMix64:
    """Deterministic 64-bit generator with numpy-shaped draws."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & MASK
        self.state = self.seed

    def next_u64(self, size: int | None = None):
        n = 1 if size is None else int(size)
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            states = np.uint64(self.state) + steps * GAMMA
            out = _mix(states)
        self.state = (self.state + n * int(GAMMA)) & MASK
        return int(out[0]) if size is None else out

    def random(self, shape=None):
        n = 1 if shape is None else int(np.prod(shape))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return float(u[0]) if shape is None else u.reshape(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=None):
        return low + (high - low) * self.random(shape)

    def normal(self, shape=None, loc: float = 0.0, scale: float = 1.0):
        n = 1 if shape is None else int(np.prod(shape))
        pairs = (n + 1) // 2
        u = self.random(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)[:n]
        z = loc + scale * z
        return float(z[0]) if shape is None else z.reshape(shape)

    def integers(self, low: int, high: int, shape=None):
        if high <= low:
            raise ValueError("empty integer range")
        u = self.random(shape)
        out = low + np.floor(np.asarray(u) * (high - low)).astype(np.int64)
        return int(out) if shape is None else out

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        if replace:
            return self.integers(0, n, shape=(size,))
        if size > n:
            raise ValueError("sample larger than population")
        order = np.argsort(self.random((n,)), kind="stable")
        return order[:size]

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.random((n,)), kind="stable")

    def spawn(self, key: int) -> "SplitMix64":
        return SplitMix64(splitmix64(self.seed ^ ((int(key) * SPAWN) & MASK)))
