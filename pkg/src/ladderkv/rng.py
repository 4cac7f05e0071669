"""SplitMix64 pseudorandom generator.

Every stochastic choice in this package (toy-model weights, token embeddings,
random retention patterns, sweep sub-seeds) flows through this generator, so
whole runs are reproducible from a single 64-bit seed and results match across
platforms bit for bit.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

__all__ = ["splitmix64_next", "SplitMix64"]


def splitmix64_next(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (value, next_state).

    All arithmetic is modulo 2**64.
    """
    state = (state + _GAMMA) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * _MUL1) & _MASK
    z = ((z ^ (z >> 27)) * _MUL2) & _MASK
    return z ^ (z >> 31), state


class SplitMix64:
    """Stateful SplitMix64 stream over a 64-bit seed."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next(self) -> int:
        value, self.state = splitmix64_next(self.state)
        return value

    def next_array(self, n: int) -> np.ndarray:
        """Next ``n`` outputs as uint64, equivalent to ``n`` calls to next().

        The state recurrence is a plain counter (state += gamma), so a block
        of outputs vectorizes: mix each of the next n states independently.
        """
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64)
            z = np.uint64(self.state) + np.uint64(_GAMMA) * steps
            self.state = int(z[-1]) if n else self.state
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MUL1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MUL2)
            return z ^ (z >> np.uint64(31))

    def uniform_array(self, n: int) -> np.ndarray:
        """Next ``n`` outputs mapped to [0, 1) as float64."""
        return self.next_array(n).astype(np.float64) / 2.0**64
