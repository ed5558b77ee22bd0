"""SplitMix64 streams, vectorized over independent per-trace generators.

Every random value in the simulator and the power model comes from here so
that runs are bit-reproducible:

* ``next_u64``: state += 0x9E3779B97F4A7C15, then the SplitMix64 finalizer.
* ``nibble``: the top four bits of one ``next_u64`` output.
* ``uniform``: ``(u >> 11) * 2**-53`` in [0, 1).
* ``normal``: Box-Muller on two consecutive outputs, u1 taken as
  ``((u >> 11) + 1) * 2**-53`` so it lies in (0, 1]; yields cos then sin.

Per-trace streams are seeded with ``derive_seed(base_seed, index)``.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0**-53


def mix64(z):
    """SplitMix64 finalizer on uint64 scalars or arrays."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * MIX1
        z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def derive_seed(base_seed: int, index):
    """Seed for stream `index`: mix64(base_seed + (index + 1) * GOLDEN)."""
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64(np.uint64(base_seed & MASK64) + (idx + np.uint64(1)) * GOLDEN)


class SplitMix64:
    """A batch of independent SplitMix64 generators stepping in lockstep."""

    def __init__(self, seeds):
        self.state = np.array(seeds, dtype=np.uint64, ndmin=1).copy()

    @classmethod
    def for_traces(cls, base_seed: int, indices) -> "SplitMix64":
        return cls(derive_seed(base_seed, np.asarray(indices)))

    def __len__(self) -> int:
        return self.state.size

    def next_u64(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            self.state += GOLDEN
        return mix64(self.state)

    def next_int(self) -> int:
        """Scalar draw from a single-stream generator."""
        if self.state.size != 1:
            raise ValueError("next_int needs a single-stream generator")
        return int(self.next_u64()[0])

    def nibble(self) -> np.ndarray:
        return (self.next_u64() >> np.uint64(60)).astype(np.uint8)

    def bit(self) -> np.ndarray:
        return (self.next_u64() >> np.uint64(63)).astype(np.uint8)

    def uniform(self) -> np.ndarray:
        return (self.next_u64() >> np.uint64(11)).astype(np.float64) * _TWO_M53

    def normal(self, n: int) -> np.ndarray:
        """Standard normals of shape (streams, n), consuming 2*ceil(n/2) draws."""
        pairs = (n + 1) // 2
        out = np.empty((self.state.size, 2 * pairs))
        for j in range(pairs):
            u1 = ((self.next_u64() >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_M53
            u2 = (self.next_u64() >> np.uint64(11)).astype(np.float64) * _TWO_M53
            r = np.sqrt(-2.0 * np.log(u1))
            out[:, 2 * j] = r * np.cos(2.0 * np.pi * u2)
            out[:, 2 * j + 1] = r * np.sin(2.0 * np.pi * u2)
        return out[:, :n]
