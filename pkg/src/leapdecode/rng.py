"""SplitMix64 stream used for every seeded quantity in the package."""

import numpy as np

from . import _kernels


class SplitMix64:
    """Stateful SplitMix64 generator.

    >>> g = SplitMix64(0)
    >>> hex(g.next_u64())
    '0xe220a8397b1dcdaf'
    """

    def __init__(self, seed: int):
        self.state = int(seed) & 0xFFFFFFFFFFFFFFFF

    def next_u64(self) -> int:
        out, self.state = _kernels.splitmix64_raw(self.state, 1)
        return int(out[0])

    def raw(self, n: int) -> np.ndarray:
        out, self.state = _kernels.splitmix64_raw(self.state, n)
        return out

    def uniform(self, n: int) -> np.ndarray:
        out, self.state = _kernels.splitmix64_uniform(self.state, n)
        return out

    def random(self) -> float:
        return float(self.uniform(1)[0])

    def categorical(self, probs) -> int:
        """Inverse-CDF draw; the first index whose cumulative mass exceeds u."""
        u = self.random()
        cdf = np.cumsum(probs)
        k = int(np.searchsorted(cdf, u, side="right"))
        if k >= len(cdf):
            # cumulative rounding left u just above the total mass
            k = int(np.flatnonzero(np.asarray(probs) > 0)[-1])
        return k


def derive_seed(seed: int, *path: int) -> int:
    """Deterministic child seed, one SplitMix64 output per path element."""
    s = int(seed) & 0xFFFFFFFFFFFFFFFF
    for p in path:
        out, _ = _kernels.splitmix64_raw((s ^ (int(p) * 0x9E3779B97F4A7C15)) & 0xFFFFFFFFFFFFFFFF, 1)
        s = int(out[0])
    return s
