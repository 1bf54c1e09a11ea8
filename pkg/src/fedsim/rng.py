"""Seeded random streams.

Every stochastic step in fedsim draws from an :class:`Rng`, a thin wrapper
around numpy's counter-based Philox generator.  Streams are derived from a
run seed plus a tuple of keys (``derive(seed, "train", round)``) through
numpy's ``SeedSequence`` hash, so independent consumers never share state and
results do not depend on call order elsewhere in the program.

Gaussians are produced by the Box-Muller transform on the uniform stream and
gamma variates by Marsaglia-Tsang on top of those, so the only thing taken
from numpy is the 64-bit Philox output and its 53-bit float conversion.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Random stream keyed by ``(seed, *keys)``."""

    def __init__(self, seed: int, *keys: int | str):
        entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def random(self, size=None):
        """Uniform doubles in [0, 1)."""
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None):
        return low + (high - low) * self._gen.random(size)

    def normal(self, size=None, loc=0.0, scale=1.0):
        """Gaussian draws via Box-Muller (both outputs of each pair are used)."""
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self._gen.random((pairs, 2))
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * math.pi * u[:, 1]
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        z = loc + scale * z[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n_or_array):
        """Fisher-Yates shuffle (numpy's implementation) of ``range(n)`` or a copy of an array."""
        return self._gen.permutation(n_or_array)

    def gamma(self, shape: float) -> float:
        """One Gamma(shape, 1) variate by Marsaglia-Tsang."""
        if shape <= 0:
            raise ValueError("gamma shape must be positive")
        if shape < 1.0:
            # boost: G(a) = G(a + 1) * U^(1/a)
            g = self.gamma(shape + 1.0)
            u = self._gen.random()
            return g * (1.0 - u) ** (1.0 / shape)
        d = shape - 1.0 / 3.0
        c = 1.0 / math.sqrt(9.0 * d)
        while True:
            x = self.normal()
            v = (1.0 + c * x) ** 3
            if v <= 0:
                continue
            u = 1.0 - self._gen.random()
            if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
                return d * v

    def dirichlet(self, alpha) -> np.ndarray:
        draws = np.array([self.gamma(float(a)) for a in alpha])
        total = draws.sum()
        if total == 0.0:
            # every gamma underflowed (tiny alpha); put all mass on one coordinate
            draws[int(self._gen.random() * len(draws))] = 1.0
            total = 1.0
        return draws / total

    def categorical(self, probs, size: int) -> np.ndarray:
        """``size`` independent draws from a discrete distribution over ``range(len(probs))``."""
        cdf = np.cumsum(probs)
        cdf /= cdf[-1]
        idx = np.searchsorted(cdf, self._gen.random(size), side="right")
        return np.minimum(idx, len(cdf) - 1)


def derive(seed: int, *keys: int | str) -> int:
    """A 64-bit seed for a named sub-stream; used where a plain integer seed is passed on."""
    entropy = [_key_to_int(seed)] + [_key_to_int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])
