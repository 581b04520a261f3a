"""Deterministic, counter-based random streams.

Every random draw in the package (symbol data, noise, optional mask seeding)
comes from :func:`rng`.  The construction is fixed so other implementations
can reproduce it bit for bit:

* **Key.**  ``digest = SHA-256(seed as 8-byte little-endian unsigned || label as UTF-8)``;
  the 128-bit Philox key is ``(k0, k1)`` with ``k0 = digest[0:8]`` and
  ``k1 = digest[8:16]``, each read as little-endian u64.
* **Generator.**  Philox4x64-10 (Salmon et al., SC'11).  Block ``j = 1, 2, ...``
  is ``philox(counter=(j, 0, 0, 0), key)``; its four u64 words are emitted in
  order.  This is exactly ``numpy.random.Philox(key=[k0, k1])``.
* **Derived draws.**

  - ``uniform``: ``(raw >> 11) * 2**-53`` in [0, 1).
  - ``bits(n, width)``: the low ``width`` bits of each raw word.
  - ``normal``: Box-Muller on consecutive raw pairs ``(u1, u2)``:
    ``r = sqrt(-2 ln(1 - u1))``, emitting ``r cos(2 pi u2)`` then
    ``r sin(2 pi u2)``.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_key(seed: int, label: str) -> tuple[int, int]:
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    digest = hashlib.sha256(int(seed).to_bytes(8, "little") + label.encode("utf-8")).digest()
    return (int.from_bytes(digest[0:8], "little"), int.from_bytes(digest[8:16], "little"))


class CounterRNG:
    """A labelled Philox4x64-10 stream."""

    def __init__(self, seed: int, label: str):
        self.seed = int(seed)
        self.label = label
        self.key = derive_key(seed, label)
        self._bitgen = np.random.Philox(key=np.array(self.key, dtype=np.uint64))

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(n).astype(np.uint64)

    def uniform(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def bits(self, n: int, width: int = 1) -> np.ndarray:
        mask = np.uint64((1 << width) - 1)
        return (self.raw(n) & mask).astype(np.int64)

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2 * np.pi * u2)
        z[1::2] = r * np.sin(2 * np.pi * u2)
        return z[:n]

    def complex_normal(self, n: int) -> np.ndarray:
        """Circular complex Gaussian with unit variance (E|z|^2 = 1)."""
        z = self.normal(2 * n)
        return (z[0::2] + 1j * z[1::2]) / np.sqrt(2)


def rng(seed: int, stream_label: str) -> CounterRNG:
    return CounterRNG(seed, stream_label)
