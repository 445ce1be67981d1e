"""Counter-based deterministic pseudo-randomness.

Every stochastic operation in this package draws from a keyed, counter-based
64-bit generator so that results are bit-reproducible from (seed, parameters)
on any platform, in any implementation language.  The exact algorithm:

  GOLDEN = 0x9E3779B97F4A7C15

  mix64(z):                       # SplitMix64 finalizer, all math mod 2**64
      z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
      z ^= z >> 27;  z *= 0x94D049BB133111EB
      z ^= z >> 31
      return z

  raw(key, i)   = mix64(key + (i + 1) * GOLDEN)      # i-th 64-bit word
  child key     = mix64(key ^ mix64(token))          # token folded left-to-right;
                                                     # string tokens hash via FNV-1a/64
  uniform(i)    = (raw(i) >> 11) * 2**-53            # in [0, 1)
  bernoulli(i)  = uniform(i) < rate
  normal pair j = Box-Muller on u1 = ((raw(2j) >> 11) + 1) * 2**-53,
                  u2 = (raw(2j+1) >> 11) * 2**-53:
                  sqrt(-2 ln u1) * (cos, sin)(2 pi u2)
  permutation n = argsort of raw(0..n-1), ties (never observed) by index

`raw(key, i)` is exactly the SplitMix64 output stream seeded at `key`, but
random access by counter makes it vectorizable and lets compiled and
pure-Python code consume identical streams.
"""

from __future__ import annotations

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def mix64(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * _M1) & _MASK
    z ^= z >> 27
    z = (z * _M2) & _MASK
    z ^= z >> 31
    return z


def fnv1a64(s: str) -> int:
    h = _FNV_OFFSET
    for byte in s.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(_M1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_M2)
        z ^= z >> np.uint64(31)
    return z


class Stream:
    """A keyed random-access stream of 64-bit words."""

    __slots__ = ("key",)

    def __init__(self, key: int):
        self.key = key & _MASK

    def child(self, *tokens: int | str) -> "Stream":
        """Derive an independent stream; tokens are ints or ASCII tags."""
        key = self.key
        for tok in tokens:
            t = fnv1a64(tok) if isinstance(tok, str) else (int(tok) & _MASK)
            key = mix64(key ^ mix64(t))
        return Stream(key)

    def raw(self, i: int) -> int:
        return mix64((self.key + (i + 1) * GOLDEN) & _MASK)

    def raw_block(self, start: int, count: int) -> np.ndarray:
        idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + idx * np.uint64(GOLDEN)
        return _mix64_array(z)

    def uniforms(self, count: int, start: int = 0) -> np.ndarray:
        """Doubles in [0, 1)."""
        bits = self.raw_block(start, count) >> np.uint64(11)
        return bits.astype(np.float64) * (2.0 ** -53)

    def bernoulli(self, count: int, rate: float, start: int = 0) -> np.ndarray:
        return self.uniforms(count, start) < rate

    def normals(self, count: int) -> np.ndarray:
        pairs = (count + 1) // 2
        words = self.raw_block(0, 2 * pairs)
        u1 = ((words[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)
        u2 = (words[1::2] >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(ang)
        out[1::2] = r * np.sin(ang)
        return out[:count]

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.raw_block(0, n), kind="stable")

    def __repr__(self) -> str:
        return f"Stream(key=0x{self.key:016x})"
