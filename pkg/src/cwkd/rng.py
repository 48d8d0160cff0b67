"""Deterministic counter-based random number generation.

The generator is SplitMix64 evaluated at explicit counter positions:

    value(seed, k) = mix64((seed + (k + 1) * GOLDEN) mod 2^64)

where ``mix64`` is the SplitMix64 finalizer (Steele, Lea & Flood 2014) and
``GOLDEN`` is 2^64 / phi rounded to odd.  Every draw is a pure function of
``(seed, counter)``, so any slice of a stream can be produced independently
and in any order; serial and parallel producers yield identical values on
every platform (only 64-bit integer arithmetic and IEEE-754 doubles are
involved).

Sub-streams are derived by hashing labels into a fresh seed:

    h = seed
    for each label: h = mix64((h XOR fnv1a64(encode(label))) + GOLDEN)

with strings encoded as UTF-8 and integers as 8 little-endian bytes.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

# 53-bit mantissa scaling for uint64 -> float64 in [0, 1)
_INV53 = 1.0 / (1 << 53)


def _mix64_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_MIX1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _encode_label(label) -> bytes:
    if isinstance(label, str):
        return label.encode("utf-8")
    if isinstance(label, (int, np.integer)):
        return int(label).to_bytes(8, "little", signed=False) if label >= 0 else (
            int(label) & _MASK).to_bytes(8, "little", signed=False)
    raise ParameterError(f"stream labels must be str or int, got {type(label)!r}")


class Rng:
    """Counter-based deterministic stream of numbers (see module docstring)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._counter = 0

    def derive(self, *labels) -> "Rng":
        """Return an independent sub-stream keyed by ``labels``.

        Derivation depends only on this stream's seed and the labels, never
        on how much of the parent stream has been consumed.
        """
        h = self.seed
        for label in labels:
            h = _mix64_int(((h ^ _fnv1a64(_encode_label(label))) + _GOLDEN) & _MASK)
        return Rng(h)

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words of the stream."""
        if n < 0:
            raise ParameterError("cannot draw a negative number of words")
        start = self._counter
        self._counter += n
        ks = np.arange(start + 1, start + n + 1, dtype=np.uint64)
        z = np.uint64(self.seed) + ks * np.uint64(_GOLDEN)
        return _mix64_array(z)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Uniform doubles in [low, high), shaped ``shape``."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV53
        out = low + u * (high - low)
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Gaussian doubles via Box-Muller on consecutive uniform pairs."""
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (n + 1) // 2
        words = self.raw(2 * pairs)
        # u1 in (0, 1] so log() is finite; u2 in [0, 1)
        u1 = ((words[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV53
        u2 = (words[1::2] >> np.uint64(11)).astype(np.float64) * _INV53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * math.pi) * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        out = mean + std * z[:n]
        return out.reshape(shape) if shape else float(out[0])

    def integers(self, shape, low: int, high: int) -> np.ndarray:
        """Integers in [low, high).  Modulo bias is < range / 2^64."""
        if high <= low:
            raise ParameterError(f"empty integer range [{low}, {high})")
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        span = np.uint64(high - low)
        vals = (self.raw(n) % span).astype(np.int64) + low
        return vals.reshape(shape) if shape else int(vals[0])

    def shuffle_index(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) (sort of random keys)."""
        keys = self.raw(n)
        return np.argsort(keys, kind="stable")


def _as_shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)
