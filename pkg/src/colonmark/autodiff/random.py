"""Portable counter-based random streams.

Every draw is a pure function of a 64-bit key and a 64-bit counter, so a
stream can be reproduced in any language with wrapping 64-bit integers:

    mix64(z):  z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
               z ^= z >> 27; z *= 0x94D049BB133111EB
               z ^= z >> 31                      (SplitMix64 finalizer)
    key(seed)        = mix64(seed + GOLDEN)
    fold(key, word)  = mix64(key ^ mix64(word + GOLDEN))
    bits(key, i)     = mix64(key + (i + 1) * GOLDEN),  GOLDEN = 0x9E3779B97F4A7C15
    uniform(key, i)  = (bits(key, i) >> 11) * 2**-53            in [0, 1)
    normal(key, i)   = sqrt(-2 ln(1 - uniform(key, 2i))) * cos(2 pi uniform(key, 2i + 1))

All arithmetic is modulo 2**64.
"""

from __future__ import annotations

import hashlib
from typing import Sequence

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix64(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64).copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def _mix_int(z: int) -> int:
    return int(mix64(np.array([z & _MASK], dtype=np.uint64))[0])


def make_key(seed: int) -> int:
    return _mix_int((seed + GOLDEN) & _MASK)


def fold(key: int, word: int) -> int:
    return _mix_int(key ^ _mix_int((word + GOLDEN) & _MASK))


def derive_key(seed: int, *words: int) -> int:
    """Key for a sub-stream, e.g. ``derive_key(seed, epoch)``."""
    k = make_key(seed)
    for w in words:
        k = fold(k, w)
    return k


def string_word(s: str) -> int:
    """Stable 64-bit word for a string (BLAKE2b, 8-byte digest, little-endian)."""
    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8).digest(), "little")


def bits(key: int, counters: np.ndarray) -> np.ndarray:
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(key) + (c + np.uint64(1)) * np.uint64(GOLDEN)
    return mix64(z)


def uniform01(key: int, counters: np.ndarray) -> np.ndarray:
    return (bits(key, counters) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def _normal01(key: int, counters: np.ndarray) -> np.ndarray:
    c = np.asarray(counters, dtype=np.uint64)
    u1 = uniform01(key, 2 * c)
    u2 = uniform01(key, 2 * c + np.uint64(1))
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


def uniform(shape: Sequence[int], lo: float = 0.0, hi: float = 1.0, seed: int = 0,
            dtype=np.float32) -> np.ndarray:
    if lo > hi:
        raise ValueError(f"lo={lo} > hi={hi}")
    n = int(np.prod(shape, dtype=np.int64))
    u = uniform01(make_key(seed), np.arange(n, dtype=np.uint64))
    return (lo + (hi - lo) * u).reshape(shape).astype(dtype)


def normal(shape: Sequence[int], mean: float = 0.0, std: float = 1.0, seed: int = 0,
           dtype=np.float32) -> np.ndarray:
    if std < 0:
        raise ValueError(f"std must be >= 0, got {std}")
    n = int(np.prod(shape, dtype=np.int64))
    if std == 0:
        return np.full(shape, mean, dtype=dtype)
    z = _normal01(make_key(seed), np.arange(n, dtype=np.uint64))
    return (mean + std * z).reshape(shape).astype(dtype)


def truncated_normal(shape: Sequence[int], std: float = 0.02, bound: float = 2.0, seed: int = 0,
                     dtype=np.float32) -> np.ndarray:
    """Normal(0, std) restricted to [-bound*std, bound*std].

    Out-of-range entries are redrawn from counters offset by ``n`` per round.
    """
    n = int(np.prod(shape, dtype=np.int64))
    key = make_key(seed)
    idx = np.arange(n, dtype=np.uint64)
    z = _normal01(key, idx)
    rnd = 1
    bad = np.abs(z) > bound
    while bad.any():
        z[bad] = _normal01(key, idx[bad] + np.uint64(rnd * n))
        bad = np.abs(z) > bound
        rnd += 1
    return (std * z).reshape(shape).astype(dtype)


def permutation(n: int, key: int) -> np.ndarray:
    """Stable argsort of uniform draws; deterministic given the key."""
    return np.argsort(uniform01(key, np.arange(n, dtype=np.uint64)), kind="stable")
