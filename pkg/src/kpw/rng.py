"""Counter-based random numbers keyed by ``(seed, stream, row, column)``.

Values depend only on their key, never on draw order, so generators can be
evaluated in any order or in parallel and still agree bitwise.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _key(*parts) -> np.ndarray:
    with np.errstate(over="ignore"):
        acc = np.zeros((), dtype=np.uint64)
        for part in parts:
            acc = _splitmix(acc ^ np.asarray(part).astype(np.uint64))
    return acc


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed from a parent seed and integer keys."""
    val = _key(np.uint64(int(seed) & _MASK), *[np.uint64(int(k) & _MASK) for k in keys])
    return int(val) >> 1


def counter_uniform(seed: int, stream: int, rows: int, cols: int) -> np.ndarray:
    """``rows x cols`` uniforms in the open interval (0, 1)."""
    r = np.arange(rows, dtype=np.uint64)[:, None]
    c = np.arange(cols, dtype=np.uint64)[None, :]
    bits = _key(np.uint64(int(seed) & _MASK), np.uint64(stream), r, c)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def counter_normal(seed: int, stream: int, rows: int, cols: int) -> np.ndarray:
    """Standard normals by Box-Muller on two keyed uniform streams."""
    u1 = counter_uniform(seed, 2 * stream + 1, rows, cols)
    u2 = counter_uniform(seed, 2 * stream + 2, rows, cols)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
