"""Matrix primitives and a platform-stable seeded random generator.

All arithmetic is float64. The random generator is PCG64 (O'Neill's
permuted congruential generator, the numpy ``PCG64`` bit generator) and only
its raw 64-bit output stream is consumed, because numpy guarantees stability
of bit-generator streams but not of its higher-level distribution samplers.

Derived draws:

* uniform doubles: ``(raw >> 11) * 2**-53`` -- 53 random mantissa bits, [0, 1)
* normals: Box-Muller on consecutive uniform pairs ``(u1, u2)``:
  ``z0 = sqrt(-2 ln(1 - u1)) cos(2 pi u2)``, ``z1 = ... sin(2 pi u2)``
* integers in ``[0, high)``: ``floor(u * high)``
* permutations: Fisher-Yates driven by the integer rule above
"""
from __future__ import annotations

import numpy as np

from .exceptions import DomainError, ShapeError

_INV_2_53 = 1.0 / 9007199254740992.0


def as_matrix(a, name="a") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    """Standard matrix product with a shape check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def mat_square(a) -> np.ndarray:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"mat_square needs a square matrix, got {a.shape}")
    return a @ a


def softmax(v, axis=-1) -> np.ndarray:
    """Max-shifted softmax along ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0 or v.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    z = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, axis=-1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = v - np.max(v, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


class SeededRng:
    """Single-owner deterministic random stream.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit seed. Identical seeds give identical streams on every
        platform and numpy version.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._bitgen = np.random.PCG64(seed)

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(int(n)).astype(np.uint64)

    def uniform(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return low + (high - low) * u

    def normal(self, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        n = int(n)
        if std < 0:
            raise DomainError(f"std must be >= 0, got {std}")
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return mean + std * z[:n]

    def integers(self, n: int, high: int) -> np.ndarray:
        if high <= 0:
            raise DomainError(f"high must be positive, got {high}")
        out = np.floor(self.uniform(n) * high).astype(np.int64)
        return np.minimum(out, high - 1)

    def permutation(self, n: int) -> np.ndarray:
        idx = np.arange(int(n))
        if n < 2:
            return idx
        u = self.uniform(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[k] * (i + 1)), i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def spawn(self, offset: int) -> "SeededRng":
        """Independent generator keyed on ``seed + offset`` (mod 2**64)."""
        return SeededRng((self.seed + int(offset)) % 2**64)


def rng_normal(rng: SeededRng, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    return rng.normal(n, mean, std)


def check_random_state(random_state) -> SeededRng:
    if isinstance(random_state, SeededRng):
        return random_state
    if random_state is None:
        return SeededRng(0)
    return SeededRng(int(random_state))
