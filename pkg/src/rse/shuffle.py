"""Perfect-shuffle index arithmetic and the derived sequence permutations.

Addresses are k-bit integers; the forward shuffle sends element `a` to the
one-bit left rotation of `a`, the inverse shuffle rotates right. Both are
fixed permutations with no learnable parameters, so index maps are built
once per (k, direction) and cached.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import ValidationError

MAX_BITS = 24  # 2M-element ceiling


@dataclass(frozen=True)
class ShuffleSpec:
    """Address-space description: n = 2**k elements, routed forward or inverse."""

    k: int
    direction: str = "forward"

    def __post_init__(self):
        if not 1 <= self.k <= MAX_BITS:
            raise ValidationError(f"k must be in [1, {MAX_BITS}], got {self.k}")
        if self.direction not in ("forward", "inverse"):
            raise ValidationError(f"unknown direction {self.direction!r}")

    @property
    def n(self):
        return 1 << self.k

    def permutation(self):
        return shuffle_permutation(self.k, inverse=self.direction == "inverse")


def rotl_index(a, k):
    """Left circular rotation of a's k-bit representation by one bit."""
    _check_address(a, k)
    return ((a << 1) | (a >> (k - 1))) & ((1 << k) - 1)


def rotr_index(a, k):
    """Right circular rotation by one bit; inverse of rotl_index."""
    _check_address(a, k)
    return (a >> 1) | ((a & 1) << (k - 1))


def _check_address(a, k):
    if not 1 <= k <= MAX_BITS:
        raise ValidationError(f"k must be in [1, {MAX_BITS}], got {k}")
    if not 0 <= a < (1 << k):
        raise ValidationError(f"address {a} out of range for {k} bits")


@lru_cache(maxsize=None)
def shuffle_permutation(k, inverse=False):
    """Destination map `perm` with out[perm[a]] = x[a], cached per (k, direction)."""
    if not 1 <= k <= MAX_BITS:
        raise ValidationError(f"k must be in [1, {MAX_BITS}], got {k}")
    a = np.arange(1 << k, dtype=np.int64)
    if inverse:
        dest = (a >> 1) | ((a & 1) << (k - 1))
    else:
        dest = ((a << 1) | (a >> (k - 1))) & ((1 << k) - 1)
    dest.setflags(write=False)
    return dest


def _bits_of(n):
    k = int(n).bit_length() - 1
    if n < 2 or (1 << k) != n:
        raise ValidationError(f"sequence length {n} is not a power of two >= 2")
    if k > MAX_BITS:
        raise ValidationError(f"sequence length {n} exceeds the 2**{MAX_BITS} ceiling")
    return k


def perfect_shuffle(x):
    """Riffle a length-2^k sequence: out[rotl(a)] = x[a]."""
    x = np.asarray(x)
    k = _bits_of(x.shape[0])
    perm = shuffle_permutation(k)
    out = np.empty_like(x)
    out[perm] = x
    return out


def inverse_shuffle(x):
    """Exact inverse of perfect_shuffle: out[rotr(a)] = x[a]."""
    x = np.asarray(x)
    k = _bits_of(x.shape[0])
    perm = shuffle_permutation(k, inverse=True)
    out = np.empty_like(x)
    out[perm] = x
    return out
