"""k-wise independent polynomial hashing and the least-significant-bit level.

A :class:`KWiseHash` is a random polynomial of degree ``k - 1`` over a prime
field; evaluated on any ``k`` distinct keys its values are jointly uniform
over the field.  The default field is the Mersenne prime ``2**61 - 1``.
Small primes below ``2**32`` are accepted so that whole families can be
enumerated in tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _jit
from ._jit import MERSENNE61

MAX_BITS = 61


def _is_prime(p: int) -> bool:
    if p < 2:
        return False
    for q in (2, 3, 5, 7, 11, 13):
        if p % q == 0:
            return p == q
    # deterministic Miller-Rabin for p < 3.3e24
    d, s = p - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41):
        if a % p == 0:
            continue
        x = pow(a, d, p)
        if x in (1, p - 1):
            continue
        for _ in range(s - 1):
            x = x * x % p
            if x == p - 1:
                break
        else:
            return False
    return True


def lsb(x: int, width: int = MAX_BITS) -> int:
    """Number of trailing zero bits of ``x``; ``lsb(0) == width`` by convention."""
    if x < 0:
        raise ValueError("lsb is defined for non-negative integers")
    if x == 0:
        return width
    return (x & -x).bit_length() - 1


@dataclass(frozen=True)
class KWiseHash:
    """Polynomial hash ``x -> (c0 + c1 x + ... + c_{k-1} x^{k-1} mod p) mod r``.

    ``r`` is ``out_range`` when given and ``2**out_bits`` otherwise; for a
    power-of-two range this keeps the low ``out_bits`` bits of the field
    element.
    """

    coefficients: tuple[int, ...]
    field_modulus: int = MERSENNE61
    universe_bits: int = MAX_BITS
    out_bits: int = MAX_BITS
    out_range: int | None = None

    def __post_init__(self):
        p = self.field_modulus
        if not self.coefficients:
            raise ValueError("a hash needs at least one coefficient")
        if p != MERSENNE61 and (p >= 1 << 32 or not _is_prime(p)):
            raise ValueError(f"unsupported field modulus {p}")
        if not 0 <= self.universe_bits <= min(MAX_BITS, p.bit_length()):
            raise ValueError(f"universe of {self.universe_bits} bits exceeds the field")
        if not 0 <= self.out_bits <= MAX_BITS:
            raise ValueError(f"out_bits must be at most {MAX_BITS}")
        if self.out_range is not None and not 1 <= self.out_range <= 1 << MAX_BITS:
            raise ValueError("out_range out of bounds")
        if any(not 0 <= c < p for c in self.coefficients):
            raise ValueError("coefficients must lie in the field")

    @property
    def degree(self) -> int:
        """Independence level k (number of coefficients)."""
        return len(self.coefficients)

    @property
    def range_size(self) -> int:
        return self.out_range if self.out_range is not None else 1 << self.out_bits

    def field_value(self, x: int) -> int:
        acc = 0
        x %= self.field_modulus
        for c in reversed(self.coefficients):
            acc = (acc * x + c) % self.field_modulus
        return acc

    def eval(self, x: int) -> int:
        if not 0 <= x < 1 << self.universe_bits:
            raise ValueError(f"{x} is outside the {self.universe_bits}-bit universe")
        return self.field_value(x) % self.range_size

    __call__ = eval

    def coeff_array(self) -> np.ndarray:
        return np.array(self.coefficients, dtype=np.uint64)

    def eval_many(self, xs) -> np.ndarray:
        xs = np.ascontiguousarray(xs, dtype=np.uint64)
        return _jit.hash_many(
            xs,
            self.coeff_array(),
            np.uint64(self.field_modulus),
            np.uint64(self.range_size),
        )

    def seed_bits(self) -> int:
        """Bits needed to store the coefficients."""
        return self.degree * (self.field_modulus - 1).bit_length()


def new_kwise(
    degree: int,
    universe_bits: int,
    out_bits: int,
    seed: int,
    *,
    field_modulus: int = MERSENNE61,
    out_range: int | None = None,
) -> KWiseHash:
    """Draw a ``degree``-wise independent hash deterministically from ``seed``."""
    if not 1 <= degree <= 64:
        raise ValueError("degree must be between 1 and 64")
    if universe_bits > MAX_BITS:
        raise ValueError(f"universe_bits > {MAX_BITS} is not supported")
    rng = np.random.default_rng(seed)
    coeffs = rng.integers(0, field_modulus, size=degree, dtype=np.uint64)
    return KWiseHash(
        tuple(int(c) for c in coeffs),
        field_modulus=field_modulus,
        universe_bits=universe_bits,
        out_bits=out_bits,
        out_range=out_range,
    )


def hash_from_field_elements(
    elements: Sequence[int],
    universe_bits: int,
    out_bits: int,
    out_range: int | None = None,
) -> KWiseHash:
    return KWiseHash(
        tuple(e % MERSENNE61 for e in elements),
        universe_bits=universe_bits,
        out_bits=out_bits,
        out_range=out_range,
    )


def split_seed(value: int, count: int, width: int = MAX_BITS) -> list[int]:
    """Cut an integer seed into ``count`` chunks of ``width`` bits (low first)."""
    mask = (1 << width) - 1
    return [(value >> (width * i)) & mask for i in range(count)]


def h4_degree(buckets: int) -> int:
    """Independence for the bucket hash: ceil(log2 P)**2, capped at 64."""
    return min(64, max(2, (buckets - 1).bit_length() ** 2))
