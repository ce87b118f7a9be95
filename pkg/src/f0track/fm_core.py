"""Flajolet-Martin level estimators and the constant-factor strong tracker.

An estimator keeps ``Y = max lsb(h(s))`` over the stream for a pairwise
hash ``h``.  The tracker holds ``w1`` groups of ``w2`` estimators whose
hashes are drawn through :class:`~f0track.pseudorandom.XiSampler`.  Each
group is stored as its median level plus gamma-coded deviations from it;
a group whose code outgrows ``C2 * w2`` bits is frozen as broken.  The
tracker reports ``2**L`` where ``L`` is the median, over unbroken groups,
of the group medians.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _jit
from .bits import BitReader, Bits, BitWriter, SeedBits, gamma_length, unzigzag, zigzag
from .errors import AllGroupsBroken, DecodeError
from .hashing import MAX_BITS, MERSENNE61, KWiseHash, lsb, split_seed
from .pseudorandom import DEFAULT_STRIDE, XiSampler, default_xi_shape


class _Broken:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "BROKEN"

    def __reduce__(self):
        return (_Broken, ())


BROKEN = _Broken()


def lower_median(values: Sequence):
    if not values:
        raise ValueError("median of an empty sequence")
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def median_width(universe_bits: int) -> int:
    """Bits for a stored median: enough for levels -1 .. universe_bits."""
    return (universe_bits - 1).bit_length() + 1


# --- single estimator --------------------------------------------------------


@dataclass
class FmEstimator:
    hash: KWiseHash
    level: int = -1

    def update(self, x: int) -> "FmEstimator":
        self.level = max(self.level, lsb(self.hash(x), self.hash.out_bits))
        return self

    def update_many(self, xs) -> "FmEstimator":
        xs = np.asarray(xs, dtype=np.uint64)
        if xs.size:
            if self.hash.universe_bits < 64 and int(xs.max()) >> self.hash.universe_bits:
                raise ValueError("element outside the hash universe")
            lv = _jit.lsb_many(self.hash.eval_many(xs), self.hash.out_bits)
            self.level = max(self.level, int(lv.max()))
        return self


def fm_update(e: FmEstimator, x: int) -> FmEstimator:
    return e.update(x)


# --- group codec -------------------------------------------------------------


def group_encoded_size(levels: Sequence[int], universe_bits: int = MAX_BITS) -> int:
    med = lower_median(levels)
    return median_width(universe_bits) + sum(gamma_length(zigzag(v - med) + 1) for v in levels)


def group_encode(levels: Sequence[int], budget_bits: int, universe_bits: int = MAX_BITS):
    """Median in fixed width, then one gamma code per deviation; BROKEN if over budget."""
    if not levels:
        raise ValueError("a group needs at least one level")
    if any(not -1 <= v <= universe_bits for v in levels):
        raise ValueError(f"levels must lie in [-1, {universe_bits}]")
    if group_encoded_size(levels, universe_bits) > budget_bits:
        return BROKEN
    med = lower_median(levels)
    w = BitWriter()
    w.write(med + 1, median_width(universe_bits))
    for v in levels:
        w.write_gamma(zigzag(v - med) + 1)
    return w.getbits()


def _read_group(r: BitReader, count: int, universe_bits: int) -> list[int]:
    med = r.read(median_width(universe_bits)) - 1
    out = [med + unzigzag(r.read_gamma() - 1) for _ in range(count)]
    if any(not -1 <= v <= universe_bits for v in out):
        raise DecodeError("decoded level out of range")
    return out


def group_decode(bits: Bits, count: int, universe_bits: int = MAX_BITS) -> list[int]:
    if count < 1:
        raise ValueError("count must be positive")
    r = BitReader(bits)
    out = _read_group(r, count, universe_bits)
    if r.remaining:
        raise DecodeError(f"{r.remaining} trailing bits after group code")
    return out


@dataclass(frozen=True)
class EstimatorGroup:
    """Read-only view of one group of a :class:`ConstantTracker`."""

    hashes: tuple[KWiseHash, ...]
    levels: tuple[int, ...]
    broken: bool
    bit_budget: int
    encoded_size_bits: int
    universe_bits: int

    @property
    def estimators(self) -> list[FmEstimator]:
        return [FmEstimator(h, v) for h, v in zip(self.hashes, self.levels)]

    @property
    def median(self) -> int:
        return lower_median(self.levels)

    def encode(self):
        if self.broken:
            return BROKEN
        return group_encode(self.levels, self.bit_budget, self.universe_bits)


# --- tracker -----------------------------------------------------------------

SEED_FIELD_ELEMENTS = 2  # pairwise hash
_MAGIC = b"F0CT"
_VERSION = 1
HEADER_BITS = 32 + 8 + 8 + 16 + 64 + 64 + 8


@dataclass(frozen=True)
class TrackerConfig:
    """Shape of a constant-factor tracker.

    ``w = ceil(width_factor * (universe_bits + log2(1/delta)))`` estimators
    are requested; the sampler rounds up to whole groups.
    """

    universe_bits: int = 32
    delta: float = 2.0**-10
    c2: int = 12
    width_factor: float = 2.0
    stride: int = DEFAULT_STRIDE

    def __post_init__(self):
        if not 1 <= self.universe_bits <= MAX_BITS:
            raise ValueError(f"universe_bits must be in [1, {MAX_BITS}]")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.c2 < 1 or self.width_factor <= 0 or self.stride < 1:
            raise ValueError("c2, width_factor and stride must be positive")

    @property
    def w(self) -> int:
        return math.ceil(self.width_factor * (self.universe_bits + math.log2(1 / self.delta)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return default_xi_shape(self.w)

    @property
    def group_budget(self) -> int:
        return self.c2 * self.shape[1]


_NO_H = np.zeros((0, 1), np.uint64)
_NO_C = np.zeros((0, 1), np.int64)
_NO_I = np.zeros(0, np.int64)
_NO_B = np.zeros(0, np.bool_)
_NO_F = np.zeros(0, np.float64)
_NO_W = np.zeros((0, 0), np.int64)


class ConstantTracker:
    """Constant-factor distinct-count tracker over ``[2**universe_bits]``."""

    def __init__(self, config: TrackerConfig, sampler: XiSampler):
        self.config = config
        self.sampler = sampler
        w1, w2 = sampler.w1, sampler.w2
        self.coeffs = _coefficients(sampler)
        self._coeffs_t = np.ascontiguousarray(self.coeffs.T)
        self.levels = np.full(w1 * w2, -1, np.int64)
        self.broken = np.zeros(w1, np.bool_)
        self.gmed = np.zeros(w1, np.int64)
        self.gsize = np.zeros(w1, np.int64)
        self.stats = np.zeros(1, np.int64)
        self._refresh()

    @classmethod
    def build(cls, config: TrackerConfig | None = None, seed: int = 0) -> "ConstantTracker":
        config = config or TrackerConfig()
        w1, w2, pool = config.shape
        rng = np.random.default_rng(seed)
        sampler = XiSampler.from_rng(
            rng,
            config.w,
            SEED_FIELD_ELEMENTS * MAX_BITS,
            w1=w1,
            w2=w2,
            pool_size=pool,
            stride=config.stride,
        )
        return cls(config, sampler)

    def _refresh(self) -> None:
        _jit.group_sizes(
            self.levels, self.w2, self.median_width, self.group_budget, self.broken, self.gmed, self.gsize
        )
        self.stats[0] = max(self.stats[0], int(self.gsize[~self.broken].sum()))

    # shape ---------------------------------------------------------------
    @property
    def universe_bits(self) -> int:
        return self.config.universe_bits

    @property
    def w1(self) -> int:
        return self.sampler.w1

    @property
    def w2(self) -> int:
        return self.sampler.w2

    @property
    def median_width(self) -> int:
        return median_width(self.universe_bits)

    @property
    def group_budget(self) -> int:
        return self.config.c2 * self.w2

    @property
    def cap(self) -> int:
        """Upper bound on :meth:`persisted_bits` at any time."""
        return HEADER_BITS + self.sampler.seed_length + self.w1 * (1 + self.group_budget)

    # updates -------------------------------------------------------------
    def _check(self, xs: np.ndarray) -> None:
        if xs.size and int(xs.max()) >> self.universe_bits:
            raise ValueError(f"element outside the {self.universe_bits}-bit universe")

    def kernel_args(self) -> tuple:
        return (
            self._coeffs_t,
            self.levels,
            self.w2,
            self.group_budget,
            self.median_width,
            self.broken,
            self.gmed,
            self.gsize,
            self.stats,
        )

    def update_many(self, xs: Iterable[int]) -> np.ndarray:
        """Insert ``xs`` in order; returns the reported level after each one.

        Raises :class:`AllGroupsBroken` (after consuming the offending
        element) if the last group breaks.
        """
        xs = np.ascontiguousarray(np.asarray(xs, dtype=np.uint64).ravel())
        self._check(xs)
        out = np.empty(xs.shape[0], np.int64)
        done = _jit.run_stream(
            xs, self.universe_bits, *self.kernel_args(),
            _NO_H, _NO_H, _NO_H, 1, _NO_C, _NO_I, _NO_I, _NO_B, np.zeros(1, np.int64), 0, 0, 1,
            out, _NO_F, _NO_W,
        )
        if done < xs.shape[0]:
            raise AllGroupsBroken(f"every group broke at element index {done}")
        return out

    def update(self, x: int) -> "ConstantTracker":
        self.update_many([x])
        return self

    # queries -------------------------------------------------------------
    @property
    def broken_count(self) -> int:
        return int(self.broken.sum())

    def level(self) -> int:
        """Median group level; -1 before the first element."""
        if self.broken.all():
            raise AllGroupsBroken("every estimator group is broken")
        return lower_median([int(m) for m, b in zip(self.gmed, self.broken) if not b])

    def query(self) -> float:
        lv = self.level()
        return 0.0 if lv < 0 else 2.0**lv

    def groups(self) -> list[EstimatorGroup]:
        out = []
        w2 = self.w2
        for g in range(self.w1):
            rows = self.coeffs[g * w2 : (g + 1) * w2]
            hashes = tuple(
                KWiseHash(
                    tuple(int(c) for c in row),
                    universe_bits=self.universe_bits,
                    out_bits=self.universe_bits,
                )
                for row in rows
            )
            out.append(
                EstimatorGroup(
                    hashes,
                    tuple(int(v) for v in self.levels[g * w2 : (g + 1) * w2]),
                    bool(self.broken[g]),
                    self.group_budget,
                    int(self.gsize[g]),
                    self.universe_bits,
                )
            )
        return out

    # persistence ---------------------------------------------------------
    def to_bits(self) -> Bits:
        c = self.config
        w = BitWriter()
        w.write(int.from_bytes(_MAGIC, "big"), 32)
        w.write(_VERSION, 8)
        w.write(c.universe_bits, 8)
        w.write(c.c2, 16)
        w.write(int.from_bytes(struct.pack(">d", c.delta), "big"), 64)
        w.write(int.from_bytes(struct.pack(">d", c.width_factor), "big"), 64)
        w.write(c.stride, 8)
        w.write(self.sampler.seed_s1.value, self.sampler.s1_bits)
        w.write(self.sampler.seed_s2.value, self.sampler.s2_bits)
        for g in range(self.w1):
            w.write(int(self.broken[g]), 1)
            if not self.broken[g]:
                lv = [int(v) for v in self.levels[g * self.w2 : (g + 1) * self.w2]]
                w.write_bits(group_encode(lv, self.group_budget, self.universe_bits))
        return w.getbits()

    def persisted_bits(self) -> int:
        return len(self.to_bits())

    @property
    def max_persisted_bits(self) -> int:
        """Largest :meth:`persisted_bits` value seen so far, from the kernel's tally."""
        return HEADER_BITS + self.sampler.seed_length + self.w1 + int(self.stats[0])

    def to_bytes(self) -> bytes:
        b = self.to_bits()
        return len(b).to_bytes(4, "big") + b.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ConstantTracker":
        if len(data) < 4:
            raise DecodeError("truncated tracker")
        n = int.from_bytes(data[:4], "big")
        r = BitReader(Bits.from_bytes(data[4:], n))
        tracker = cls.read_bits(r)
        if r.remaining:
            raise DecodeError("trailing bits after tracker")
        return tracker

    @classmethod
    def read_bits(cls, r: BitReader) -> "ConstantTracker":
        if r.read(32).to_bytes(4, "big") != _MAGIC:
            raise DecodeError("not a constant tracker")
        if r.read(8) != _VERSION:
            raise DecodeError("unsupported tracker version")
        ub = r.read(8)
        c2 = r.read(16)
        delta = struct.unpack(">d", r.read(64).to_bytes(8, "big"))[0]
        wf = struct.unpack(">d", r.read(64).to_bytes(8, "big"))[0]
        stride = r.read(8)
        try:
            config = TrackerConfig(ub, delta, c2, wf, stride)
        except ValueError as e:
            raise DecodeError(str(e)) from e
        w1, w2, pool = config.shape
        probe = XiSampler.from_rng(
            np.random.default_rng(0), config.w, SEED_FIELD_ELEMENTS * MAX_BITS,
            w1=w1, w2=w2, pool_size=pool, stride=stride,
        )
        s1 = SeedBits(r.read(probe.s1_bits), probe.s1_bits)
        s2 = SeedBits(r.read(probe.s2_bits), probe.s2_bits)
        sampler = XiSampler(
            s1, s2, probe.w, w1, w2, pool, probe.universe_bits, stride=stride
        )
        t = cls(config, sampler)
        for g in range(w1):
            if r.read(1):
                t.broken[g] = True
            else:
                t.levels[g * w2 : (g + 1) * w2] = _read_group(r, w2, ub)
        t.stats[0] = 0
        t._refresh()
        return t


def _coefficients(sampler: XiSampler) -> np.ndarray:
    rows = []
    for group in sampler.groups():
        for elem in group:
            rows.append([c % MERSENNE61 for c in split_seed(elem, SEED_FIELD_ELEMENTS)])
    return np.array(rows, dtype=np.uint64).reshape(-1, SEED_FIELD_ELEMENTS)


def tracker_update(t: ConstantTracker, x: int) -> ConstantTracker:
    return t.update(x)


def tracker_query(t: ConstantTracker) -> float:
    return t.query()
