"""Bucketed (1 + eps) distinct-count sketch driven by a constant-factor oracle.

Each element lands in bucket ``h4(h3(x))`` of ``P = ceil(C0 / eps**2)``
buckets and raises that bucket's counter to ``lsb(h1(x)) - D``.  The offset
``D`` follows the oracle level ``L`` as ``max(0, L - ceil(log2(1/eps**2)) - D0)``
and never decreases; raising it shifts every counter down, clamped at -1.
With ``Q`` occupied buckets the estimate is ``Phi^-1(Q) * 2**D`` where
``Phi`` is the expected occupancy of ``P`` bins.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import _jit
from .bits import BitReader, Bits, BitWriter
from .errors import DecodeError, OracleUnavailable, SaturationError
from .fm_core import ConstantTracker, TrackerConfig
from .hashing import MAX_BITS, MERSENNE61, KWiseHash, h4_degree

H1_DEGREE = 8
H3_DEGREE = 2


# --- occupancy -------------------------------------------------------------


def phi(bins: int, t: float) -> float:
    """Expected number of nonempty bins after ``t`` uniform balls into ``bins`` bins."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return -bins * math.expm1(t * math.log1p(-1.0 / bins))


def phi_inverse(bins: int, q: float) -> float:
    if not 0 <= q < bins:
        raise ValueError(f"occupancy {q} has no preimage for {bins} bins")
    return math.log1p(-q / bins) / math.log1p(-1.0 / bins)


@dataclass(frozen=True)
class OccupancyModel:
    bins: int

    def __post_init__(self):
        if self.bins < 20:
            raise ValueError("occupancy model needs at least 20 bins")

    def phi(self, t: float) -> float:
        return phi(self.bins, t)

    def phi_inverse(self, q: float) -> float:
        return phi_inverse(self.bins, q)

    def variance(self, t: int) -> float:
        """Exact variance of the occupied-bin count after ``t`` fully random balls."""
        k = self.bins
        a = (1 - 1 / k) ** t
        b = (1 - 2 / k) ** t
        return k * a * (1 - a) + k * (k - 1) * (b - a * a)


# --- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class KnwConfig:
    eps: float
    universe_bits: int = 32
    c0: int = 100
    d0: int = 4
    # an instance holding more than space_factor * P bits is discarded
    space_factor: float = 3.0

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if not 1 <= self.universe_bits <= MAX_BITS:
            raise ValueError(f"universe_bits must be in [1, {MAX_BITS}]")
        if self.c0 < 1 or self.d0 < 0 or self.space_factor <= 1:
            raise ValueError("invalid sketch constants")

    @property
    def buckets(self) -> int:
        # guard against 100 / 0.1**2 landing a hair above an integer
        return math.ceil(self.c0 / self.eps**2 * (1 - 1e-12))

    @property
    def shift(self) -> int:
        return math.ceil(math.log2(1 / self.eps**2) * (1 - 1e-12)) + self.d0

    @property
    def h4_degree(self) -> int:
        return h4_degree(self.buckets)

    @property
    def field_elements(self) -> int:
        """Field elements consumed by one instance's three hashes."""
        return H1_DEGREE + H3_DEGREE + self.h4_degree

    @property
    def space_budget(self) -> int:
        return math.floor(self.space_factor * self.buckets)

    def target_offset(self, oracle_level: int) -> int:
        return max(0, oracle_level - self.shift)


def _pack_config(w: BitWriter, c: KnwConfig) -> None:
    w.write(c.universe_bits, 8)
    w.write(int.from_bytes(struct.pack(">d", c.eps), "big"), 64)
    w.write(c.c0, 16)
    w.write(c.d0, 8)
    w.write(int.from_bytes(struct.pack(">d", c.space_factor), "big"), 64)


def _unpack_config(r: BitReader) -> KnwConfig:
    ub = r.read(8)
    eps = struct.unpack(">d", r.read(64).to_bytes(8, "big"))[0]
    c0 = r.read(16)
    d0 = r.read(8)
    sf = struct.unpack(">d", r.read(64).to_bytes(8, "big"))[0]
    try:
        return KnwConfig(eps, ub, c0, d0, sf)
    except ValueError as e:
        raise DecodeError(str(e)) from e


def write_counters(w: BitWriter, row: np.ndarray) -> None:
    """Occupancy bitmap followed by gamma(c + 1) for each occupied counter."""
    occupied = row >= 0
    w.write_flags(occupied)
    w.write_gamma_many(row[occupied] + 1)


def read_counters(r: BitReader, buckets: int, universe_bits: int) -> np.ndarray:
    occupied = r.read_flags(buckets)
    row = np.full(buckets, -1, np.int64)
    vals = r.read_gamma_many(int(occupied.sum())) - 1
    if vals.size and vals.max() > universe_bits:
        raise DecodeError("counter exceeds the level range")
    row[occupied] = vals
    return row


def counter_bits(row: np.ndarray) -> int:
    # counters are small, so frexp gives exact bit lengths
    _, blen = np.frexp(row[row >= 0] + 1.0)
    return row.shape[0] + int(np.sum(2 * blen.astype(np.int64) - 1))


# --- instance bank ---------------------------------------------------------


def combine_estimates(estimates, group_size: int) -> float:
    """Lower median over groups of the lower median of each group's usable values.

    ``None`` marks an instance that cannot answer.  Returns NaN if no group
    has a usable value.
    """
    meds = []
    for g in range(0, len(estimates), group_size):
        live = sorted(e for e in estimates[g : g + group_size] if e is not None)
        if live:
            meds.append(live[(len(live) - 1) // 2])
    if not meds:
        return math.nan
    return sorted(meds)[(len(meds) - 1) // 2]


@dataclass
class StreamTrace:
    """Per-element outputs of one batch update."""

    oracle_level: np.ndarray
    estimate: np.ndarray
    space_bits: np.ndarray | None = None


class KnwBank:
    """Several sketch instances that share one oracle and one offset.

    Estimates are combined as the lower median over groups of
    ``group_size`` consecutive instances of the lower median of each
    group's live members.
    """

    def __init__(
        self,
        config: KnwConfig,
        oracle: ConstantTracker,
        field_elements: np.ndarray,
        group_size: int | None = None,
        space_budget: int | None = None,
    ):
        if oracle.universe_bits != config.universe_bits:
            raise ValueError("oracle and sketch universes differ")
        fe = np.asarray(field_elements, dtype=np.uint64)
        if fe.ndim != 2 or fe.shape[1] != config.field_elements:
            raise ValueError(f"expected rows of {config.field_elements} field elements")
        if fe.size and int(fe.max()) >= MERSENNE61:
            raise ValueError("field elements must be reduced mod 2**61 - 1")
        self.config = config
        self.oracle = oracle
        r = fe.shape[0]
        self.group_size = r if group_size is None else group_size
        if r == 0 or r % self.group_size:
            raise ValueError("instance count must be a positive multiple of the group size")
        self.space_budget = config.space_budget if space_budget is None else space_budget
        self.h1 = np.ascontiguousarray(fe[:, :H1_DEGREE])
        self.h3 = np.ascontiguousarray(fe[:, H1_DEGREE : H1_DEGREE + H3_DEGREE])
        self.h4 = np.ascontiguousarray(fe[:, H1_DEGREE + H3_DEGREE :])
        # transposed copies feed the compiled loop
        self._ht = [np.ascontiguousarray(h.T) for h in (self.h1, self.h3, self.h4)]
        p = config.buckets
        self.counters = np.full((r, p), -1, np.int64)
        self.q = np.zeros(r, np.int64)
        self.wbits = np.full(r, p, np.int64)
        self.alive = np.ones(r, np.bool_)
        self.dstate = np.zeros(1, np.int64)

    @property
    def size(self) -> int:
        return self.counters.shape[0]

    @property
    def offset(self) -> int:
        return int(self.dstate[0])

    def hashes(self, r: int) -> tuple[KWiseHash, KWiseHash, KWiseHash]:
        ub, p = self.config.universe_bits, self.config.buckets
        h1 = KWiseHash(tuple(int(c) for c in self.h1[r]), universe_bits=ub, out_bits=ub)
        h3 = KWiseHash(
            tuple(int(c) for c in self.h3[r]), universe_bits=ub, out_bits=MAX_BITS, out_range=p * p
        )
        h4 = KWiseHash(
            tuple(int(c) for c in self.h4[r]),
            universe_bits=(p * p - 1).bit_length(),
            out_bits=MAX_BITS,
            out_range=p,
        )
        return h1, h3, h4

    def feed(self, xs: Iterable[int], track_space: bool = False) -> StreamTrace:
        xs = np.ascontiguousarray(np.asarray(xs, dtype=np.uint64).ravel())
        ub = self.config.universe_bits
        if xs.size and int(xs.max()) >> ub:
            raise ValueError(f"element outside the {ub}-bit universe")
        n = xs.shape[0]
        levels = np.empty(n, np.int64)
        est = np.full(n, np.nan)
        wtrace = np.full((n if track_space else 0, self.size), -1, np.int64)
        done = _jit.run_stream(
            xs, ub, *self.oracle.kernel_args(),
            *self._ht, self.config.buckets, self.counters, self.q, self.wbits,
            self.alive, self.dstate, self.config.shift, self.space_budget, self.group_size,
            levels, est, wtrace,
        )
        if done < n:
            raise OracleUnavailable(f"oracle lost its last group at element index {done}")
        return StreamTrace(levels, est, wtrace if track_space else None)

    def rebase(self, new_offset: int) -> None:
        """Raise the offset to ``new_offset``, shifting live counters down."""
        d = self.offset
        if new_offset < d:
            raise ValueError("the offset never decreases")
        delta = new_offset - d
        for r in np.flatnonzero(self.alive):
            row = self.counters[r]
            row[:] = np.maximum(row - delta, -1)
            row[row < -1] = -1
            self.q[r] = int((row >= 0).sum())
            self.wbits[r] = counter_bits(row)
            if self.wbits[r] > self.space_budget:
                self.alive[r] = False
        self.dstate[0] = new_offset

    def instance_estimate(self, r: int) -> float:
        p = self.config.buckets
        if self.q[r] >= p:
            raise SaturationError(f"all {p} buckets of instance {r} are occupied")
        return phi_inverse(p, int(self.q[r])) * 2.0 ** self.offset

    def estimates(self) -> list[float | None]:
        """Per-instance estimate; None for discarded or saturated instances."""
        out: list[float | None] = []
        for r in range(self.size):
            if not self.alive[r] or self.q[r] >= self.config.buckets:
                out.append(None)
            else:
                out.append(self.instance_estimate(r))
        return out

    def query(self) -> float:
        """Combined estimate; NaN when no instance can answer."""
        return combine_estimates(self.estimates(), self.group_size)

    def write_state(self, w: BitWriter) -> None:
        w.write(self.offset, 8)
        for r in range(self.size):
            w.write(int(self.alive[r]), 1)
            if self.alive[r]:
                write_counters(w, self.counters[r])

    def read_state(self, r: BitReader) -> None:
        self.dstate[0] = r.read(8)
        p = self.config.buckets
        for i in range(self.size):
            if r.read(1):
                row = read_counters(r, p, self.config.universe_bits)
                self.counters[i] = row
                self.q[i] = int((row >= 0).sum())
                self.wbits[i] = counter_bits(row)
            else:
                self.alive[i] = False


# --- single sketch ---------------------------------------------------------

_MAGIC = b"F0KN"
_VERSION = 1


class KnwSketch:
    """One sketch instance with its own oracle."""

    def __init__(self, config: KnwConfig, oracle: ConstantTracker, field_elements):
        self._bank = KnwBank(
            config, oracle, np.asarray(field_elements, np.uint64).reshape(1, -1), space_budget=2**62
        )

    @classmethod
    def snapshot(cls, bank: KnwBank, r: int) -> "KnwSketch":
        """Detached copy of instance ``r`` of ``bank`` (the oracle stays shared)."""
        fe = np.concatenate([bank.h1[r], bank.h3[r], bank.h4[r]])
        s = cls(bank.config, bank.oracle, fe)
        b = s._bank
        b.counters[0] = bank.counters[r]
        b.q[0], b.wbits[0], b.alive[0] = bank.q[r], bank.wbits[r], bank.alive[r]
        b.dstate[:] = bank.dstate
        return s

    @classmethod
    def build(
        cls,
        eps: float,
        universe_bits: int = 32,
        seed: int = 0,
        *,
        oracle_delta: float = 2.0**-10,
        c0: int = 100,
        d0: int = 4,
    ) -> "KnwSketch":
        config = KnwConfig(eps, universe_bits, c0, d0)
        rng = np.random.default_rng(seed)
        fe = rng.integers(0, MERSENNE61, size=config.field_elements, dtype=np.uint64)
        oracle_seed = int(rng.integers(0, 2**63))
        oracle = ConstantTracker.build(TrackerConfig(universe_bits, oracle_delta), oracle_seed)
        return cls(config, oracle, fe)

    @property
    def config(self) -> KnwConfig:
        return self._bank.config

    @property
    def oracle(self) -> ConstantTracker:
        return self._bank.oracle

    @property
    def P(self) -> int:
        return self.config.buckets

    @property
    def eps(self) -> float:
        return self.config.eps

    @property
    def d0(self) -> int:
        return self.config.d0

    @property
    def counters(self) -> np.ndarray:
        return self._bank.counters[0]

    @property
    def offset_D(self) -> int:
        return self._bank.offset

    @property
    def occupied(self) -> int:
        return int(self._bank.q[0])

    @property
    def h1(self) -> KWiseHash:
        return self._bank.hashes(0)[0]

    @property
    def h3(self) -> KWiseHash:
        return self._bank.hashes(0)[1]

    @property
    def h4(self) -> KWiseHash:
        return self._bank.hashes(0)[2]

    def bucket(self, x: int) -> int:
        return self.h4(self.h3(x))

    def update_many(self, xs: Iterable[int], track_space: bool = False) -> StreamTrace:
        return self._bank.feed(xs, track_space)

    def update(self, x: int) -> "KnwSketch":
        self._bank.feed([x])
        return self

    def rebase(self, new_offset: int) -> None:
        self._bank.rebase(new_offset)

    def query(self) -> float:
        return self._bank.instance_estimate(0)

    def space_bits(self) -> int:
        return int(self._bank.wbits[0])

    def to_bytes(self) -> bytes:
        w = BitWriter()
        w.write(int.from_bytes(_MAGIC, "big"), 32)
        w.write(_VERSION, 8)
        _pack_config(w, self.config)
        for arr in (self._bank.h1, self._bank.h3, self._bank.h4):
            for c in arr[0]:
                w.write(int(c), MAX_BITS)
        w.write_bits(self.oracle.to_bits())
        self._bank.write_state(w)
        b = w.getbits()
        return len(b).to_bytes(4, "big") + b.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "KnwSketch":
        if len(data) < 4:
            raise DecodeError("truncated sketch")
        r = BitReader(Bits.from_bytes(data[4:], int.from_bytes(data[:4], "big")))
        if r.read(32).to_bytes(4, "big") != _MAGIC or r.read(8) != _VERSION:
            raise DecodeError("not a sketch of a supported version")
        config = _unpack_config(r)
        fe = [r.read(MAX_BITS) for _ in range(config.field_elements)]
        if any(v >= MERSENNE61 for v in fe):
            raise DecodeError("hash coefficient outside the field")
        oracle = ConstantTracker.read_bits(r)
        s = cls(config, oracle, fe)
        s._bank.read_state(r)
        if r.remaining:
            raise DecodeError("trailing bits after sketch")
        return s


def knw_update(s: KnwSketch, x: int) -> KnwSketch:
    return s.update(x)


def knw_query(s: KnwSketch) -> float:
    return s.query()


def knw_space_bits(s: KnwSketch) -> int:
    return s.space_bits()
