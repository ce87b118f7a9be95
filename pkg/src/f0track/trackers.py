"""High-accuracy estimation and (1 + eps) strong tracking.

Both assemblies run many sketch instances against one shared
constant-factor oracle, which is given half the failure budget.  Instance
seeds come from an expander-walk averaging sampler when eps is small and
from the grouped sampler Xi otherwise.  Queries take the lower median of
live instances (per group, then across groups).
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .bits import BitReader, Bits, BitWriter, SeedBits
from .errors import AllDiscarded, DecodeError
from .fm_core import ConstantTracker, TrackerConfig
from .hashing import MAX_BITS, MERSENNE61, split_seed
from .knw import KnwBank, KnwConfig, KnwSketch, StreamTrace
from .pseudorandom import (
    DEFAULT_STRIDE,
    XiSampler,
    averaging_sample,
    averaging_sample_bits,
    default_xi_shape,
)


class Mode(enum.Enum):
    SMALL_EPS = 0
    LARGE_EPS = 1


def eps_threshold(universe_bits: int) -> float:
    """``(1 / ln n) ** (1/4)`` for ``n = 2**universe_bits``."""
    return (1.0 / (universe_bits * math.log(2))) ** 0.25


def select_mode(eps: float, universe_bits: int) -> Mode:
    return Mode.SMALL_EPS if eps <= eps_threshold(universe_bits) else Mode.LARGE_EPS


@dataclass(frozen=True)
class HaConfig:
    eps: float
    delta: float
    universe_bits: int = 32
    # SMALL_EPS uses ceil(instance_constant * log2(1/delta)) instances
    instance_constant: float = 1.0
    c0: int = 100
    d0: int = 4
    space_factor: float = 3.0
    oracle_width_factor: float = 2.0

    def __post_init__(self):
        if not 0 < self.eps < 0.5:
            raise ValueError("eps must lie in (0, 1/2)")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.instance_constant <= 0:
            raise ValueError("instance_constant must be positive")

    @property
    def knw(self) -> KnwConfig:
        return KnwConfig(self.eps, self.universe_bits, self.c0, self.d0, self.space_factor)

    @property
    def oracle(self) -> TrackerConfig:
        return TrackerConfig(
            self.universe_bits, self.delta / 2, width_factor=self.oracle_width_factor
        )

    @property
    def mode(self) -> Mode:
        return select_mode(self.eps, self.universe_bits)

    def small_eps_count(self) -> int:
        return max(1, math.ceil(self.instance_constant * math.log2(1 / self.delta)))

    def large_eps_budget(self) -> int:
        return math.ceil(math.sqrt(self.universe_bits) + math.log2(1 / self.delta))


def _rows(elements: Iterable[int], per_instance: int) -> np.ndarray:
    rows = [[c % MERSENNE61 for c in split_seed(e, per_instance)] for e in elements]
    return np.array(rows, dtype=np.uint64).reshape(-1, per_instance)


_MAGIC = b"F0HA"
_VERSION = 1


class HighAccuracyEstimator:
    """Median of sketch instances sharing one oracle; see :func:`ha_build`."""

    def __init__(
        self,
        config: HaConfig,
        mode: Mode,
        oracle: ConstantTracker,
        seeds: tuple[SeedBits, ...],
        count: int,
    ):
        self.config = config
        self.mode = mode
        self.seeds = seeds
        knw = config.knw
        bits = knw.field_elements * MAX_BITS
        if mode is Mode.SMALL_EPS:
            (seed,) = seeds
            elements = averaging_sample(seed, count, bits)
            group = count
        else:
            self.sampler = _xi(seeds, count, bits)
            elements = [e for g in self.sampler.groups() for e in g]
            group = self.sampler.w2
        self.bank = KnwBank(knw, oracle, _rows(elements, knw.field_elements), group)
        self.count = count

    @classmethod
    def assemble(
        cls, config: HaConfig, master_seed: int, mode: Mode | None = None, count: int | None = None
    ) -> "HighAccuracyEstimator":
        mode = config.mode if mode is None else mode
        rng = np.random.default_rng(master_seed)
        oracle = ConstantTracker.build(config.oracle, int(rng.integers(0, 2**63)))
        bits = config.knw.field_elements * MAX_BITS
        if mode is Mode.SMALL_EPS:
            count = config.small_eps_count() if count is None else count
            seeds = (SeedBits.random(rng, averaging_sample_bits(count, bits)),)
        else:
            count = config.large_eps_budget() if count is None else count
            x = XiSampler.from_rng(rng, count, bits)
            seeds = (x.seed_s1, x.seed_s2)
        return cls(config, mode, oracle, seeds, count)

    # views ---------------------------------------------------------------
    @property
    def oracle(self) -> ConstantTracker:
        return self.bank.oracle

    @property
    def instance_count(self) -> int:
        return self.bank.size

    @property
    def discarded(self) -> np.ndarray:
        return ~self.bank.alive

    @property
    def instances(self) -> list[KnwSketch]:
        """Detached snapshots of every instance."""
        return [KnwSketch.snapshot(self.bank, r) for r in range(self.bank.size)]

    # updates and queries ---------------------------------------------------
    def update_many(self, xs: Iterable[int], track_space: bool = False) -> StreamTrace:
        return self.bank.feed(xs, track_space)

    def update(self, x: int) -> "HighAccuracyEstimator":
        self.bank.feed([x])
        return self

    def query(self) -> float:
        v = self.bank.query()
        if math.isnan(v):
            raise AllDiscarded("no instance can answer")
        return v

    def space_bits(self) -> int:
        return len(self.to_bits())

    # persistence ---------------------------------------------------------
    def to_bits(self) -> Bits:
        c = self.config
        w = BitWriter()
        w.write(int.from_bytes(_MAGIC, "big"), 32)
        w.write(_VERSION, 8)
        w.write(c.universe_bits, 8)
        for v in (c.eps, c.delta, c.instance_constant, c.space_factor, c.oracle_width_factor):
            w.write(int.from_bytes(struct.pack(">d", v), "big"), 64)
        w.write(c.c0, 16)
        w.write(c.d0, 8)
        w.write(self.mode.value, 1)
        w.write(self.count, 16)
        for s in self.seeds:
            w.write(s.value, s.length)
        w.write_bits(self.oracle.to_bits())
        self.bank.write_state(w)
        return w.getbits()

    def to_bytes(self) -> bytes:
        b = self.to_bits()
        return len(b).to_bytes(4, "big") + b.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "HighAccuracyEstimator":
        if len(data) < 4:
            raise DecodeError("truncated estimator")
        r = BitReader(Bits.from_bytes(data[4:], int.from_bytes(data[:4], "big")))
        if r.read(32).to_bytes(4, "big") != _MAGIC or r.read(8) != _VERSION:
            raise DecodeError("not an estimator of a supported version")
        ub = r.read(8)
        eps, delta, ic, sf, owf = (
            struct.unpack(">d", r.read(64).to_bytes(8, "big"))[0] for _ in range(5)
        )
        c0, d0 = r.read(16), r.read(8)
        try:
            config = HaConfig(eps, delta, ub, ic, c0, d0, sf, owf)
        except ValueError as e:
            raise DecodeError(str(e)) from e
        mode = Mode(r.read(1))
        count = r.read(16)
        bits = config.knw.field_elements * MAX_BITS
        if mode is Mode.SMALL_EPS:
            n = averaging_sample_bits(count, bits)
            seeds = (SeedBits(r.read(n), n),)
        else:
            w1, w2, pool = default_xi_shape(count)
            s1 = XiSampler._s1_bits(pool, bits, w2, DEFAULT_STRIDE)
            s2 = w1 * (pool.bit_length() - 1)
            seeds = (SeedBits(r.read(s1), s1), SeedBits(r.read(s2), s2))
        oracle = ConstantTracker.read_bits(r)
        h = cls(config, mode, oracle, seeds, count)
        h.bank.read_state(r)
        if r.remaining:
            raise DecodeError("trailing bits after estimator")
        return h


def _xi(seeds: tuple[SeedBits, ...], count: int, bits: int) -> XiSampler:
    w1, w2, pool = default_xi_shape(count)
    return XiSampler(seeds[0], seeds[1], count, w1, w2, pool, bits)


def ha_build(
    eps: float, delta: float, universe_bits: int, master_seed: int, **kw
) -> HighAccuracyEstimator:
    """High-accuracy estimator; the branch is chosen by comparing eps to ``(1/ln n)**0.25``."""
    return HighAccuracyEstimator.assemble(HaConfig(eps, delta, universe_bits, **kw), master_seed)


def ha_update(h: HighAccuracyEstimator, x: int) -> HighAccuracyEstimator:
    return h.update(x)


def ha_query(h: HighAccuracyEstimator) -> float:
    return h.query()


# --- strong tracking ---------------------------------------------------------


def repetitions(universe_bits: int, delta: float, a: float = 3.0) -> int:
    return math.ceil(a * (math.log2(universe_bits) + math.log2(1 / delta)))


@dataclass
class TrackReport:
    reported: np.ndarray
    raw: np.ndarray


class StrongTracker:
    """Monotone (1 + eps) tracker: a median of ``m`` repetitions, clamped upward."""

    def __init__(self, engine: HighAccuracyEstimator, last_reported: float = 0.0):
        self.engine = engine
        self.last_reported = last_reported

    @classmethod
    def build(
        cls, eps: float, delta: float, universe_bits: int, master_seed: int, a: float = 3.0, **kw
    ) -> "StrongTracker":
        config = HaConfig(eps, delta, universe_bits, **kw)
        m = repetitions(universe_bits, delta, a)
        return cls(HighAccuracyEstimator.assemble(config, master_seed, Mode.SMALL_EPS, m))

    @property
    def m(self) -> int:
        return self.engine.instance_count

    @property
    def reps(self) -> list[KnwSketch]:
        return self.engine.instances

    @property
    def oracle(self) -> ConstantTracker:
        return self.engine.oracle

    def update_many(self, xs: Iterable[int]) -> TrackReport:
        """Insert ``xs``; returns the clamped report and the raw median after each element."""
        raw = self.engine.update_many(xs).estimate
        # NaN (nothing answers) holds the previous report
        filled = np.where(np.isnan(raw), -np.inf, raw)
        rep = np.maximum.accumulate(np.concatenate([[self.last_reported], filled]))[1:]
        if rep.size:
            self.last_reported = float(rep[-1])
        return TrackReport(rep, raw)

    def update_and_report(self, x: int) -> float:
        self.update_many([x])
        return self.last_reported

    def raw_median(self) -> float:
        return self.engine.query()

    def to_bytes(self) -> bytes:
        return struct.pack(">d", self.last_reported) + self.engine.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "StrongTracker":
        if len(data) < 8:
            raise DecodeError("truncated tracker")
        return cls(HighAccuracyEstimator.from_bytes(data[8:]), struct.unpack(">d", data[:8])[0])


def st_build(eps: float, delta: float, universe_bits: int, master_seed: int, **kw) -> StrongTracker:
    return StrongTracker.build(eps, delta, universe_bits, master_seed, **kw)


def st_update_and_report(s: StrongTracker, x: int) -> tuple[StrongTracker, float]:
    return s, s.update_and_report(x)
