"""Expander walks, the walk-based averaging sampler and the grouped sampler Xi.

The graph is the 8-regular Gabber-Galil family on ``Z_m x Z_m``.  Its eight
edge labels are four affine maps and their inverses, arranged so that label
``e ^ 1`` undoes label ``e``; that makes the multigraph undirected.

Seeds are :class:`~f0track.bits.SeedBits`; every function checks it was
handed exactly as many bits as it consumes, so seed lengths can be audited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .bits import SeedBits
from .errors import SeedLengthError

DEGREE = 8
STEP_BITS = 3
# walk on the 4th power of the graph when sampling; see averaging_sample
DEFAULT_STRIDE = 4


@dataclass(frozen=True)
class ExpanderGraph:
    side: int

    def __post_init__(self):
        if self.side < 2:
            raise ValueError("graph side must be at least 2")

    @property
    def degree(self) -> int:
        return DEGREE

    @property
    def vertex_bits(self) -> int:
        """Bits to name one coordinate; only defined for power-of-two sides."""
        if self.side & (self.side - 1):
            raise ValueError("seeded walks need a power-of-two side")
        return self.side.bit_length() - 1

    def neighbor(self, v: tuple[int, int], edge: int) -> tuple[int, int]:
        return expander_neighbor(self, v, edge)

    def adjacency(self) -> np.ndarray:
        """Dense adjacency matrix counting multi-edges (small sides only)."""
        m = self.side
        adj = np.zeros((m * m, m * m), dtype=np.int64)
        for x in range(m):
            for y in range(m):
                for e in range(DEGREE):
                    u = expander_neighbor(self, (x, y), e)
                    adj[x * m + y, u[0] * m + u[1]] += 1
        return adj


def expander_neighbor(g: ExpanderGraph, v: tuple[int, int], edge: int) -> tuple[int, int]:
    if not 0 <= edge < DEGREE:
        raise ValueError(f"edge label must be in [0, {DEGREE}), got {edge}")
    m = g.side
    x, y = v
    if edge == 0:
        return (x + y) % m, y
    if edge == 1:
        return (x - y) % m, y
    if edge == 2:
        return (x + y + 1) % m, y
    if edge == 3:
        return (x - y - 1) % m, y
    if edge == 4:
        return x, (y + x) % m
    if edge == 5:
        return x, (y - x) % m
    if edge == 6:
        return x, (y + x + 1) % m
    return x, (y - x - 1) % m


def inverse_edge(edge: int) -> int:
    return edge ^ 1


def walk_seed_bits(g: ExpanderGraph, length: int) -> int:
    return 2 * g.vertex_bits + STEP_BITS * (length - 1)


def expander_walk(g: ExpanderGraph, start_seed: SeedBits, length: int) -> list[tuple[int, int]]:
    """Walk of ``length`` vertices; the seed picks the start and every edge."""
    if length < 1:
        raise ValueError("walk length must be at least 1")
    need = walk_seed_bits(g, length)
    if len(start_seed) < need:
        raise SeedLengthError(f"walk needs {need} seed bits, got {len(start_seed)}")
    b, m = g.vertex_bits, g.side
    vmask = (1 << b) - 1
    x, y = start_seed.value & vmask, (start_seed.value >> b) & vmask
    # edge labels are consecutive 3-bit fields; same moves as expander_neighbor
    bits = format(start_seed.value >> (2 * b), "b").zfill(STEP_BITS * (length - 1))[::-1]
    out = [(x, y)]
    for i in range(0, STEP_BITS * (length - 1), STEP_BITS):
        e = int(bits[i]) | int(bits[i + 1]) << 1 | int(bits[i + 2]) << 2
        c = (e >> 1) & 1
        if e < 4:
            x = (x + y + c) % m if e % 2 == 0 else (x - y - c) % m
        else:
            y = (y + x + c) % m if e % 2 == 0 else (y - x - c) % m
        out.append((x, y))
    return out


def _sampler_graph(universe_bits: int) -> ExpanderGraph:
    # odd widths walk on one extra bit and drop it again
    return ExpanderGraph(1 << ((universe_bits + 1) // 2))


def averaging_sample_bits(count: int, universe_bits: int, stride: int = DEFAULT_STRIDE) -> int:
    g = _sampler_graph(universe_bits)
    return walk_seed_bits(g, (count - 1) * stride + 1)


def averaging_sample(
    seed: SeedBits, count: int, universe_bits: int, stride: int = DEFAULT_STRIDE
) -> list[int]:
    """``count`` samples of ``[2**universe_bits]`` read off one expander walk.

    Every ``stride``-th vertex of the walk is emitted, i.e. the walk runs on
    the ``stride``-th power of the graph.  Each output is exactly uniform on
    its own; jointly they obey the expander Chernoff bound.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    g = _sampler_graph(universe_bits)
    need = walk_seed_bits(g, (count - 1) * stride + 1)
    if len(seed) != need:
        raise SeedLengthError(f"averaging sampler needs exactly {need} bits, got {len(seed)}")
    walk = expander_walk(g, seed, (count - 1) * stride + 1)
    mask = (1 << universe_bits) - 1
    m = g.side
    return [(x * m + y) & mask for x, y in walk[::stride]]


def default_xi_shape(w: int) -> tuple[int, int, int]:
    """(w1, w2, W) for a total budget of ``w`` samples."""
    w2 = max(8, math.ceil(4 * math.log2(max(w, 2))))
    w1 = math.ceil(w / w2)
    pool = 1 << max(1, (w - 1).bit_length())
    return w1, w2, pool


@dataclass(frozen=True)
class XiSampler:
    """Grouped sampler: averaging-sampled walk seeds, then uniform group picks.

    ``seed_s1`` drives an averaging sampler over the space of walk seeds and
    yields a pool of ``pool_size`` walk seeds.  ``seed_s2`` picks ``w1`` of
    them uniformly; each picked seed is expanded into an expander walk of
    ``w2`` elements of ``[2**universe_bits]``.
    """

    seed_s1: SeedBits
    seed_s2: SeedBits
    w: int
    w1: int
    w2: int
    pool_size: int
    universe_bits: int
    stride: int = DEFAULT_STRIDE
    walk_constant: float = 1.0
    test_functions: int = 2

    def __post_init__(self):
        if min(self.w, self.w1, self.w2, self.universe_bits) < 1:
            raise ValueError("sampler parameters must be positive")
        if self.pool_size < 2 or self.pool_size & (self.pool_size - 1):
            raise ValueError("pool size must be a power of two >= 2")
        if not self.w <= self.w1 * self.w2 < self.w + self.w2:
            raise ValueError(f"w1*w2 = {self.w1 * self.w2} is not within a group of w = {self.w}")
        if self.w2 < self.walk_constant * math.log2(max(self.test_functions, 1)):
            raise ValueError("groups too short for the number of test functions")
        if len(self.seed_s1) != self.s1_bits:
            raise SeedLengthError(f"seed_s1 must have {self.s1_bits} bits")
        if len(self.seed_s2) != self.s2_bits:
            raise SeedLengthError(f"seed_s2 must have {self.s2_bits} bits")

    @classmethod
    def from_rng(
        cls,
        rng: np.random.Generator,
        w: int,
        universe_bits: int,
        w1: int | None = None,
        w2: int | None = None,
        pool_size: int | None = None,
        **kw,
    ) -> "XiSampler":
        d1, d2, dp = default_xi_shape(w)
        if w2 is not None and w1 is None:
            d1 = math.ceil(w / w2)
        w1 = d1 if w1 is None else w1
        w2 = d2 if w2 is None else w2
        pool_size = dp if pool_size is None else pool_size
        stride = kw.get("stride", DEFAULT_STRIDE)
        s1 = cls._s1_bits(pool_size, universe_bits, w2, stride)
        s2 = w1 * (pool_size.bit_length() - 1)
        return cls(
            SeedBits.random(rng, s1),
            SeedBits.random(rng, s2),
            w,
            w1,
            w2,
            pool_size,
            universe_bits,
            **kw,
        )

    @staticmethod
    def _element_graph(universe_bits: int) -> ExpanderGraph:
        return _sampler_graph(universe_bits)

    @classmethod
    def _walk_seed_universe(cls, universe_bits: int, w2: int) -> int:
        return walk_seed_bits(cls._element_graph(universe_bits), w2)

    @classmethod
    def _s1_bits(cls, pool_size: int, universe_bits: int, w2: int, stride: int) -> int:
        return averaging_sample_bits(pool_size, cls._walk_seed_universe(universe_bits, w2), stride)

    @property
    def walk_seed_universe_bits(self) -> int:
        return self._walk_seed_universe(self.universe_bits, self.w2)

    @property
    def s1_bits(self) -> int:
        return self._s1_bits(self.pool_size, self.universe_bits, self.w2, self.stride)

    @property
    def s2_bits(self) -> int:
        return self.w1 * (self.pool_size.bit_length() - 1)

    @property
    def seed_length(self) -> int:
        return self.s1_bits + self.s2_bits

    @property
    def in_lemma_regime(self) -> bool:
        """Whether ``w >= log M`` (the size condition the analysis asks for)."""
        return self.w >= self.universe_bits

    def pool(self) -> list[int]:
        return averaging_sample(
            self.seed_s1, self.pool_size, self.walk_seed_universe_bits, self.stride
        )

    def picks(self) -> list[int]:
        r = self.seed_s2.reader()
        width = self.pool_size.bit_length() - 1
        return [r.take(width) for _ in range(self.w1)]

    def group_from_walk_seed(self, walk_seed: int) -> list[int]:
        g = self._element_graph(self.universe_bits)
        walk = expander_walk(g, SeedBits(walk_seed, self.walk_seed_universe_bits), self.w2)
        mask = (1 << self.universe_bits) - 1
        return [(x * g.side + y) & mask for x, y in walk]

    def groups(self) -> list[list[int]]:
        pool = self.pool()
        return [self.group_from_walk_seed(pool[i]) for i in self.picks()]


def xi_groups(x: XiSampler) -> list[list[int]]:
    return x.groups()


def c_small(seq: Sequence[int], gs: Sequence[Callable[[int], float]], C: float) -> bool:
    """True iff every test function sums to at most ``C * len(seq)`` over seq."""
    if not seq:
        raise ValueError("sequence must be nonempty")
    budget = C * len(seq)
    return all(sum(g(x) for x in seq) <= budget for g in gs)


def walk_batch(side: int, starts: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Many walks at once on a small graph; returns vertex ids ``x * side + y``.

    ``starts`` has shape (n, 2); ``edges`` has shape (n, length - 1) with
    labels in [0, 8).  Meant for Monte Carlo on sides up to ``2**31``.
    """
    x = starts[:, 0].astype(np.int64) % side
    y = starts[:, 1].astype(np.int64) % side
    n, steps = edges.shape
    out = np.empty((n, steps + 1), dtype=np.int64)
    out[:, 0] = x * side + y
    for k in range(steps):
        e = edges[:, k]
        nx, ny = x.copy(), y.copy()
        for label, (dx, dy) in enumerate(
            [(1, 0), (-1, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (0, 1), (0, -1)]
        ):
            sel = e == label
            if not sel.any():
                continue
            const = (label // 2) % 2  # labels 2,3,6,7 add or subtract 1
            if dx:
                nx[sel] = (x[sel] + dx * (y[sel] + const)) % side
            else:
                ny[sel] = (y[sel] + dy * (x[sel] + const)) % side
        x, y = nx, ny
        out[:, k + 1] = x * side + y
    return out
