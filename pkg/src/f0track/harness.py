"""Stream generators, the exact oracle, Monte Carlo verifiers and the trial runner.

All randomness is derived from explicit integer seeds.  Per-trial seeds
come from ``SeedSequence([master_seed, index])`` so aggregates do not
depend on how trials are scheduled across worker processes.
"""

from __future__ import annotations

import math
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy.stats import binomtest, linregress

from . import _jit
from .errors import AllDiscarded, AllGroupsBroken, OracleCapacityError, OracleUnavailable
from .fm_core import ConstantTracker, FmEstimator, TrackerConfig
from .hashing import MERSENNE61, new_kwise
from .knw import KnwSketch, phi
from .trackers import ha_build, st_build

DEFAULT_F0_CAP = 50_000_000
MAX_MULTIPLICITY = 64

# --- streams ---------------------------------------------------------------

_UNIFORM = re.compile(r"uniform-(\d+)$")
_ZIPF = re.compile(r"zipf\(([0-9.]+)\)$")
ORDERS = ("sequential", "shuffled", "adversarial-blocks")


@dataclass(frozen=True)
class StreamSpec:
    """Shape of a synthetic stream.

    ``duplication`` is ``"none"``, ``"uniform-k"`` (every element ``k``
    times) or ``"zipf(s)"`` (the rank-``i`` element ``ceil(64 / i**s)``
    times).  ``order`` is ``"sequential"`` (round-robin over elements with
    copies left), ``"shuffled"`` or ``"adversarial-blocks"`` (all copies of
    an element back to back).
    """

    distinct_count: int
    universe_bits: int = 32
    duplication: str = "none"
    order: str = "sequential"
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.universe_bits <= 61:
            raise ValueError("universe_bits must be in [1, 61]")
        if not 0 <= self.distinct_count <= 1 << self.universe_bits:
            raise ValueError("distinct_count does not fit the universe")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")
        self.multiplicities(1)

    def multiplicities(self, n: int) -> np.ndarray:
        d = self.duplication
        if d == "none":
            return np.ones(n, np.int64)
        if m := _UNIFORM.match(d):
            k = int(m.group(1))
            if k < 1:
                raise ValueError("uniform duplication needs k >= 1")
            return np.full(n, k, np.int64)
        if m := _ZIPF.match(d):
            s = float(m.group(1))
            ranks = np.arange(1, n + 1, dtype=np.float64)
            return np.ceil(MAX_MULTIPLICITY / ranks**s).astype(np.int64)
        raise ValueError(f"unknown duplication pattern {d!r}")


def _distinct_values(rng: np.random.Generator, count: int, universe_bits: int) -> np.ndarray:
    size = 1 << universe_bits
    if count == 0:
        return np.zeros(0, np.uint64)
    if size <= 4 * count or size <= 1 << 20:
        return rng.permutation(size)[:count].astype(np.uint64)
    out = np.zeros(0, np.uint64)
    while out.size < count:
        draw = rng.integers(0, size, size=count + count // 8 + 16, dtype=np.uint64)
        both = np.concatenate([out, draw])
        _, first = np.unique(both, return_index=True)
        out = both[np.sort(first)][:count]
    return out


def gen_stream(spec: StreamSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    values = _distinct_values(rng, spec.distinct_count, spec.universe_bits)
    mult = spec.multiplicities(values.size)
    if spec.order == "adversarial-blocks":
        return np.repeat(values, mult)
    if spec.order == "shuffled":
        s = np.repeat(values, mult)
        return s[rng.permutation(s.size)]
    # round r emits, in element order, every element with more than r copies
    if np.all(mult == 1):
        return values
    idx = np.repeat(np.arange(values.size), mult)
    starts = np.cumsum(mult) - mult
    rounds = np.arange(idx.size) - starts[idx]
    order = np.lexsort((idx, rounds))
    return values[idx[order]]


def exact_f0(stream: Iterable[int], cap: int = DEFAULT_F0_CAP) -> int:
    """Distinct count through an explicit set; refuses to hold more than ``cap`` values."""
    seen: set[int] = set()
    if isinstance(stream, np.ndarray):
        for chunk in np.array_split(stream, max(1, stream.size // 1_000_000)):
            seen.update(chunk.tolist())
            if len(seen) > cap:
                raise OracleCapacityError(f"more than {cap} distinct values")
        return len(seen)
    for x in stream:
        seen.add(x)
        if len(seen) > cap:
            raise OracleCapacityError(f"more than {cap} distinct values")
    return len(seen)


def running_f0(stream: np.ndarray) -> np.ndarray:
    """Exact distinct count after each element."""
    stream = np.asarray(stream)
    mark = np.zeros(stream.size, np.int64)
    if stream.size:
        _, first = np.unique(stream, return_index=True)
        mark[first] = 1
    return np.cumsum(mark)


def first_reaching(f0: np.ndarray, targets: Iterable[int]) -> dict[int, int]:
    """Index at which the running count first equals each reachable target."""
    out = {}
    for v in sorted(set(targets)):
        if 1 <= v <= (f0[-1] if f0.size else 0):
            out[v] = int(np.searchsorted(f0, v))
    return out


# --- trials ----------------------------------------------------------------

MODES = ("constant", "knw", "high-accuracy", "strong-tracking")


@dataclass(frozen=True)
class AlgoConfig:
    mode: str
    eps: float = 0.1
    delta: float = 2.0**-7
    universe_bits: int = 32
    checkpoints: tuple[int, ...] = ()
    # knw: W above space_constant / eps**2 counts as a space excursion
    space_constant: float = 40.0
    timestops_slack: float = 4.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def tolerance(self) -> tuple[float, float]:
        """(allowed under-error, allowed over-error) in the mode's error metric."""
        if self.mode == "constant":
            return 3.0, 3.0
        if self.mode == "strong-tracking":
            return 1 - (1 - self.eps) ** 2, (1 + self.eps) ** 2 - 1
        return self.eps, self.eps


@dataclass
class TrialReport:
    index: int
    seeds: dict
    exact: int
    estimate: float
    error_metric: str
    final_rel_error: float
    max_rel_error_over_time: float
    max_over_error: float
    max_under_error: float
    tolerance: tuple[float, float]
    space_trace: list[tuple[int, int]]
    success: bool
    extra: dict = field(default_factory=dict)
    runtime_ms: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tolerance"] = list(self.tolerance)
        d["space_trace"] = [list(p) for p in self.space_trace]
        return d


def trial_seeds(master_seed: int, index: int) -> dict:
    s = np.random.SeedSequence([master_seed, index]).generate_state(2, np.uint64)
    return {"stream": int(s[0] >> np.uint64(1)), "algorithm": int(s[1] >> np.uint64(1))}


def _signed_errors(est: np.ndarray, f0: np.ndarray, metric: str) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore", invalid="ignore"):
        if metric == "log2-factor":
            e = np.log2(np.where(est > 0, est, np.nan) / f0)
            e = np.where(np.isnan(e), np.inf, e)
            return np.maximum(e, 0), np.maximum(-e, 0)
        r = np.where(np.isnan(est), np.inf, est / f0 - 1)
        under = np.where(np.isnan(est), np.inf, np.maximum(-r, 0))
        return np.maximum(r, 0), under


def _geometric_points(f0_final: int, ratio: float = 1.2) -> list[int]:
    pts, v = [], 1.0
    while v <= f0_final:
        pts.append(int(math.ceil(v)))
        v *= ratio
    return sorted(set(pts + [f0_final]))


def run_trial(
    algo: AlgoConfig, spec: StreamSpec, index: int, master_seed: int, timing: bool = False
) -> TrialReport:
    t0 = time.perf_counter()
    seeds = trial_seeds(master_seed, index)
    sspec = StreamSpec(
        spec.distinct_count, spec.universe_bits, spec.duplication, spec.order,
        int(np.random.SeedSequence([spec.seed, seeds["stream"]]).generate_state(1)[0]),
    )
    xs = gen_stream(sspec)
    f0 = running_f0(xs)
    exact = int(f0[-1]) if f0.size else 0
    runner = {
        "constant": _constant_trial,
        "knw": _knw_trial,
        "high-accuracy": _ha_trial,
        "strong-tracking": _st_trial,
    }[algo.mode]
    rep = runner(algo, xs, f0, seeds["algorithm"])
    rep.index, rep.seeds, rep.exact = index, seeds, exact
    lo, hi = algo.tolerance()
    rep.tolerance = (lo, hi)
    rep.max_rel_error_over_time = max(rep.max_over_error, rep.max_under_error)
    rep.success = rep.success and rep.max_over_error <= hi and rep.max_under_error <= lo
    if timing:
        rep.runtime_ms = (time.perf_counter() - t0) * 1e3
    return rep


def _blank(metric: str) -> TrialReport:
    return TrialReport(0, {}, 0, 0.0, metric, 0.0, 0.0, 0.0, 0.0, (0.0, 0.0), [], True)


def _final_rel(est: float, exact: int) -> float:
    if exact == 0:
        return 0.0 if est == 0 else math.inf
    return abs(est - exact) / exact


def _constant_trial(algo, xs, f0, seed) -> TrialReport:
    rep = _blank("log2-factor")
    t = ConstantTracker.build(TrackerConfig(algo.universe_bits, algo.delta), seed)
    n_final = int(f0[-1]) if f0.size else 0
    points = first_reaching(f0, [1 << k for k in range(n_final.bit_length())] + list(algo.checkpoints))
    est = np.zeros(len(points))
    truth = np.array(list(points.keys()), np.float64)
    prev = k = 0
    try:
        for k, (v, i) in enumerate(points.items()):
            t.update_many(xs[prev : i + 1])
            prev = i + 1
            est[k] = t.query()
            rep.space_trace.append((i + 1, t.persisted_bits()))
        t.update_many(xs[prev:])
        rep.estimate = t.query()
    except AllGroupsBroken:
        rep.success = False
        rep.extra["all_broken"] = True
        rep.estimate = math.nan
        est[k:] = math.nan
    over, under = _signed_errors(est, truth, "log2-factor")
    rep.max_over_error = float(over.max(initial=0.0))
    rep.max_under_error = float(under.max(initial=0.0))
    rep.final_rel_error = _final_rel(rep.estimate, n_final)
    rep.extra.update(
        broken_groups=t.broken_count,
        groups=t.w1,
        half_broken=bool(2 * t.broken_count >= t.w1),
        cap_bits=t.cap,
        max_persisted_bits=t.max_persisted_bits,
        within_cap=bool(t.max_persisted_bits <= t.cap),
        doubling_estimates={str(v): float(e) for v, e in zip(points, est)},
    )
    return rep


def _checkpoint_errors(algo, est_trace, f0, rep) -> None:
    pts = first_reaching(f0, algo.checkpoints)
    cps = {}
    for v, i in pts.items():
        e = float(est_trace[i])
        cps[str(v)] = {"estimate": e, "rel_error": _final_rel(e, v), "ok": _final_rel(e, v) <= algo.eps}
    rep.extra["checkpoints"] = cps


def _knw_trial(algo, xs, f0, seed) -> TrialReport:
    rep = _blank("relative")
    s = KnwSketch.build(algo.eps, algo.universe_bits, seed, oracle_delta=algo.delta)
    try:
        tr = s.update_many(xs, track_space=True)
    except OracleUnavailable:
        rep.success = False
        rep.extra["oracle_unavailable"] = True
        return rep
    n_final = int(f0[-1]) if f0.size else 0
    rep.estimate = float(tr.estimate[-1]) if xs.size else 0.0
    rep.final_rel_error = _final_rel(rep.estimate, n_final)
    over, under = _signed_errors(np.array([rep.estimate]), np.array([max(n_final, 1)]), "relative")
    rep.max_over_error, rep.max_under_error = float(over[0]), float(under[0])
    wtrace = tr.space_bits[:, 0] if xs.size else np.zeros(0, np.int64)
    pts = first_reaching(f0, _geometric_points(n_final))
    rep.space_trace = [(i + 1, int(wtrace[i])) for i in pts.values()]
    threshold = algo.space_constant / algo.eps**2
    p = s.P
    bad_pairs = 0
    for (v1, i1) in pts.items():
        for (v2, i2) in pts.items():
            if i1 < i2 and 2 * v1 >= v2 and wtrace[i1] > wtrace[i2] + algo.timestops_slack * p:
                bad_pairs += 1
    final_w = int(wtrace[-1]) if xs.size else p
    rep.extra.update(
        buckets=p,
        final_space_bits=final_w,
        excess_space_bits=final_w - p,
        space_over_threshold=bool(final_w > threshold),
        max_space_bits=int(wtrace.max(initial=p)),
        timestops_violations=bad_pairs,
        offset=s.offset_D,
        occupied=s.occupied,
    )
    _checkpoint_errors(algo, tr.estimate, f0, rep)
    return rep


def _ha_trial(algo, xs, f0, seed) -> TrialReport:
    rep = _blank("relative")
    h = ha_build(algo.eps, algo.delta, algo.universe_bits, seed)
    n_final = int(f0[-1]) if f0.size else 0
    try:
        tr = h.update_many(xs)
        rep.estimate = h.query()
    except (OracleUnavailable, AllDiscarded) as e:
        rep.success = False
        rep.extra["error"] = type(e).__name__
        rep.estimate = math.nan
        tr = None
    rep.final_rel_error = _final_rel(rep.estimate, n_final)
    over, under = _signed_errors(np.array([rep.estimate]), np.array([max(n_final, 1)]), "relative")
    rep.max_over_error, rep.max_under_error = float(over[0]), float(under[0])
    bits = h.space_bits()
    rep.space_trace = [(int(xs.size), bits)]
    disc = int(h.discarded.sum())
    rep.extra.update(
        mode=h.mode.name,
        instances=h.instance_count,
        discarded=disc,
        half_discarded=bool(2 * disc > h.instance_count),
        serialized_bits=bits,
    )
    if tr is not None:
        _checkpoint_errors(algo, tr.estimate, f0, rep)
    return rep


def _st_trial(algo, xs, f0, seed) -> TrialReport:
    rep = _blank("relative")
    s = st_build(algo.eps, algo.delta, algo.universe_bits, seed)
    try:
        tr = s.update_many(xs)
    except OracleUnavailable:
        rep.success = False
        rep.extra["oracle_unavailable"] = True
        return rep
    rep.estimate = float(tr.reported[-1]) if xs.size else 0.0
    n_final = int(f0[-1]) if f0.size else 0
    rep.final_rel_error = _final_rel(rep.estimate, n_final)
    over, under = _signed_errors(tr.reported, f0.astype(np.float64), "relative")
    rep.max_over_error = float(over.max(initial=0.0))
    rep.max_under_error = float(under.max(initial=0.0))
    raw_over, raw_under = _signed_errors(tr.raw, f0.astype(np.float64), "relative")
    bits = len(s.to_bytes()) * 8
    rep.space_trace = [(int(xs.size), bits)]
    rep.extra.update(
        repetitions=s.m,
        monotone=bool(np.all(np.diff(tr.reported) >= 0)),
        raw_max_over_error=float(raw_over.max(initial=0.0)),
        raw_max_under_error=float(raw_under.max(initial=0.0)),
        clamp_active_steps=int(np.sum(tr.reported > np.nan_to_num(tr.raw, nan=-1.0))),
    )
    return rep


# --- aggregation -----------------------------------------------------------


def wilson_interval(failures: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(failures, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class AggregateReport:
    config: dict
    spec: dict
    master_seed: int
    trials: list[TrialReport]
    failure_rate: float
    wilson_ci: tuple[float, float]
    space_percentiles: dict
    rates: dict

    def to_dict(self, include_trials: bool = True) -> dict:
        d = {
            "config": self.config,
            "spec": self.spec,
            "master_seed": self.master_seed,
            "trial_count": len(self.trials),
            "failure_rate": self.failure_rate,
            "wilson_ci": list(self.wilson_ci),
            "space_percentiles": self.space_percentiles,
            "rates": self.rates,
        }
        if include_trials:
            d["trials"] = [t.to_dict() for t in self.trials]
        return d


def _boolean_rates(reports: Sequence[TrialReport]) -> dict:
    keys = sorted({k for r in reports for k, v in r.extra.items() if isinstance(v, bool)})
    rates = {k: float(np.mean([bool(r.extra.get(k, False)) for r in reports])) for k in keys}
    cps = sorted(
        {k for r in reports for k in r.extra.get("checkpoints", {})}, key=lambda s: int(s)
    )
    for k in cps:
        rates[f"checkpoint_{k}_ok"] = float(
            np.mean([r.extra.get("checkpoints", {}).get(k, {}).get("ok", False) for r in reports])
        )
    return rates


def aggregate(algo: AlgoConfig, spec: StreamSpec, master_seed: int, reports) -> AggregateReport:
    reports = sorted(reports, key=lambda r: r.index)
    fails = sum(not r.success for r in reports)
    space = np.array([r.space_trace[-1][1] if r.space_trace else 0 for r in reports], np.float64)
    pct = {f"p{q}": float(np.percentile(space, q)) for q in (50, 90, 99)}
    pct["max"] = float(space.max(initial=0))
    return AggregateReport(
        asdict(algo),
        asdict(spec),
        master_seed,
        reports,
        fails / len(reports),
        wilson_interval(fails, len(reports)),
        pct,
        _boolean_rates(reports),
    )


def _trial_job(args):
    return run_trial(*args)


def run_trials(
    algo: AlgoConfig,
    spec: StreamSpec,
    trials: int,
    master_seed: int,
    workers: int = 1,
    timing: bool = False,
) -> AggregateReport:
    """Run ``trials`` independent trials; results do not depend on ``workers``."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    jobs = [(algo, spec, i, master_seed, timing) for i in range(trials)]
    if workers <= 1:
        reports = [_trial_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as ex:
            reports = list(ex.map(_trial_job, jobs, chunksize=max(1, trials // (4 * workers))))
    return aggregate(algo, spec, master_seed, reports)


# --- Monte Carlo verifiers -------------------------------------------------

BLOCK = 1000  # trials per independently seeded block


def _block_seed(seed: int, block: int) -> int:
    return int(np.random.SeedSequence([seed, block]).generate_state(1, np.uint64)[0])


def _blocked(fn, trials: int, seed: int, workers: int, *args) -> np.ndarray:
    """Concatenate ``fn(n, block_seed, *args)`` over fixed blocks of trials."""
    jobs = [
        (fn, min(BLOCK, trials - start), _block_seed(seed, start // BLOCK), args)
        for start in range(0, trials, BLOCK)
    ]
    if workers <= 1 or len(jobs) == 1:
        parts = [_run_block(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_block, jobs))
    return np.concatenate(parts)


def _run_block(job):
    fn, n, seed, args = job
    return fn(n, seed, *args)


@njit(cache=True)
def _count_nonempty(balls, bins, out):
    stamp = np.zeros(bins, np.int64)
    for i in range(balls.shape[0]):
        c = 0
        for j in range(balls.shape[1]):
            b = balls[i, j]
            if stamp[b] != i + 1:
                stamp[b] = i + 1
                c += 1
        out[i] = c


def _occupancy_counts(n: int, seed: int, bins: int, t: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    out = np.empty(n, np.int64)
    _count_nonempty(rng.integers(0, bins, size=(n, t), dtype=np.int64), bins, out)
    return out


def phi_mc_oracle(bins: int, t: int, trials: int, seed: int = 0, workers: int = 1) -> tuple[float, float]:
    """Mean and standard error of the nonempty-bin count for ``t`` fully random balls."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    counts = _blocked(_occupancy_counts, trials, seed, workers, bins, t)
    mean = float(counts.mean())
    se = float(counts.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return mean, se


@njit(cache=True)
def _walk_sup(coeffs, steps, mask, p_hit, out):
    scale = math.sqrt(p_hit * (1 - p_hit))
    up = (1 - p_hit) / scale
    down = -p_hit / scale
    for k in range(coeffs.shape[0]):
        s = 0.0
        best = 0.0
        for i in range(steps):
            v = _jit.poly_eval(coeffs[k], np.uint64(i), _jit._P61)
            s += up if (v & mask) == 0 else down
            if abs(s) > best:
                best = abs(s)
        out[k] = best


def _walk_samples(n: int, seed: int, T: int, degree: int) -> np.ndarray:
    coeffs = np.random.default_rng(seed).integers(0, MERSENNE61, size=(n, degree), dtype=np.uint64)
    out = np.empty(n)
    _walk_sup(coeffs, T, np.uint64(2 * T - 1), 1.0 / (2 * T), out)
    return out / math.sqrt(T)


def verify_random_walk_lemma(
    T: int, trials: int, lambdas: Sequence[float], seed: int = 0, degree: int = 4,
    workers: int = 1,
) -> dict:
    """Tail of ``sup_t |S_t| / sqrt(T)`` for 4-wise independent heavy-tailed steps.

    Step ``i`` is ``(B_i - p) / sqrt(p (1 - p))`` with ``B_i`` the event that
    the low ``log2(2T)`` bits of ``h(i)`` vanish, so ``p = 1 / (2T)``.
    The fitted constant is the smallest ``c`` with ``tail(lam) <= c / lam**2``
    for every ``lam``.
    """
    if T < 1 or T & (T - 1):
        raise ValueError("T must be a power of two")
    sups = _blocked(_walk_samples, trials, seed, workers, T, degree)
    tails = {float(lam): float(np.mean(sups > lam)) for lam in lambdas}
    fitted = max((lam**2 * tail for lam, tail in tails.items()), default=0.0)
    return {"T": T, "trials": trials, "degree": degree, "tails": tails, "fitted_c": fitted}


@njit(cache=True)
def _occupancy_sup(coeffs, balls, bins, expected, out):
    occ = np.zeros(bins, np.int64)
    kb = np.uint64(bins)
    for k in range(coeffs.shape[0]):
        c = 0
        best = 0.0
        for i in range(balls):
            b = np.int64(_jit.poly_eval(coeffs[k], np.uint64(i), _jit._P61) % kb)
            if occ[b] != k + 1:
                occ[b] = k + 1
                c += 1
            d = abs(c - expected[i + 1])
            if d > best:
                best = d
        out[k] = best


def _bins_samples(n: int, seed: int, K: int, R: int, q: int) -> np.ndarray:
    coeffs = np.random.default_rng(seed).integers(0, MERSENNE61, size=(n, q), dtype=np.uint64)
    expected = np.array([phi(K, t) for t in range(R + 1)])
    out = np.empty(n)
    _occupancy_sup(coeffs, R, K, expected, out)
    return out / math.sqrt(R)


def verify_balls_bins(
    K: int, R: int, q_degree: int, trials: int, seed: int = 0, workers: int = 1
) -> dict:
    """Distribution of ``sup_t |phi_t - Phi(t)| / sqrt(R)`` when a degree-q hash throws the balls."""
    if 20 * R > K:
        raise ValueError("R must be at most K/20")
    if R < 1 or q_degree < 1 or trials < 1:
        raise ValueError("R, q_degree and trials must be positive")
    sups = _blocked(_bins_samples, trials, seed, workers, K, R, q_degree)
    pct = {f"p{q}": float(np.percentile(sups, q)) for q in (50, 75, 90, 99)}
    return {"K": K, "R": R, "q": q_degree, "trials": trials, "percentiles": pct,
            "max": float(sups.max())}


def _fm_samples(n: int, seed: int, f0_log2: int, universe_bits: int, xs_seed: int) -> np.ndarray:
    xs = _distinct_values(np.random.default_rng(xs_seed), 1 << f0_log2, universe_bits)
    rng = np.random.default_rng(seed)
    out = np.empty(n, np.int64)
    for i in range(n):
        h = new_kwise(2, universe_bits, universe_bits, int(rng.integers(0, 2**63)))
        out[i] = FmEstimator(h).update_many(xs).level - f0_log2
    return out


def verify_fm_tails(
    f0_log2: int, seeds: int, lambdas: Sequence[int], seed: int = 0, universe_bits: int = 32,
    workers: int = 1,
) -> dict:
    """Empirical ``P(|Y - log2 F0| > lambda)`` over independent pairwise hashes."""
    dev = _blocked(_fm_samples, seeds, seed, workers, f0_log2, universe_bits, seed)
    tails = {int(lam): float(np.mean(np.abs(dev) > lam)) for lam in lambdas}
    return {"f0": 1 << f0_log2, "seeds": seeds, "tails": tails,
            "max_ratio_to_2^-lambda": max(t * 2.0**lam for lam, t in tails.items())}


# --- space benchmark ---------------------------------------------------------


def serialized_bits(mode: str, eps: float, delta: float, universe_bits: int, seed: int, xs) -> int:
    """Size of the persisted state after feeding ``xs``."""
    if mode == "constant":
        t = ConstantTracker.build(TrackerConfig(universe_bits, delta), seed)
        t.update_many(xs)
        return t.persisted_bits()
    if mode == "knw":
        s = KnwSketch.build(eps, universe_bits, seed, oracle_delta=delta)
        s.update_many(xs)
        return len(s.to_bytes()) * 8
    if mode == "high-accuracy":
        h = ha_build(eps, delta, universe_bits, seed)
        h.update_many(xs)
        return h.space_bits()
    s = st_build(eps, delta, universe_bits, seed)
    s.update_many(xs)
    return len(s.to_bytes()) * 8


def _bench_job(job):
    mode, eps, delta, ub, distinct, seed, timing = job
    sub = np.random.SeedSequence(seed).generate_state(2, np.uint64) >> np.uint64(1)
    xs = gen_stream(StreamSpec(distinct, ub, seed=int(sub[0])))
    t0 = time.perf_counter()
    bits = serialized_bits(mode, eps, delta, ub, int(sub[1]), xs)
    return bits, (time.perf_counter() - t0 if timing else None)


def space_bench(
    mode: str,
    eps_list: Sequence[float],
    delta_list: Sequence[float],
    distinct: int,
    trials: int,
    seed: int,
    universe_bits: int = 32,
    workers: int = 1,
    timing: bool = False,
) -> dict:
    """Mean serialized size per (eps, delta), with a least-squares fit against log2(1/delta)/eps**2."""
    grid = [(e, d) for e in eps_list for d in delta_list]
    jobs = [
        (mode, e, d, universe_bits, distinct, [seed, g, k], timing)
        for g, (e, d) in enumerate(grid)
        for k in range(trials)
    ]
    if workers <= 1:
        res = [_bench_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as ex:
            res = list(ex.map(_bench_job, jobs))
    rows = []
    for g, (e, d) in enumerate(grid):
        part = res[g * trials : (g + 1) * trials]
        row = {
            "eps": e,
            "delta": d,
            "x": math.log2(1 / d) / e**2,
            "bits": [b for b, _ in part],
            "mean_bits": float(np.mean([b for b, _ in part])),
        }
        if timing:
            row["updates_per_second"] = distinct * trials / sum(t for _, t in part)
        rows.append(row)
    x = np.array([r["x"] for r in rows])
    y = np.array([r["mean_bits"] for r in rows])
    fit = {"slope": math.nan, "intercept": math.nan, "r2": math.nan}
    if len(rows) > 2 and np.ptp(x) > 0:
        lr = linregress(x, y)
        fit = {"slope": float(lr.slope), "intercept": float(lr.intercept), "r2": float(lr.rvalue**2)}
    return {"mode": mode, "universe_bits": universe_bits, "distinct": distinct, "trials": trials,
            "seed": seed, "grid": rows, "fit": fit}
