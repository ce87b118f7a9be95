import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from f0track.bits import Bits, gamma_length
from f0track.errors import AllGroupsBroken, DecodeError
from f0track.fm_core import (
    BROKEN,
    HEADER_BITS,
    ConstantTracker,
    FmEstimator,
    TrackerConfig,
    fm_update,
    group_decode,
    group_encode,
    group_encoded_size,
    median_width,
    tracker_query,
    tracker_update,
)
from f0track.harness import AlgoConfig, StreamSpec, run_trials
from f0track.hashing import KWiseHash, lsb, new_kwise
from f0track.pseudorandom import XiSampler


@pytest.fixture(scope="module")
def tracker_seed():
    return 1234


def _find(h: KWiseHash, level: int) -> int:
    return next(x for x in range(1, 10**7) if lsb(h(x), h.out_bits) == level)


# --- single estimators -------------------------------------------------------


def test_fm_update_idempotent_and_singleton():
    h = new_kwise(2, 32, 32, seed=7)
    x = _find(h, 3)
    e = fm_update(FmEstimator(h), x)
    assert e.level == 3
    assert fm_update(e, x).level == 3


def test_fm_update_many_matches_scalar():
    h = new_kwise(2, 32, 32, seed=8)
    xs = np.random.default_rng(0).integers(0, 2**32, 500, dtype=np.uint64)
    a = FmEstimator(h).update_many(xs)
    b = FmEstimator(h)
    for x in xs.tolist():
        b.update(x)
    assert a.level == b.level


def test_fm_tail_fit():
    n, seeds = 10_000, 1000
    xs = np.random.default_rng(1).choice(2**32, n, replace=False).astype(np.uint64)
    levels = np.array([FmEstimator(new_kwise(2, 32, 32, seed=s)).update_many(xs).level for s in range(seeds)])
    dev = np.abs(levels - math.log2(n))
    fitted = max((dev > lam).mean() * 2.0**lam for lam in range(2, 9))
    assert fitted <= 4


# --- codec -------------------------------------------------------------------


def test_encode_all_equal():
    bits = group_encode([7] * 8, 10_000)
    assert len(bits) == median_width(61) + 8
    assert group_decode(bits, 8) == [7] * 8


def test_encode_deviations_example():
    levels = [3, 3, 4, 3, 5]
    bits = group_encode(levels, 10_000)
    w = median_width(61)
    assert bits.value >> (len(bits) - w) == 3 + 1  # stored shifted by one for level -1
    # zigzag [0,0,2,0,4] -> gamma codes of [1,1,3,1,5]
    assert len(bits) == w + sum(gamma_length(v) for v in (1, 1, 3, 1, 5))
    assert group_decode(bits, 5) == levels


def test_encode_broken_example():
    # median 0; deviation 60 -> zigzag 120 -> gamma(121) takes 13 bits
    assert gamma_length(121) == 13
    assert group_encoded_size([0, 60, 0, 0]) == median_width(61) + 3 + 13
    assert group_encode([0, 60, 0, 0], 16) is BROKEN


def test_decode_errors():
    bits = group_encode([3, 3, 4], 1000)
    with pytest.raises(DecodeError):
        group_decode(Bits(bits.value << 1, len(bits) + 1), 3)
    with pytest.raises(DecodeError):
        group_decode(Bits(bits.value >> 1, len(bits) - 1), 3)
    with pytest.raises(DecodeError):
        # median field all ones decodes to a level above the universe
        group_decode(Bits((1 << 7) - 1 << 1 | 1, 8), 1)


@given(st.lists(st.integers(-1, 61), min_size=1, max_size=40))
def test_codec_roundtrip_property(levels):
    bits = group_encode(levels, 10**6)
    assert len(bits) == group_encoded_size(levels)
    assert group_decode(bits, len(levels)) == levels


# --- tracker -----------------------------------------------------------------


def test_empty_and_duplicate(tracker_seed):
    t = ConstantTracker.build(TrackerConfig(), tracker_seed)
    assert tracker_query(t) == 0.0
    t.update_many(range(100))
    before = t.to_bytes()
    tracker_update(t, 17)
    assert t.to_bytes() == before


def test_single_estimator_query():
    cfg = TrackerConfig()
    sampler = XiSampler.from_rng(np.random.default_rng(0), 1, 122, w1=1, w2=1, pool_size=2)
    t = ConstantTracker(cfg, sampler)
    h = t.groups()[0].hashes[0]
    t.update(_find(h, 10))
    assert t.level() == 10
    assert t.query() == 1024


def test_levels_match_reference_estimators(tracker_seed):
    t = ConstantTracker.build(TrackerConfig(), tracker_seed)
    xs = np.random.default_rng(2).integers(0, 2**32, 5000, dtype=np.uint64)
    t.update_many(xs)
    for g in t.groups():
        assert not g.broken
        ref = [FmEstimator(e.hash).update_many(xs).level for e in g.estimators]
        assert list(g.levels) == ref
        assert g.encoded_size_bits == len(g.encode()) <= g.bit_budget


def test_levels_match_reference_wide_universe():
    t = ConstantTracker.build(TrackerConfig(universe_bits=61), 3)
    xs = np.random.default_rng(3).integers(0, 2**61, 3000, dtype=np.uint64)
    t.update_many(xs)
    for g in t.groups():
        assert list(g.levels) == [FmEstimator(e.hash).update_many(xs).level for e in g.estimators]


def test_monotone_trace(tracker_seed):
    t = ConstantTracker.build(TrackerConfig(), tracker_seed)
    trace = t.update_many(np.arange(20_000, dtype=np.uint64))
    assert np.all(np.diff(trace) >= 0)
    assert t.query() == 2.0 ** trace[-1]


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 2**32 - 1), max_size=200), st.randoms(use_true_random=False))
def test_permutation_and_duplication_invariance(xs, rnd):
    a = ConstantTracker.build(TrackerConfig(), 99)
    a.update_many(xs)
    dup = xs + xs[: len(xs) // 2]
    rnd.shuffle(dup)
    b = ConstantTracker.build(TrackerConfig(), 99)
    b.update_many(dup)
    assert a.to_bytes() == b.to_bytes()


def test_serialization_roundtrip(tracker_seed):
    t = ConstantTracker.build(TrackerConfig(), tracker_seed)
    t.update_many(np.arange(5000, dtype=np.uint64) * 7919)
    u = ConstantTracker.from_bytes(t.to_bytes())
    assert u.to_bytes() == t.to_bytes()
    assert u.query() == t.query()
    more = np.arange(5000, 9000, dtype=np.uint64) * 7919
    t.update_many(more)
    u.update_many(more)
    assert u.to_bytes() == t.to_bytes()
    with pytest.raises(DecodeError):
        ConstantTracker.from_bytes(t.to_bytes()[:-3])
    with pytest.raises(DecodeError):
        ConstantTracker.from_bytes(b"\x00\x00\x00\x40" + b"XXXX" + b"\x00" * 4)


def test_space_cap_exact(tracker_seed):
    t = ConstantTracker.build(TrackerConfig(), tracker_seed)
    assert t.cap == HEADER_BITS + len(t.sampler.seed_s1) + len(t.sampler.seed_s2) + t.w1 * (
        1 + TrackerConfig().c2 * t.w2
    )
    seen = t.persisted_bits()
    for x in np.random.default_rng(4).integers(0, 2**32, 400).tolist():
        t.update(x)
        seen = max(seen, t.persisted_bits())
    assert seen <= t.cap
    assert t.max_persisted_bits == seen


def test_all_groups_broken():
    t = ConstantTracker.build(TrackerConfig(c2=1), 0)
    assert t.broken_count == t.w1
    with pytest.raises(AllGroupsBroken):
        t.query()
    with pytest.raises(AllGroupsBroken):
        t.update(5)


def test_broken_is_monotone():
    t = ConstantTracker.build(TrackerConfig(c2=2), 5)
    prev = t.broken.copy()
    rng = np.random.default_rng(6)
    try:
        for _ in range(50):
            t.update_many(rng.integers(0, 2**32, 200, dtype=np.uint64))
            assert np.all(t.broken >= prev)
            prev = t.broken.copy()
    except AllGroupsBroken:
        assert t.broken.all()


def test_rejects_out_of_universe():
    t = ConstantTracker.build(TrackerConfig(universe_bits=16), 0)
    with pytest.raises(ValueError):
        t.update(1 << 16)


def test_half_broken_rate_delta_2_20():
    rep = run_trials(AlgoConfig("constant", delta=2.0**-20), StreamSpec(1 << 16), 500, 20)
    assert rep.rates["half_broken"] <= 0.01
