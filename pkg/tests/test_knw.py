import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from f0track import _jit
from f0track.errors import DecodeError, OracleUnavailable, SaturationError
from f0track.fm_core import ConstantTracker, TrackerConfig
from f0track.harness import StreamSpec, gen_stream, phi_mc_oracle
from f0track.hashing import MERSENNE61
from f0track.knw import (
    KnwBank,
    KnwConfig,
    KnwSketch,
    OccupancyModel,
    counter_bits,
    knw_query,
    knw_space_bits,
    knw_update,
    phi,
    phi_inverse,
)

# --- occupancy ---------------------------------------------------------------


def test_phi_small_values():
    for k in (20, 1000, 10**6):
        assert phi(k, 0) == 0.0
        assert phi(k, 1) == pytest.approx(1.0, rel=1e-12)


def test_phi_monotone_and_bounded():
    k = 500
    vals = [phi(k, t) for t in range(0, 5000, 7)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert all(v <= min(t, k) + 1e-9 for v, t in zip(vals, range(0, 5000, 7)))


def test_phi_matches_monte_carlo():
    mean, se = phi_mc_oracle(1000, 50, 10**6, seed=1)
    assert abs(phi(1000, 50) - mean) <= 3 * se


def test_phi_inverse_examples():
    assert phi_inverse(1000, 0) == 0.0
    assert phi_inverse(1000, phi(1000, 37)) == pytest.approx(37, rel=1e-9)
    with pytest.raises(ValueError):
        phi_inverse(1000, 1000)


def test_phi_inverse_of_one_occupied_bucket():
    # ln(1 - q/K) / ln(1 - 1/K) is identically 1 at q = 1
    k = 1000
    assert phi_inverse(k, 1) == pytest.approx(1.0, abs=1e-12)
    series = sum((1 / k) ** j / j for j in range(1, 8)) / sum((1 / k) ** j / j for j in range(1, 8))
    assert phi_inverse(k, 1) == pytest.approx(series, abs=1e-12)


def test_composition_identity_and_bi_lipschitz():
    m = OccupancyModel(1000)
    for t in range(0, 51):
        assert m.phi_inverse(m.phi(t)) == pytest.approx(t, rel=1e-9, abs=1e-12)
    vals = [m.phi(t) for t in range(51)]
    for a in range(51):
        for b in range(a, 51):
            d = vals[b] - vals[a]
            assert 0.9 * (b - a) <= d <= (b - a) + 1e-12


def test_occupancy_model_validation_and_variance():
    with pytest.raises(ValueError):
        OccupancyModel(19)
    m = OccupancyModel(100)
    assert m.variance(0) == pytest.approx(0.0, abs=1e-9)
    assert m.variance(1) == pytest.approx(0.0, abs=1e-9)
    mean, se = phi_mc_oracle(100, 80, 200_000, seed=3)
    sd = se * math.sqrt(200_000)
    assert sd**2 == pytest.approx(m.variance(80), rel=0.02)
    assert abs(mean - m.phi(80)) <= 3 * se


# --- config and sketch basics ---------------------------------------------------


def test_config_values():
    c = KnwConfig(0.1)
    assert c.buckets == 10_000
    assert c.shift == 7 + 4
    assert c.h4_degree == 64
    assert c.target_offset(20) == 9
    assert c.target_offset(5) == 0


@pytest.fixture(scope="module")
def small_sketch_stream():
    return gen_stream(StreamSpec(20_000, seed=5))


def test_fresh_sketch():
    s = KnwSketch.build(0.1, seed=1)
    assert knw_space_bits(s) == s.P == 10_000
    assert knw_query(s) == 0.0
    assert s.offset_D == 0
    assert np.all(s.counters == -1)


def test_single_zero_counter():
    s = KnwSketch.build(0.1, seed=2)
    x = next(x for x in range(1, 10**6) if s.h1(x) & 1)
    knw_update(s, x)
    assert s.offset_D == 0
    assert s.counters[s.bucket(x)] == 0
    assert knw_space_bits(s) == s.P + 1
    assert knw_query(s) == pytest.approx(1.0)


def test_duplicates_leave_counters(small_sketch_stream):
    s = KnwSketch.build(0.3, seed=3)
    s.update_many(small_sketch_stream)
    before = s.counters.copy(), s.offset_D
    s.update_many(small_sketch_stream[:500])
    assert np.array_equal(s.counters, before[0]) and s.offset_D == before[1]


def test_rebase_rule():
    s = KnwSketch.build(0.3, seed=4)
    s.update_many(np.arange(1, 300, dtype=np.uint64))
    c = s.counters.copy()
    q_before = s.occupied
    s.rebase(s.offset_D + 2)
    assert np.array_equal(s.counters, np.maximum(c - 2, -1))
    assert s.occupied <= q_before
    assert s.space_bits() == counter_bits(s.counters)
    with pytest.raises(ValueError):
        s.rebase(s.offset_D - 1)


def _replay_with_offset(s: KnwSketch, xs: np.ndarray, d: int) -> np.ndarray:
    h1, h3, h4 = s.h1, s.h3, s.h4
    lv = _jit.lsb_many(h1.eval_many(xs), s.config.universe_bits)
    buckets = h4.eval_many(h3.eval_many(xs)).astype(np.int64)
    row = np.full(s.P, -1, np.int64)
    np.maximum.at(row, buckets, np.maximum(lv - d, -1))
    return row


def test_rebase_soundness(small_sketch_stream):
    xs = small_sketch_stream
    s = KnwSketch.build(0.3, seed=6)
    s.update_many(xs)
    assert s.offset_D > 0
    assert np.array_equal(s.counters, _replay_with_offset(s, xs, s.offset_D))


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(0, 2**32 - 1), min_size=1, max_size=400), st.integers(0, 2**31))
def test_rebase_soundness_property(xs, seed):
    s = KnwSketch.build(0.3, seed=seed, d0=0)
    arr = np.array(xs, dtype=np.uint64)
    s.update_many(arr)
    assert np.array_equal(s.counters, _replay_with_offset(s, arr, s.offset_D))


def test_q_monotone_at_fixed_offset(small_sketch_stream):
    s = KnwSketch.build(0.3, seed=7)
    prev_q, prev_d = 0, 0
    for chunk in np.array_split(small_sketch_stream, 200):
        s.update_many(chunk)
        if s.offset_D == prev_d:
            assert s.occupied >= prev_q
        prev_q, prev_d = s.occupied, s.offset_D


def test_saturation():
    s = KnwSketch.build(0.99, seed=8, d0=60)
    s.update_many(np.arange(1, 20_000, dtype=np.uint64))
    assert s.occupied == s.P
    with pytest.raises(SaturationError):
        s.query()


def test_oracle_unavailable():
    cfg = KnwConfig(0.3)
    oracle = ConstantTracker.build(TrackerConfig(c2=1), 0)
    fe = np.zeros(cfg.field_elements, np.uint64)
    s = KnwSketch(cfg, oracle, fe)
    with pytest.raises(OracleUnavailable):
        s.update(3)


def test_serialization_roundtrip(small_sketch_stream):
    s = KnwSketch.build(0.2, seed=9)
    s.update_many(small_sketch_stream[:10_000])
    data = s.to_bytes()
    t = KnwSketch.from_bytes(data)
    assert t.to_bytes() == data
    assert t.query() == s.query()
    rest = small_sketch_stream[10_000:]
    s.update_many(rest)
    t.update_many(rest)
    assert t.to_bytes() == s.to_bytes()
    with pytest.raises(DecodeError):
        KnwSketch.from_bytes(data[:-2])
    with pytest.raises(DecodeError):
        KnwSketch.from_bytes(data[:4] + b"NOPE" + data[8:])


def test_occupancy_matches_side_by_side_simulation():
    # 200 instances share one oracle; each instance's surviving set is
    # recomputed from its own h1 and the final offset
    eps, n, reps = 0.1, 10**6, 200
    cfg = KnwConfig(eps)
    rng = np.random.default_rng(42)
    oracle = ConstantTracker.build(TrackerConfig(), int(rng.integers(2**62)))
    fe = rng.integers(0, MERSENNE61, size=(reps, cfg.field_elements), dtype=np.uint64)
    bank = KnwBank(cfg, oracle, fe, space_budget=2**62)
    xs = gen_stream(StreamSpec(n, seed=43))
    bank.feed(xs)
    d = bank.offset
    assert d > 0
    model = OccupancyModel(cfg.buckets)
    z = []
    for r in range(reps):
        h1 = bank.hashes(r)[0]
        survivors = int(np.sum(_jit.lsb_many(h1.eval_many(xs), 32) >= d))
        z.append((bank.q[r] - model.phi(survivors)) / math.sqrt(model.variance(survivors)))
    assert abs(np.mean(z)) * math.sqrt(reps) <= 3
