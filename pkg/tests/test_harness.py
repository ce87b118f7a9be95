import math

import numpy as np
import pytest

from f0track.errors import OracleCapacityError
from f0track.harness import (
    AlgoConfig,
    StreamSpec,
    exact_f0,
    first_reaching,
    gen_stream,
    phi_mc_oracle,
    run_trial,
    run_trials,
    running_f0,
    space_bench,
    verify_balls_bins,
    verify_fm_tails,
    verify_random_walk_lemma,
    wilson_interval,
)

# --- streams and exact oracle ------------------------------------------------


def test_empty_stream():
    xs = gen_stream(StreamSpec(0))
    assert xs.size == 0
    assert exact_f0(xs) == 0
    assert running_f0(xs).size == 0


def test_exact_f0_small_cases():
    assert exact_f0([]) == 0
    assert exact_f0([5, 5, 5]) == 1
    assert exact_f0(np.array([1, 2, 2, 3], np.uint64)) == 3
    with pytest.raises(OracleCapacityError):
        exact_f0([1, 2, 3], cap=2)
    with pytest.raises(OracleCapacityError):
        exact_f0(np.arange(10, dtype=np.uint64), cap=5)


def test_same_seed_same_stream():
    spec = StreamSpec(5000, duplication="uniform-2", order="shuffled", seed=3)
    assert np.array_equal(gen_stream(spec), gen_stream(spec))
    other = StreamSpec(5000, duplication="uniform-2", order="shuffled", seed=4)
    assert not np.array_equal(gen_stream(spec), gen_stream(other))


def test_zipf_and_uniform_distinct_counts():
    zs = gen_stream(StreamSpec(10_000, duplication="zipf(1.1)", seed=1))
    assert exact_f0(zs) == 10_000
    assert zs.size == int(np.ceil(64 / np.arange(1, 10_001) ** 1.1).sum())
    us = gen_stream(StreamSpec(12_345, duplication="uniform-3", seed=2))
    assert exact_f0(us) == 12_345 and us.size == 3 * 12_345


def test_orders_share_a_multiset():
    base = dict(distinct_count=300, duplication="uniform-4", seed=9)
    seq = gen_stream(StreamSpec(order="sequential", **base))
    blk = gen_stream(StreamSpec(order="adversarial-blocks", **base))
    shf = gen_stream(StreamSpec(order="shuffled", **base))
    assert np.array_equal(np.sort(seq), np.sort(blk))
    assert np.array_equal(np.sort(seq), np.sort(shf))
    # round robin: the first pass lists every element once
    assert exact_f0(seq[:300]) == 300
    assert np.all(blk[0:4] == blk[0])


def test_small_universe_fills_exactly():
    xs = gen_stream(StreamSpec(256, universe_bits=8, seed=5))
    assert sorted(xs.tolist()) == list(range(256))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(distinct_count=257, universe_bits=8),
        dict(distinct_count=10, order="reversed"),
        dict(distinct_count=10, duplication="uniform-0"),
        dict(distinct_count=10, duplication="pareto"),
        dict(distinct_count=10, universe_bits=62),
        dict(distinct_count=-1),
    ],
)
def test_invalid_specs_rejected(kwargs):
    with pytest.raises(ValueError):
        StreamSpec(**kwargs)


def test_running_f0_and_first_reaching():
    xs = np.array([4, 4, 7, 4, 9, 7, 1], np.uint64)
    f0 = running_f0(xs)
    assert f0.tolist() == [1, 1, 2, 2, 3, 3, 4]
    assert first_reaching(f0, [1, 2, 4, 8]) == {1: 0, 2: 2, 4: 6}


# --- trials ------------------------------------------------------------------


def test_wilson_interval():
    lo, hi = wilson_interval(0, 500)
    z2 = 1.959963984540054**2
    assert lo == 0.0
    assert hi == pytest.approx(z2 / (500 + z2), rel=1e-9)
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and hi - 0.5 == pytest.approx(0.5 - lo)


def test_single_trial_aggregate_matches_trial():
    algo, spec = AlgoConfig("knw", eps=0.2), StreamSpec(3000, seed=1)
    agg = run_trials(algo, spec, 1, master_seed=5)
    one = run_trial(algo, spec, 0, 5)
    assert agg.trials[0].to_dict() == one.to_dict()
    assert agg.failure_rate == (0.0 if one.success else 1.0)


@pytest.mark.parametrize("mode", ["constant", "knw", "high-accuracy", "strong-tracking"])
def test_trials_deterministic_across_workers(mode):
    algo, spec = AlgoConfig(mode, eps=0.2, delta=0.125), StreamSpec(2000, seed=2)
    a = run_trials(algo, spec, 3, master_seed=8, workers=1).to_dict()
    b = run_trials(algo, spec, 3, master_seed=8, workers=2).to_dict()
    assert a == b
    assert all(t["runtime_ms"] is None for t in a["trials"])


def test_success_matches_tolerance():
    for mode in ("knw", "high-accuracy", "strong-tracking", "constant"):
        algo = AlgoConfig(mode, eps=0.2, delta=0.25)
        lo, hi = algo.tolerance()
        for r in run_trials(algo, StreamSpec(4000, seed=3), 4, 11).trials:
            if r.success:
                assert r.max_over_error <= hi and r.max_under_error <= lo
            assert r.max_rel_error_over_time == max(r.max_over_error, r.max_under_error)


def test_trial_extras():
    st = run_trial(AlgoConfig("strong-tracking", eps=0.2, delta=1 / 3), StreamSpec(3000), 0, 1)
    assert st.extra["monotone"] and st.extra["repetitions"] > 0
    c = run_trial(AlgoConfig("constant", delta=2.0**-10), StreamSpec(5000), 0, 1)
    assert c.extra["within_cap"] and set(c.extra["doubling_estimates"]) >= {"1", "2", "4096"}
    k = run_trial(AlgoConfig("knw", eps=0.2, checkpoints=(100, 1000)), StreamSpec(5000), 0, 1)
    assert set(k.extra["checkpoints"]) == {"100", "1000"}
    assert k.extra["excess_space_bits"] == k.extra["final_space_bits"] - k.extra["buckets"]


def test_timing_flag():
    r = run_trial(AlgoConfig("knw", eps=0.3), StreamSpec(500), 0, 1, timing=True)
    assert r.runtime_ms is not None and r.runtime_ms > 0


def test_trials_validation():
    with pytest.raises(ValueError):
        run_trials(AlgoConfig("knw"), StreamSpec(10), 0, 1)
    with pytest.raises(ValueError):
        AlgoConfig("hyperloglog")


# --- Monte Carlo verifiers -------------------------------------------------


def test_phi_mc_edge_cases():
    assert phi_mc_oracle(100, 0, 50) == (0.0, 0.0)
    assert phi_mc_oracle(100, 1, 50) == (1.0, 0.0)
    mean, se = phi_mc_oracle(10, 10**4, 30)
    assert mean == 10.0 and se == 0.0


def test_phi_mc_blocks_independent_of_workers():
    a = phi_mc_oracle(100, 20, 2500, seed=4, workers=1)
    b = phi_mc_oracle(100, 20, 2500, seed=4, workers=2)
    assert a == b


def test_random_walk_single_step():
    # with T = 1 the step is +-1, so the supremum is exactly 1
    r = verify_random_walk_lemma(1, 200, [0.5, 1.0, 1e6], seed=1)
    assert r["tails"] == {0.5: 1.0, 1.0: 0.0, 1e6: 0.0}
    assert r["fitted_c"] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        verify_random_walk_lemma(12, 10, [2.0])


def test_random_walk_small_scale():
    r = verify_random_walk_lemma(2**8, 2000, [2.0, 4.0, 8.0], seed=2)
    assert all(0 <= t <= 1 for t in r["tails"].values())
    assert r["fitted_c"] <= 8


def test_balls_bins_edge_cases():
    r = verify_balls_bins(1000, 1, 4, 100, seed=1)
    assert r["max"] == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        verify_balls_bins(1000, 51, 4, 10)
    r = verify_balls_bins(1000, 50, 8, 500, seed=2)
    p = r["percentiles"]
    assert p["p50"] <= p["p75"] <= p["p90"] <= p["p99"] <= r["max"]


def test_fm_tails_small():
    r = verify_fm_tails(10, 300, range(2, 6), seed=3)
    assert set(r["tails"]) == {2, 3, 4, 5}
    assert r["tails"][5] <= r["tails"][2]
    assert r["max_ratio_to_2^-lambda"] == max(t * 2.0**k for k, t in r["tails"].items())


def test_space_bench_shape_and_determinism():
    kw = dict(eps_list=[0.3, 0.2], delta_list=[0.25, 0.125], distinct=2000, trials=2, seed=7)
    a = space_bench("strong-tracking", **kw)
    b = space_bench("strong-tracking", workers=2, **kw)
    assert a == b
    assert len(a["grid"]) == 4
    assert all(len(g["bits"]) == 2 for g in a["grid"])
    assert a["fit"]["slope"] > 0
    assert math.isnan(space_bench("knw", [0.3], [0.25], 500, 1, 0)["fit"]["r2"])
