import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from dsekp.experiment import RunProfile, run
from dsekp.metrics.stats import (
    DivisionDomain,
    TooFewSamples,
    filter_outliers,
    latency_stats,
    nearest_rank,
    payload_overhead_pct,
    reliability,
    significance,
    throughput_bins,
)


def _instances(n_inst=60, seed=0):
    """Random sample pairs of size <= 20, some integer-valued so ties occur."""
    rng = np.random.default_rng(seed)
    for i in range(n_inst):
        na, nb = int(rng.integers(2, 21)), int(rng.integers(2, 21))
        if i % 2:
            a = rng.integers(0, 8, na).astype(float)
            b = rng.integers(0, 8, nb).astype(float)
            if a.var() == 0:
                a[0] += 1
            if b.var() == 0:
                b[0] += 1
        else:
            a = rng.normal(300, 150, na)
            b = rng.normal(360, 120, nb)
        yield a.tolist(), b.tolist()


def test_latency_stats_small():
    s = latency_stats([1, 2, 3])
    assert s.mean == 2 and s.median == 2 and s.n == 3
    c = latency_stats([5, 5, 5, 5])
    assert c.std == 0 and c.p95 == 5 and c.p99 == 5 and c.ci95_low == c.ci95_high == 5


def test_latency_stats_too_few():
    with pytest.raises(TooFewSamples):
        latency_stats([1.0])


@pytest.mark.parametrize("a,b", list(_instances()))
def test_descriptives_match_oracle(a, b):
    s = latency_stats(a)
    assert s.mean == pytest.approx(oracles.mean(a), abs=1e-9)
    assert s.median == pytest.approx(oracles.median(a), abs=1e-9)
    assert s.std == pytest.approx(math.sqrt(oracles.sample_var(a)), abs=1e-9)
    assert s.p95 == oracles.nearest_rank(a, 95)
    assert s.p99 == oracles.nearest_rank(a, 99)
    half = 1.96 * math.sqrt(oracles.sample_var(a) / len(a))
    assert s.ci95_low == pytest.approx(oracles.mean(a) - half, abs=1e-9)


@pytest.mark.parametrize("a,b", list(_instances(seed=1)))
def test_significance_matches_oracle(a, b):
    sig = significance(a, b)
    t, df, p = oracles.welch(a, b)
    assert sig.t_stat == pytest.approx(t, abs=1e-9)
    assert sig.t_df == pytest.approx(df, abs=1e-9)
    assert sig.t_p == pytest.approx(p, abs=1e-6)
    assert sig.u_stat == pytest.approx(oracles.mann_whitney_u(a, b), abs=1e-9)
    assert sig.ranksum_p == pytest.approx(oracles.rank_sum_p(a, b), abs=1e-6)
    assert sig.cohens_d == pytest.approx(oracles.cohens_d(a, b), abs=1e-9)
    assert sig.cliffs_delta == pytest.approx(oracles.cliffs_delta(a, b), abs=1e-9)


def test_complete_dominance():
    sig = significance([1, 2], [3, 4])
    assert sig.cliffs_delta == -1
    assert sig.cohens_d < 0


def test_identical_lists():
    x = [3.0, 1.0, 4.0, 1.0, 5.0]
    sig = significance(x, x)
    assert sig.cohens_d == 0 and sig.cliffs_delta == 0
    assert sig.t_p == pytest.approx(1.0)


def test_faster_first_group_gives_negative_effects():
    rng = np.random.default_rng(7)
    sig = significance(rng.normal(283, 183, 500), rng.normal(360, 130, 500))
    assert sig.cohens_d < 0 and sig.cliffs_delta < 0


@pytest.mark.parametrize("a,b", list(_instances(20, seed=2)))
def test_swap_symmetry(a, b):
    ab, ba = significance(a, b), significance(b, a)
    assert ab.cohens_d == pytest.approx(-ba.cohens_d, abs=1e-12)
    assert ab.cliffs_delta == pytest.approx(-ba.cliffs_delta, abs=1e-12)
    assert ab.t_p == pytest.approx(ba.t_p, abs=1e-12)
    assert ab.ranksum_p == pytest.approx(ba.ranksum_p, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=3, max_size=20), st.lists(st.integers(0, 50), min_size=3, max_size=20),
       st.randoms(use_true_random=False))
def test_permutation_invariance(a, b, rnd):
    base = significance(a, b)
    pa, pb = list(a), list(b)
    rnd.shuffle(pa)
    rnd.shuffle(pb)
    other = significance(pa, pb)
    for name in ("u_stat", "ranksum_p", "cliffs_delta"):
        assert getattr(other, name) == getattr(base, name)
    for name in ("t_stat", "t_p", "cohens_d"):
        x, y = getattr(other, name), getattr(base, name)
        assert (math.isnan(x) and math.isnan(y)) or x == pytest.approx(y, rel=1e-9, abs=1e-12)


def test_significance_too_few():
    with pytest.raises(TooFewSamples):
        significance([1.0], [1.0, 2.0])


# -- outliers ------------------------------------------------------------------

def test_outlier_threshold():
    kept, excluded = filter_outliers([100, 200, 11000])
    assert kept.tolist() == [100, 200] and excluded == 1
    kept, excluded = filter_outliers([0, 10000, 9999.5])
    assert kept.tolist() == [0, 10000, 9999.5] and excluded == 0


def test_planted_outliers():
    rng = np.random.default_rng(12)
    x = np.clip(rng.normal(300, 150, 20_000), 0, 9_000)
    planted = rng.choice(x.size, 10, replace=False)
    x[planted] = rng.uniform(10_001, 60_000, 10)
    kept, excluded = filter_outliers(x)
    assert excluded == 10 and kept.size == x.size - 10
    assert kept.max() <= 10_000


# -- percentiles -----------------------------------------------------------------

def test_nearest_rank_edges():
    xs = np.arange(1, 101, dtype=float)
    assert nearest_rank(xs, 95) == 95 and nearest_rank(xs, 100) == 100 and nearest_rank(xs, 1) == 1
    assert nearest_rank(np.array([7.0]), 99) == 7
    with pytest.raises(ValueError):
        nearest_rank(xs, 0)


# -- overhead / reliability -------------------------------------------------------

def test_overhead_values():
    assert payload_overhead_pct(154.8, 170.8) == pytest.approx(10.34, abs=0.01)
    assert payload_overhead_pct(120, 120) == 0
    assert payload_overhead_pct(100, 116) == pytest.approx(16.0)
    with pytest.raises(DivisionDomain):
        payload_overhead_pct(0, 1)


def test_reliability_values():
    assert reliability(1000, 1000).percent == 100
    r = reliability(1000, 996, duplicates=2)
    assert r.percent == pytest.approx(99.6) and r.losses == 4 and r.duplicates == 2
    with pytest.raises(DivisionDomain):
        reliability(0, 0)
    with pytest.raises(ValueError):
        reliability(10, 11)


def test_reliability_matches_trace_drops():
    result = run(RunProfile(mode="psk", packets=3000, seed=5, loss=0.002))
    drops = sum(1 for e in result.broker.trace if e.event == "drop" and e.topic == "psk/data")
    assert drops > 0
    summary = result.summary()["metrics"]
    assert summary["reliability_pct"] == pytest.approx(100 * (1 - drops / 3000), abs=1e-9)


# -- throughput -------------------------------------------------------------------

def test_throughput_single_bin():
    tb = throughput_bins([5000 + i for i in range(10)], [155] * 10)
    assert tb.bins.tolist() == [5] and tb.pps.tolist() == [10] and tb.bps.tolist() == [12400]


def test_throughput_empty_bins_absent():
    tb = throughput_bins([1000, 1500, 4200], [10, 20, 30])
    assert tb.bins.tolist() == [1, 4]
    assert tb.pps.tolist() == [2, 1] and tb.bps.tolist() == [240, 240]
    empty = throughput_bins([], [])
    assert empty.bins.size == 0 and empty.mean_pps == 0


def test_throughput_two_second_stream_matches_trace():
    result = run(RunProfile(mode="psk", packets=500, seed=2))
    delivered = [e for e in result.broker.trace if e.event == "deliver" and e.topic == "psk/data"]
    recv = [r.recvts_ms for r in result.server_log]
    tb = throughput_bins(recv, [r.payload_size for r in result.server_log])
    assert tb.pps.sum() == len(delivered) == 500
    per_bin = {}
    for e in delivered:
        per_bin[e.t_ms // 1000] = per_bin.get(e.t_ms // 1000, 0) + 1
    assert dict(zip(tb.bins.tolist(), tb.pps.tolist())) == per_bin
    span_s = (max(recv) - min(recv)) / 1000
    assert len(recv) / span_s == pytest.approx(0.5, rel=0.02)
    # per-bin average over non-empty bins
    assert tb.mean_pps == pytest.approx(1.0, abs=0.02)
