"""Latency, throughput, overhead, reliability and significance statistics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats as _sps

from . import _kernels

OUTLIER_THRESHOLD_MS = 10_000.0


class TooFewSamples(ValueError):
    pass


class DivisionDomain(ValueError):
    pass


def _as_array(values: Sequence[float]) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).ravel()


def filter_outliers(latencies: Sequence[float], threshold_ms: float = OUTLIER_THRESHOLD_MS) -> tuple[np.ndarray, int]:
    """Drop samples strictly above ``threshold_ms``; return (kept, excluded count)."""
    x = _as_array(latencies)
    keep = x <= threshold_ms
    return x[keep], int(x.size - keep.sum())


def nearest_rank(sorted_x: np.ndarray, pct: int) -> float:
    """The ceil(pct/100 * n)-th order statistic (1-based). ``pct`` is an
    integer percent so the rank is computed exactly."""
    n = sorted_x.size
    if n == 0:
        raise TooFewSamples("percentile of an empty sample")
    if not 0 < pct <= 100:
        raise ValueError("pct must lie in (0, 100]")
    rank = -(-pct * n // 100)
    return float(sorted_x[rank - 1])


@dataclass(frozen=True)
class LatencyStats:
    n: int
    mean: float
    median: float
    std: float
    ci95_low: float
    ci95_high: float
    p95: float
    p99: float

    def as_dict(self) -> dict:
        return asdict(self)


def latency_stats(latencies: Sequence[float]) -> LatencyStats:
    x = _as_array(latencies)
    n = x.size
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    xs = np.sort(x)
    mean = float(xs.mean())
    std = float(xs.std(ddof=1))
    half = 1.96 * std / math.sqrt(n)
    return LatencyStats(
        n=n,
        mean=mean,
        median=float(np.median(xs)),
        std=std,
        ci95_low=mean - half,
        ci95_high=mean + half,
        p95=nearest_rank(xs, 95),
        p99=nearest_rank(xs, 99),
    )


@dataclass(frozen=True)
class ThroughputBins:
    bins: np.ndarray
    pps: np.ndarray
    bps: np.ndarray

    @property
    def mean_pps(self) -> float:
        return float(self.pps.mean()) if self.pps.size else 0.0

    @property
    def mean_bps(self) -> float:
        return float(self.bps.mean()) if self.bps.size else 0.0


def throughput_bins(recvts_ms: Sequence[int], payload_sizes: Sequence[int]) -> ThroughputBins:
    """Per 1 s receive bin: packet count and 8 * bytes. Empty bins are absent."""
    recv = np.asarray(recvts_ms, dtype=np.int64)
    sizes = np.asarray(payload_sizes, dtype=np.int64)
    if recv.shape != sizes.shape:
        raise ValueError("recvts_ms and payload_sizes differ in length")
    keys, counts, sums = _kernels.bin_sums(recv // 1000, sizes)
    return ThroughputBins(bins=keys, pps=counts.astype(np.float64), bps=8.0 * sums)


def payload_overhead_pct(mean_psk_bytes: float, mean_dsekp_bytes: float) -> float:
    if not mean_psk_bytes > 0:
        raise DivisionDomain("baseline mean payload must be positive")
    return 100.0 * (mean_dsekp_bytes - mean_psk_bytes) / mean_psk_bytes


@dataclass(frozen=True)
class Reliability:
    percent: float
    sent: int
    accepted: int
    losses: int
    duplicates: int


def reliability(sent: int, accepted: int, duplicates: int = 0) -> Reliability:
    """``accepted`` counts distinct packets; duplicates are tallied apart."""
    if sent <= 0:
        raise DivisionDomain("sent must be positive")
    if accepted > sent:
        raise ValueError("accepted unique packets cannot exceed sent")
    return Reliability(100.0 * accepted / sent, sent, accepted, sent - accepted, duplicates)


@dataclass(frozen=True)
class Significance:
    t_stat: float
    t_df: float
    t_p: float
    u_stat: float
    ranksum_p: float
    cohens_d: float
    cliffs_delta: float

    def as_dict(self) -> dict:
        return asdict(self)


def welch_t(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    na, nb = a.size, b.size
    va = a.var(ddof=1) / na
    vb = b.var(ddof=1) / nb
    diff = float(a.mean() - b.mean())
    se2 = va + vb
    if se2 == 0:
        return (0.0, float(na + nb - 2), 1.0) if diff == 0 else (math.copysign(math.inf, diff), float(na + nb - 2), 0.0)
    t = diff / math.sqrt(se2)
    df = se2 * se2 / (va * va / (na - 1) + vb * vb / (nb - 1))
    return t, float(df), float(min(1.0, 2.0 * _sps.t.sf(abs(t), df)))


def rank_sum(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Mann-Whitney U of ``a`` and its two-sided p-value from the normal
    approximation with tie correction and a 0.5 continuity correction."""
    na, nb = a.size, b.size
    n = na + nb
    ranks, tie = _kernels.tie_ranks(np.concatenate([a, b]))
    u1 = float(ranks[:na].sum()) - na * (na + 1) / 2.0
    mu = na * nb / 2.0
    var = na * nb / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return u1, 1.0
    z = (max(u1, na * nb - u1) - mu - 0.5) / math.sqrt(var)
    return u1, float(min(1.0, math.erfc(z / math.sqrt(2.0))))


def cohens_d(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = a.size, b.size
    pooled = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    diff = float(a.mean() - b.mean())
    if pooled == 0:
        return 0.0 if diff == 0 else math.copysign(math.inf, diff)
    return diff / math.sqrt(pooled)


def cliffs_delta(a: np.ndarray, b: np.ndarray) -> float:
    gt, lt = _kernels.dominance_counts(a, b)
    return (gt - lt) / (a.size * b.size)


def significance(a: Sequence[float], b: Sequence[float]) -> Significance:
    """Compare two latency samples. Signs follow ``a - b``: a faster ``a``
    gives negative d and delta."""
    xa, xb = _as_array(a), _as_array(b)
    if xa.size < 2 or xb.size < 2:
        raise TooFewSamples("each sample needs at least 2 values")
    t, df, t_p = welch_t(xa, xb)
    u, u_p = rank_sum(xa, xb)
    return Significance(t, df, t_p, u, u_p, cohens_d(xa, xb), cliffs_delta(xa, xb))
