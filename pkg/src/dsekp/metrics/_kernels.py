"""Hot loops of the analysis pipeline.

Each kernel exists twice: a numba ``@njit`` version that walks sorted
arrays with explicit loops, and a vectorised pure-numpy version. The
exported name picks numba when it imports and ``DSEKP_DISABLE_NUMBA`` is
unset; both variants stay importable so tests can cross-check them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None

_DISABLED = os.environ.get("DSEKP_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")
HAVE_NUMBA = numba is not None
BACKEND = "numba" if HAVE_NUMBA and not _DISABLED else "numpy"


# -- pure numpy ------------------------------------------------------------

def dominance_counts_numpy(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    """Return ``(#{a_i > b_j}, #{a_i < b_j})`` over all cross pairs."""
    b_sorted = np.sort(np.asarray(b, dtype=np.float64))
    a = np.asarray(a, dtype=np.float64)
    below = np.searchsorted(b_sorted, a, side="left")
    at_or_below = np.searchsorted(b_sorted, a, side="right")
    return int(below.sum()), int((b_sorted.size - at_or_below).sum())


def tie_ranks_numpy(x: np.ndarray) -> tuple[np.ndarray, float]:
    """Average (fractional) ranks, 1-based, plus the tie term sum(t^3 - t)."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    _, starts, counts = np.unique(x[order], return_index=True, return_counts=True)
    avg = starts + (counts + 1) / 2.0
    ranks = np.empty(x.size, dtype=np.float64)
    ranks[order] = np.repeat(avg, counts)
    c = counts.astype(np.float64)
    return ranks, float(np.sum(c * c * c - c))


def bin_sums_numpy(bins: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Group ``values`` by integer ``bins``: sorted keys, counts and sums."""
    bins = np.asarray(bins, dtype=np.int64)
    values = np.asarray(values, dtype=np.int64)
    keys, inverse, counts = np.unique(bins, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=values, minlength=keys.size).astype(np.int64)
    return keys, counts.astype(np.int64), sums


# -- loop kernels (compiled by numba when available) -------------------------

def _dominance_sorted(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    m = b.shape[0]
    lo = 0  # first b >= a_i
    hi = 0  # first b > a_i
    gt = 0
    lt = 0
    for i in range(a.shape[0]):
        v = a[i]
        while lo < m and b[lo] < v:
            lo += 1
        if hi < lo:
            hi = lo
        while hi < m and b[hi] <= v:
            hi += 1
        gt += lo
        lt += m - hi
    return gt, lt


def _tie_ranks_loop(x: np.ndarray) -> tuple[np.ndarray, float]:
    n = x.shape[0]
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(n, dtype=np.float64)
    tie = 0.0
    i = 0
    while i < n:
        j = i + 1
        while j < n and x[order[j]] == x[order[i]]:
            j += 1
        avg = (i + 1 + j) / 2.0
        for k in range(i, j):
            ranks[order[k]] = avg
        t = float(j - i)
        tie += t * t * t - t
        i = j
    return ranks, tie


def _bin_sums_loop(bins: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = bins.shape[0]
    order = np.argsort(bins, kind="mergesort")
    keys = np.empty(n, dtype=np.int64)
    counts = np.zeros(n, dtype=np.int64)
    sums = np.zeros(n, dtype=np.int64)
    g = -1
    for k in range(n):
        idx = order[k]
        if g < 0 or bins[idx] != keys[g]:
            g += 1
            keys[g] = bins[idx]
        counts[g] += 1
        sums[g] += values[idx]
    return keys[: g + 1], counts[: g + 1], sums[: g + 1]


if HAVE_NUMBA:
    _dominance_sorted_jit = numba.njit(cache=True)(_dominance_sorted)
    _tie_ranks_jit = numba.njit(cache=True)(_tie_ranks_loop)
    _bin_sums_jit = numba.njit(cache=True)(_bin_sums_loop)
else:  # pragma: no cover
    _dominance_sorted_jit = _dominance_sorted
    _tie_ranks_jit = _tie_ranks_loop
    _bin_sums_jit = _bin_sums_loop


def dominance_counts_numba(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    gt, lt = _dominance_sorted_jit(a, b)
    return int(gt), int(lt)


def tie_ranks_numba(x: np.ndarray) -> tuple[np.ndarray, float]:
    ranks, tie = _tie_ranks_jit(np.ascontiguousarray(x, dtype=np.float64))
    return ranks, float(tie)


def bin_sums_numba(bins: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _bin_sums_jit(np.ascontiguousarray(bins, dtype=np.int64), np.ascontiguousarray(values, dtype=np.int64))


if BACKEND == "numba":
    dominance_counts = dominance_counts_numba
    tie_ranks = tie_ranks_numba
    bin_sums = bin_sums_numba
else:
    dominance_counts = dominance_counts_numpy
    tie_ranks = tie_ranks_numpy
    bin_sums = bin_sums_numpy
