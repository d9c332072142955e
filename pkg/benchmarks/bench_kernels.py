"""Time the numba and pure-numpy metric kernels side by side.

    python3 benchmarks/bench_kernels.py [--sizes 1000 6500 50000] [--repeat 5]

Inputs mimic latency logs (integer ms, many ties). The first numba call
per kernel is excluded as compile/cache-load warmup. Results of both
backends are checked for equality before timing.
"""

import argparse
import time

import numpy as np

from dsekp.metrics import _kernels as K

KERNELS = {
    "dominance_counts": (K.dominance_counts_numpy, K.dominance_counts_numba),
    "tie_ranks": (K.tie_ranks_numpy, K.tie_ranks_numba),
    "bin_sums": (K.bin_sums_numpy, K.bin_sums_numba),
}


def make_inputs(n, rng):
    a = np.maximum(0, np.rint(rng.normal(283, 183, n)))
    b = np.maximum(0, np.rint(rng.normal(360, 130, n)))
    recv = 1_700_000_000_000 + np.cumsum(rng.integers(1500, 2500, n))
    sizes = rng.integers(170, 200, n)
    return {
        "dominance_counts": (a, b),
        "tie_ranks": (np.concatenate([a, b]),),
        "bin_sums": (recv // 1000, sizes),
    }


def best_of(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def same(x, y):
    if isinstance(x, tuple):
        return all(same(p, q) for p, q in zip(x, y))
    return np.array_equal(np.asarray(x), np.asarray(y))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 6500, 50_000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if not K.HAVE_NUMBA:
        print("numba not installed; the numba column runs the uncompiled loops")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<18}{'n':>8}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for n in args.sizes:
        inputs = make_inputs(n, rng)
        for name, (np_fn, nb_fn) in KERNELS.items():
            call = inputs[name]
            if not same(np_fn(*call), nb_fn(*call)):
                raise SystemExit(f"{name}: backends disagree at n={n}")
            t_np = best_of(np_fn, call, args.repeat)
            t_nb = best_of(nb_fn, call, args.repeat)
            print(f"{name:<18}{n:>8}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.2f}x")


if __name__ == "__main__":
    main()
