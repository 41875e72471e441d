"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py [--repeats 5]

The same functions power the package when MDPMIX_DISABLE_NUMBA=1 is set, so
this doubles as a check that both backends produce matching results.
"""

import argparse
import time

import numpy as np

from mdpmix import _kernels


def _time(fn, *args, repeats):
    fn(*args)  # warm-up (includes JIT compilation for the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_walk(repeats):
    rng = np.random.default_rng(0)
    S, A, T = 64, 4, 200_000
    pol_cdf = np.cumsum(rng.dirichlet(np.ones(A), size=S), axis=-1)
    ker_cdf = np.cumsum(rng.dirichlet(np.ones(S), size=(S, A)), axis=-1)
    u_a = rng.random(T)
    u_s = rng.random(T)
    args = (0, pol_cdf, ker_cdf, u_a, u_s)
    rows = [("sample_walk (numpy)", _time(_kernels._walk_py, *args, repeats=repeats))]
    if _kernels.HAS_NUMBA:
        rows.append(
            ("sample_walk (numba)", _time(_kernels._walk_nb, *args, repeats=repeats))
        )
        s_nb, a_nb = _kernels._walk_nb(*args)
        s_py, a_py = _kernels._walk_py(*args)
        assert np.array_equal(s_nb, s_py) and np.array_equal(a_nb, a_py)
    return rows


def bench_pairwise(repeats):
    rng = np.random.default_rng(1)
    N, F, K = 500, 40, 2
    x = rng.standard_normal((N, F, K))
    y = rng.standard_normal((N, F, K))
    rows = [
        ("pairwise_max_inner (numpy)", _time(_kernels._pairwise_max_inner_py, x, y,
                                             repeats=repeats))
    ]
    if _kernels.HAS_NUMBA:
        rows.append(
            ("pairwise_max_inner (numba)", _time(_kernels._pairwise_max_inner_nb, x, y,
                                                 repeats=repeats))
        )
        assert np.allclose(
            _kernels._pairwise_max_inner_nb(x, y),
            _kernels._pairwise_max_inner_py(x, y),
            atol=1e-12,
        )
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not _kernels.HAS_NUMBA:
        print("numba unavailable or disabled: timing the numpy fallbacks only\n")
    rows = bench_walk(args.repeats) + bench_pairwise(args.repeats)
    width = max(len(name) for name, _ in rows)
    print(f"{'kernel':<{width}}  best of {args.repeats} (s)")
    for name, best in rows:
        print(f"{name:<{width}}  {best:.4f}")
    for task in ("sample_walk", "pairwise_max_inner"):
        times = {name: t for name, t in rows if name.startswith(task)}
        if len(times) == 2:
            py = times[f"{task} (numpy)"]
            nb = times[f"{task} (numba)"]
            print(f"{task}: numba speedup {py / nb:.1f}x")


if __name__ == "__main__":
    main()
