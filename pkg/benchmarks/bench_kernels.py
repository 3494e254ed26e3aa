"""Benchmark the compiled kernel core against the pure-numpy fallback.

Run after building the extension:

    python benchmarks/bench_kernels.py

Prints a table of per-call times for representative workloads: the mean
smoother over pooled phase-1 measurements, the covariance-surface
smoother over binned cross-products, and the partial-likelihood pass
behind every hazard-model fit.
"""

import time

import numpy as np

from twophase import _kernels_py

try:
    from twophase import _ckernels
except ImportError:
    _ckernels = None


def time_call(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def smoothing_1d_case(n=90000):
    rng = np.random.default_rng(0)
    x = np.sort(rng.uniform(-365, 272, n))
    y = 65 + 0.02 * x + rng.normal(0, 1, n)
    w = np.ones(n)
    grid = np.linspace(-365, 272, 101)
    return x, y, w, grid, 60.0


def smoothing_2d_case(grid_size=101):
    rng = np.random.default_rng(1)
    grid = np.linspace(-365, 272, grid_size)
    g1, g2 = np.meshgrid(grid, grid, indexing="ij")
    keep = rng.uniform(size=g1.size) < 0.9
    x1 = g1.ravel()[keep]
    order = np.argsort(x1, kind="stable")
    x2 = g2.ravel()[keep]
    y = np.cos(x1 / 120)[...] * np.cos(x2 / 120) + rng.normal(0, 0.1, x1.size)
    w = rng.uniform(1, 20, x1.size)
    return x1[order], x2[order], y[order], w[order], grid, 90.0


def cox_case(n=10000, p=3):
    rng = np.random.default_rng(2)
    t = np.sort(rng.exponential(size=n))
    event = (rng.uniform(size=n) < 0.2).astype(float)
    w = rng.uniform(0.5, 20.0, n)
    x = rng.normal(size=(n, p))
    eta = x @ np.array([0.5, -0.2, 0.1])
    new = np.r_[True, t[1:] != t[:-1]]
    gi = np.cumsum(new) - 1
    gf = np.flatnonzero(new)[gi]
    return event, w, eta, x, gf, gi


def main():
    cases = [
        ("local_linear_1d (90k pts, 101 grid)", "local_linear_1d",
         smoothing_1d_case()),
        ("local_linear_2d (~9.2k cells, 101x101)", "local_linear_2d",
         smoothing_2d_case()),
        ("cox_breslow (n=10000, p=3)", "cox_breslow", cox_case()),
    ]
    print(f"{'kernel':42s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
    for label, name, args in cases:
        t_py = time_call(getattr(_kernels_py, name), *args)
        if _ckernels is None:
            print(f"{label:42s} {t_py * 1e3:9.2f}ms {'n/a':>10s}")
            continue
        t_c = time_call(getattr(_ckernels, name), *args)
        print(f"{label:42s} {t_py * 1e3:9.2f}ms {t_c * 1e3:9.2f}ms "
              f"{t_py / t_c:7.1f}x")
    if _ckernels is None:
        print("\ncompiled extension not built; run pip install -e . first")


if __name__ == "__main__":
    main()
