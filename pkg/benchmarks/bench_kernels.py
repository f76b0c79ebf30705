"""Time the numba and numpy backends of each hot kernel on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N wall time of each backend and
checks that both produce the same result.
"""

import argparse
import math
import time

import numpy as np

from sparse_doa import _kernels
from sparse_doa._accel import HAVE_NUMBA
from sparse_doa.geometry import Direction, make_geometry, steering_derivatives, steering_vector
from sparse_doa.selection import combos_array
from sparse_doa.simulation import sample_covariance, simulate_snapshots


def best_time(fn, repeat):
    fn()  # warm-up (includes JIT compilation for numba)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def crb_case():
    g = make_geometry("UCA", M=16, spacing=0.5)
    d = Direction.from_degrees(90.0, 40.0)
    combos = combos_array(16, 6)
    R = sample_covariance(simulate_snapshots(g, d, 10.0, 100, 0))
    a = steering_vector(g, d)
    dt, dp = steering_derivatives(g, d)
    return lambda nb: _kernels.crb_terms(a, dt, dp, combos, R, numba=nb), "crb_terms UCA16 K=6 (8008 subsets)"


def anneal_case():
    g = make_geometry("URA", rows=6, cols=7, spacing=0.5)
    pos = g.positions
    dist = np.sqrt(((pos[:, None] - pos[None]) ** 2).sum(-1))
    with np.errstate(divide="ignore"):
        inv = np.where(dist > 0, 1.0 / dist, 0.0)
    rng = np.random.default_rng(0)
    K, M = 16, 42
    sel = np.sort(rng.choice(M, K, replace=False))
    unsel = np.setdiff1d(np.arange(M), sel)
    levels, moves = 200, 50
    n = levels * moves
    po, pi, u = rng.integers(K, size=n), rng.integers(M - K, size=n), rng.random(n)
    temps = 100.0 * 0.95 ** np.arange(levels)
    return (lambda nb: _kernels.anneal(inv, dist, sel, unsel, po, pi, u, temps, moves, math.inf, numba=nb),
            "anneal 6x7 K=16 (10000 moves)")


def conv_case():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((32, 16, 8, 8))
    W = rng.standard_normal((16, 16, 3, 3))
    b = rng.standard_normal(16)
    dy = rng.standard_normal((32, 16, 6, 6))

    def run(nb):
        y = _kernels.conv_forward(x, W, b, numba=nb)
        return (y,) + tuple(_kernels.conv_backward(x, W, dy, numba=nb))

    return run, "conv fwd+bwd N=32 C=16 8x8"


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a), np.asarray(b)
    if a.dtype == bool or a.dtype.kind in "iu":
        return np.array_equal(a, b)
    return np.allclose(a, b, rtol=1e-9, atol=1e-12)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba not installed; only the numpy backend is available")
    for case in (crb_case, anneal_case, conv_case):
        fn, name = case()
        t_np = best_time(lambda: fn(False), args.repeat)
        line = f"{name:40s} numpy {1e3 * t_np:9.2f} ms"
        if HAVE_NUMBA:
            t_nb = best_time(lambda: fn(True), args.repeat)
            agree = same(fn(False), fn(True))
            line += f"   numba {1e3 * t_nb:9.2f} ms   speedup {t_np / t_nb:6.2f}x   agree={agree}"
        print(line)


if __name__ == "__main__":
    main()
