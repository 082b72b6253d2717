"""Time the numba and numpy implementations of each hot kernel.

    python3 benchmarks/bench_kernels.py [--reps 5] [--B 20000]

Each kernel runs on the same inputs through both paths; the script checks that
the outputs agree before reporting the best-of-N wall time and the speedup.
"""

import argparse
import time

import numpy as np

from clusterkit import kernels


def best_of(fn, reps):
    times = []
    for _ in range(reps):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def cases(B, seed):
    rng = np.random.default_rng(seed)

    G = 40
    V = rng.choice([-1.0, 1.0], size=(B, G))
    q = rng.normal(size=G)
    C = 0.05 * rng.normal(size=(G, G))
    yield "wild_tstats", (V, q, C, 0.9), kernels.wild_tstats_numpy, kernels.wild_tstats_numba

    G, k = 30, 4
    Xg = rng.normal(size=(G, 6, k))
    xtx_g = np.einsum("gik,gil->gkl", Xg, Xg)
    xty_g = np.einsum("gik,gi->gk", Xg, rng.normal(size=(G, 6)))
    sizes = np.full(G, 6.0)
    idx = rng.integers(0, G, size=(B // 4, G))
    ref = np.diag(xtx_g.sum(axis=0)).copy()
    yield ("pairs_tstats", (xtx_g, xty_g, sizes, idx, 1, 0.0, ref),
           kernels.pairs_tstats_numpy, kernels.pairs_tstats_numba)

    H, n_coarse = 80, 20
    F = rng.normal(size=(B, H))
    owner = np.repeat(np.arange(n_coarse), H // n_coarse).astype(np.int64)
    yield ("sv_stats", (F, owner, n_coarse, 1.0 / 320),
           kernels.sv_stats_numpy, kernels.sv_stats_numba)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--B", type=int, default=20000, help="replicate rows per call")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy path can run")
    print(f"{'kernel':<14}{'numpy s':>12}{'numba s':>12}{'speedup':>10}")
    for name, inputs, np_fn, nb_fn in cases(args.B, args.seed):
        nb_fn(*inputs)  # compile outside the timing
        t_np, out_np = best_of(lambda: np_fn(*inputs), args.reps)
        t_nb, out_nb = best_of(lambda: nb_fn(*inputs), args.reps)
        for a, b in zip(out_np, out_nb):
            np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12, equal_nan=True)
        print(f"{name:<14}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
