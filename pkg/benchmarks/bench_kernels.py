"""Compiled versus pure-Python spanned-tree kernels.

Builds trees from one excursion per repetition and times the two sweeps
(previous-smaller parents and path minima) with each backend. Both must
return identical arrays.

    python3 benchmarks/bench_kernels.py --leaves 1000 --n-grid 16384 --reps 20
"""

import argparse
import time

import numpy as np

from crtprune import _kernels_py, crtfrag, kernels


def _time(fn, args, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--leaves", type=int, default=1000)
    p.add_argument("--n-grid", type=int, default=2 ** 14)
    p.add_argument("--trees", type=int, default=5)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    if kernels.BACKEND != "cython":
        print("compiled extension not available; only the fallback is timed")
    rng = np.random.default_rng(args.seed)
    rows = []
    for _ in range(args.trees):
        exc = crtfrag.sample_excursion(args.n_grid, rng)
        tree = crtfrag.build_spanned_tree(exc, args.leaves, rng, theta_max=2.0)
        sweep = (tree.branch, tree.heights, tree.parent, tree.cut_ptr,
                 tree.cut_height, tree.cut_prefix_min)
        t_py_p, par_py = _time(_kernels_py.previous_smaller, (tree.branch,), args.reps)
        t_py_m, c_py = _time(_kernels_py.path_min_clocks, sweep, args.reps)
        t_cy_p, par_cy = _time(kernels.previous_smaller, (tree.branch,), args.reps)
        t_cy_m, c_cy = _time(kernels.path_min_clocks, sweep, args.reps)
        assert np.array_equal(par_py, par_cy) and np.array_equal(c_py, c_cy)
        rows.append((t_py_p, t_cy_p, t_py_m, t_cy_m))
    r = np.median(np.array(rows), axis=0)
    print(f"backend={kernels.BACKEND} leaves={args.leaves} n_grid={args.n_grid}")
    print(f"{'kernel':<18}{'python [ms]':>12}{'compiled [ms]':>15}{'speed-up':>10}")
    for name, py, cy in (("previous_smaller", r[0], r[1]), ("path_min_clocks", r[2], r[3])):
        print(f"{name:<18}{1e3 * py:>12.3f}{1e3 * cy:>15.3f}{py / cy:>10.1f}")


if __name__ == "__main__":
    main()
