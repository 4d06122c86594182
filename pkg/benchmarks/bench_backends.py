"""Time the numba kernels against their numpy fallbacks.

Run ``python3 benchmarks/bench_backends.py``.  Each case is timed under
both backends (``SARDKIT_BACKEND``) after one warm-up call, so numba
compilation is excluded, and the outputs are checked to agree.  The numpy
pair-force path materializes every interacting pair, so keep its agent
counts modest.
"""

import argparse
import os
import time

import numpy as np

from sardkit.geometry import build_stars, grid_domain
from sardkit.gfdm import star_moments
from sardkit.particles import pair_forces


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def run_both(fn, repeats):
    results = {}
    for name in ("numpy", "numba"):
        os.environ["SARDKIT_BACKEND"] = name
        fn()
        results[name] = best_of(fn, repeats)
    os.environ.pop("SARDKIT_BACKEND", None)
    return results


def pair_force_case(agents, seed):
    pos = np.random.default_rng(seed).random((agents, 2))
    return lambda: pair_forces(pos, 1.0, 1.0, 0.15, 0.4)


def moment_case(side):
    dom = grid_domain(side)
    stars = build_stars(dom)
    offsets = stars.offsets
    dm = stars.dm
    w2 = np.ones(offsets.shape[:2])
    return lambda: star_moments(offsets, w2, dm)


def max_gap(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.abs(x - y).max() / max(np.abs(x).max(), 1e-300)) for x, y in zip(a, b))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--agents", type=int, nargs="+", default=[1000, 2000, 5000])
    parser.add_argument("--grids", type=int, nargs="+", default=[50, 100, 200])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    print(f"{'case':28s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'rel gap':>9s}")
    cases = [(f"pair forces, {n} agents", pair_force_case(n, args.seed)) for n in args.agents]
    cases += [(f"GFDM moments, {k}x{k} grid", moment_case(k)) for k in args.grids]
    for label, fn in cases:
        res = run_both(fn, args.repeats)
        t_np, out_np = res["numpy"]
        t_nb, out_nb = res["numba"]
        print(f"{label:28s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {max_gap(out_np, out_nb):9.1e}")


if __name__ == "__main__":
    main()
