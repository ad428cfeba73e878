"""Compare the compiled and numpy path kernels.

    python3 benchmarks/bench_kernels.py [--n 20000] [--level 8] [--repeat 3]

Times the path-stepping kernel alone (increments drawn once up front) and
the full batch simulation including random number generation, and checks
that both backends return identical arrays.
"""
import argparse
import time

import numpy as np

from wmlmc import kernels
from wmlmc.sde import ModelSpec, SchemeSpec, brownian_increments, paths_from_increments


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--level", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}  (default {kernels.BACKEND})")
    cases = [
        ("GBM Euler", ModelSpec.gbm(), SchemeSpec("EulerMaruyama")),
        ("IGBM Milstein", ModelSpec.igbm(), SchemeSpec("Milstein")),
        ("CIR Milstein M=4", ModelSpec.cir(), SchemeSpec("Milstein", refinement=4, antithetic=True)),
    ]
    print(f"{'case':<18}{'backend':<9}{'kernel s':>10}{'Msteps/s':>10}{'rng s':>8}  identical")
    for name, model, scheme in cases:
        level = args.level if scheme.refinement == 2 else args.level // 2
        t_rng, dW = best_of(lambda: brownian_increments(scheme, model, level, 1, 0, args.n), 1)
        steps = args.n * scheme.steps(level) * (2 if scheme.antithetic else 1)
        ref = None
        for b in backends:
            k = kernels.get_kernel(b)
            t, out = best_of(lambda: paths_from_increments(model, scheme, level, dW, k), args.repeat)
            same = "" if ref is None else str(np.array_equal(ref, out, equal_nan=True))
            ref = out if ref is None else ref
            print(f"{name:<18}{b:<9}{t:>10.3f}{steps / t / 1e6:>10.1f}{t_rng:>8.3f}  {same}")


if __name__ == "__main__":
    main()
