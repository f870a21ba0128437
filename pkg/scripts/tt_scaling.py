"""Runtime of the triangle-triangle solver on relabeled sphere copies.

Prints one line per size and the log-log slope of runtime over face count.

    python3 scripts/tt_scaling.py --sizes 20 50 100 200 500
"""

import argparse
import time

import numpy as np

from shapematch.meshgen import fibonacci_sphere
from shapematch.oracle import tt_polynomial_solve
from shapematch.product_space import build_product_space


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sizes", type=int, nargs="+", default=[20, 50, 100, 200, 500])
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    times = []
    print("faces columns build_s solve_s")
    for n in args.sizes:
        X = fibonacci_sphere(n, jitter=0.15, seed=n)
        Y = X.relabeled(np.random.default_rng(n).permutation(X.n_vertices))
        t0 = time.perf_counter()
        space = build_product_space(X, Y, kinds=("TT",))
        build = time.perf_counter() - t0
        e = np.zeros(space.n_columns)
        best = np.inf
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            tt_polynomial_solve(X, Y, space, e)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
        print(f"{n} {space.n_columns} {build:.3f} {best:.4f}")
    slope = np.polyfit(np.log(args.sizes), np.log(times), 1)[0]
    print(f"slope {slope:.2f}")


if __name__ == "__main__":
    main()
