"""Partial-to-partial matching of sphere caps over a range of overlaps.

For each overlap level two caps are cut from one sphere, their boundaries
are closed with hole patches, and the pair is matched. Prints the share of
real surface matched to real surface next to the overlap.

    python3 scripts/partial_sweep.py --faces 80 --overlaps 0.6 0.7 0.8
"""

import argparse
import time

from shapematch import meshgen
from shapematch.energy import compute_energy, normalize_shapes
from shapematch.evaluate import (GroundTruth, geodesic_error, hole_match_stats, pck_auc,
                                 vertex_map_from_matching)
from shapematch.mesh import close_holes
from shapematch.primal import SolverConfig, solve_problem
from shapematch.product_space import build_product_space


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--faces", type=int, default=80)
    p.add_argument("--overlaps", type=float, nargs="+", default=[0.6, 0.7, 0.8])
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--w-hole", type=float, default=None)
    args = p.parse_args()
    config = SolverConfig()
    if args.w_hole is not None:
        config = SolverConfig(weights={"w_hole": args.w_hole})
    print("overlap real_to_real real_to_hole hole_matches auc energy lower_bound seconds")
    for ov in args.overlaps:
        A, B, measured, pairs = meshgen.partial_pair(args.faces, ov, seed=args.seed)
        t0 = time.perf_counter()
        X, Y = normalize_shapes(close_holes(A), close_holes(B))
        space = build_product_space(X, Y)
        m = solve_problem(space, compute_energy(X, Y, space, config.weights).costs, X, Y, config)
        s = hole_match_stats(m.assignment, space, X, Y)
        vmap = vertex_map_from_matching(m.assignment, space, X, Y)
        auc = pck_auc(geodesic_error(vmap, GroundTruth(pairs), Y))[1]
        print(f"{measured:.3f} {s['real_to_real']:.3f} {s['real_to_hole']:.3f} "
              f"{s['n_hole_matches']} {auc:.3f} {m.energy:.6g} {m.lower_bound:.6g} "
              f"{time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
