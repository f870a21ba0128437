"""Command line: ``shapematch match | transfer | eval``.

Exit codes: 0 success, 2 usage, 3 input/output error, 4 invalid mesh or
inconsistent input, 5 rounding failure, 6 document does not fit the shapes.
The log level is read from ``SHAPEMATCH_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .document import DocumentError, MatchingDocument, build_document, file_sha256, gamma_from_document
from .energy import EnergyWeights, compute_energy, normalize_shapes
from .evaluate import (GeodesicError, geodesic_error, height_colors, identity_ground_truth,
                       load_ground_truth, pck_auc, save_pck_csv, transfer_vertex_values,
                       vertex_map_from_matching)
from .mesh import MeshError, Shape, close_holes, load_shape, save_ply, validate
from .oracle import OracleInfeasibleError, OracleLimitError, brute_force_ilp, tt_polynomial_solve
from .primal import RoundingError, SolverConfig, solve_problem
from .product_space import build_product_space

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID, EXIT_ROUNDING, EXIT_DOCUMENT = 0, 2, 3, 4, 5, 6

logger = logging.getLogger("shapematch")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------- helpers

def _load(path, partial: bool) -> Shape:
    try:
        shape = load_shape(path)
    except FileNotFoundError as exc:
        raise CliError(f"cannot read {path}: no such file", EXIT_IO) from exc
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except MeshError as exc:
        raise CliError(f"{path}: {exc}", EXIT_INVALID) from exc
    rep = validate(shape)
    if not rep.manifold or not rep.oriented:
        raise CliError(f"{path}: mesh is not an oriented manifold ({'; '.join(rep.issues)})",
                       EXIT_INVALID)
    if not rep.closed:
        if not partial:
            raise CliError(f"{path}: mesh has {len(rep.boundary_loops)} boundary loop(s); "
                           "use --partial to close them", EXIT_INVALID)
        shape = close_holes(shape)
    return shape


def _config(args) -> SolverConfig:
    """Defaults, overridden by the config file, overridden by flags."""
    values: dict = {}
    weights = dataclasses.asdict(EnergyWeights())
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc}", EXIT_IO) from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config {args.config} is not valid JSON: {exc}", EXIT_INVALID) from exc
        weights.update(data.pop("weights", {}))
        for k in ("w_membrane", "w_bend", "w_hole"):
            if k in data:
                weights[k] = data.pop(k)
        known = {f.name for f in dataclasses.fields(SolverConfig)}
        unknown = set(data) - known
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}", EXIT_INVALID)
        values.update(data)
    for flag, key in (("w_membrane", "w_membrane"), ("w_bend", "w_bend"), ("w_hole", "w_hole")):
        if getattr(args, flag) is not None:
            weights[key] = getattr(args, flag)
    for flag, key in (("dual_passes", "dual_passes"), ("alpha", "alpha_factor"),
                      ("max_backtracks", "max_backtracks_per_round"),
                      ("seed_triangle", "seed_triangle")):
        if getattr(args, flag) is not None:
            values[key] = getattr(args, flag)
    try:
        return SolverConfig(weights=EnergyWeights(**weights), **values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_INVALID) from exc


def _config_echo(config: SolverConfig) -> dict:
    d = dataclasses.asdict(config)
    return {k: v for k, v in d.items() if k not in ("debug", "log_every")}


def _set_threads(n):
    if n is None:
        return
    import numba
    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def _load_doc(path) -> MatchingDocument:
    try:
        return MatchingDocument.load(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except DocumentError as exc:
        raise CliError(f"{path}: {exc}", EXIT_DOCUMENT) from exc


def _reload_matching(args):
    """Document, shapes (closed as at match time), product space and gamma."""
    doc = _load_doc(args.document)
    partial = bool(doc.header.get("partial", False))
    X, Y = _load(args.shape_x, partial), _load(args.shape_y, partial)
    try:
        doc.check_shapes(args.shape_x, args.shape_y)
        space = build_product_space(X, Y)
        gamma = gamma_from_document(doc, space)
    except DocumentError as exc:
        raise CliError(str(exc), EXIT_DOCUMENT) from exc
    if not space.constraints.is_feasible(gamma):
        raise CliError("document matching violates the constraints of the product space",
                       EXIT_DOCUMENT)
    return doc, X, Y, space, gamma


# --------------------------------------------------------------------- commands

def cmd_match(args) -> int:
    config = _config(args)
    _set_threads(args.threads)
    t0 = time.perf_counter()
    X, Y = _load(args.shape_x, args.partial), _load(args.shape_y, args.partial)
    Xn, Yn = normalize_shapes(X, Y)
    space = build_product_space(Xn, Yn)
    energy = compute_energy(Xn, Yn, space, config.weights).costs
    lb = None
    try:
        if args.oracle == "tt":
            res = tt_polynomial_solve(Xn, Yn, space, energy)
            gamma, value = res.optimal_assignment, res.optimal_value
        elif args.oracle == "ilp":
            res = brute_force_ilp(energy, space.constraints, variable_limit=10 ** 7)
            gamma, value = res.optimal_assignment, res.optimal_value
            lb = value
        else:
            m = solve_problem(space, energy, Xn, Yn, config)
            gamma, value, lb = m.assignment, m.energy, m.lower_bound
    except (RoundingError, OracleInfeasibleError, OracleLimitError) as exc:
        raise CliError(f"no matching found: {exc}", EXIT_ROUNDING) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    if not space.constraints.is_feasible(gamma):
        raise CliError("solver returned an infeasible matching", EXIT_ROUNDING)
    header = {
        "tool_version": __version__,
        "shapes": {side: {"file": Path(p).name, "sha256": file_sha256(p),
                          "n_vertices": s.n_vertices, "n_triangles": s.n_triangles}
                   for side, p, s in (("X", args.shape_x, X), ("Y", args.shape_y, Y))},
        "partial": bool(args.partial),
        "solver": args.oracle or "primal",
        "config": _config_echo(config),
        "energy": float(value),
        "lower_bound": None if lb is None else float(lb),
        "wall_time": round(time.perf_counter() - t0, 3),
    }
    doc = build_document(gamma, space, Xn, Yn, header)
    out = args.out or "matching.json"
    try:
        doc.save(out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from exc
    lb_text = "none" if lb is None else f"{lb:.10g}"
    print(f"energy={value:.10g} lower_bound={lb_text} matches={len(doc.matches)} out={out}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    _, X, Y, space, gamma = _reload_matching(args)
    if args.field:
        try:
            field = np.loadtxt(args.field, ndmin=1)
        except OSError as exc:
            raise CliError(f"cannot read {args.field}: {exc}", EXIT_IO) from exc
        if field.shape[0] != X.n_vertices:
            raise CliError(f"field has {field.shape[0]} rows, X has {X.n_vertices} vertices",
                           EXIT_INVALID)
    else:
        field = height_colors(X, axis=args.axis).astype(float)
    values = transfer_vertex_values(gamma, space, field)
    if values.ndim == 1 or values.shape[1] == 1:
        v = values.ravel()
        span = np.ptp(v) or 1.0
        t = (v - v.min()) / span
        colors = np.round(255 * np.stack([t, np.zeros_like(t), 1 - t], axis=1))
    else:
        colors = values[:, :3]
    colors = np.clip(np.nan_to_num(colors), 0, 255).astype(np.uint8)
    out = args.out or "transfer.ply"
    try:
        save_ply(out, Y, colors=colors)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from exc
    print(f"out={out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _, X, Y, space, gamma = _reload_matching(args)
    try:
        if args.gt:
            gt = load_ground_truth(args.gt, args.normalization)
        else:
            if X.n_vertices != Y.n_vertices:
                raise CliError("identity ground truth needs equal vertex counts", EXIT_INVALID)
            gt = identity_ground_truth(X.n_vertices, args.normalization)
        gt.check(X, Y)
    except OSError as exc:
        raise CliError(f"cannot read {args.gt}: {exc}", EXIT_IO) from exc
    except ValueError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    vmap = vertex_map_from_matching(gamma, space, X, Y)
    try:
        err = geodesic_error(vmap, gt, Y)
    except (GeodesicError, ValueError) as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    curve, auc = pck_auc(err)
    if args.out:
        try:
            save_pck_csv(args.out, curve)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from exc
    print(f"auc={auc:.6f}")
    return EXIT_OK


# --------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapematch", description="Combinatorial 3D shape matching.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("match", help="match two triangle meshes")
    m.add_argument("shape_x")
    m.add_argument("shape_y")
    m.add_argument("-o", "--out", help="output JSON document (default matching.json)")
    m.add_argument("--partial", action="store_true", help="close boundary loops with hole patches")
    m.add_argument("--w-membrane", type=float)
    m.add_argument("--w-bend", type=float)
    m.add_argument("--w-hole", type=float)
    m.add_argument("--dual-passes", type=int)
    m.add_argument("--alpha", type=float, help="recomputation interval factor")
    m.add_argument("--max-backtracks", type=int, help="backtracks per recomputation round")
    m.add_argument("--threads", type=int)
    m.add_argument("--oracle", choices=("tt", "ilp"),
                   help="solve exactly instead: triangle-triangle only or full ILP (tiny inputs)")
    m.add_argument("--seed-triangle", type=int, help="product triangle column used as seed")
    m.add_argument("--config", help="JSON file with solver settings")
    m.set_defaults(func=cmd_match)

    t = sub.add_parser("transfer", help="transfer per-vertex colors from X to Y")
    t.add_argument("document")
    t.add_argument("shape_x")
    t.add_argument("shape_y")
    t.add_argument("--field", help="text file with one value or RGB row per X vertex")
    t.add_argument("--axis", type=int, default=2, choices=(0, 1, 2),
                   help="height axis for the default color ramp")
    t.add_argument("-o", "--out", help="output PLY (default transfer.ply)")
    t.set_defaults(func=cmd_transfer)

    e = sub.add_parser("eval", help="geodesic error curve against ground truth")
    e.add_argument("document")
    e.add_argument("shape_x")
    e.add_argument("shape_y")
    e.add_argument("--gt", help="two-column ground-truth file (default: identity)")
    e.add_argument("--normalization", default="geodesic-diameter",
                   choices=("geodesic-diameter", "sqrt-area"))
    e.add_argument("-o", "--out", help="PCK curve CSV")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    level = os.environ.get("SHAPEMATCH_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except CliError as exc:
        print(f"shapematch: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
