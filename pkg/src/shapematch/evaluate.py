"""Scoring matchings: vertex maps, geodesic errors and PCK curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import dijkstra

from .mesh import Shape
from .product_space import InfeasibleMatchingError, ProductSpace

NORMALIZATIONS = ("geodesic-diameter", "sqrt-area")


class GeodesicError(ValueError):
    """A target vertex is unreachable from the mapped vertex."""


@dataclass(frozen=True)
class GroundTruth:
    pairs: np.ndarray  # (n, 2): vertex of X, vertex of Y
    normalization: str = "geodesic-diameter"

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if len(p) == 0:
            raise ValueError("ground truth needs at least one pair")
        if np.any(p < 0):
            raise ValueError("negative vertex index in ground truth")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        object.__setattr__(self, "pairs", p)

    def check(self, X: Shape, Y: Shape) -> None:
        if self.pairs[:, 0].max() >= X.n_vertices or self.pairs[:, 1].max() >= Y.n_vertices:
            raise ValueError("ground-truth vertex index out of range")


def identity_ground_truth(n_vertices: int, normalization: str = "geodesic-diameter") -> GroundTruth:
    v = np.arange(n_vertices)
    return GroundTruth(np.stack([v, v], axis=1), normalization)


def load_ground_truth(path, normalization: str = "geodesic-diameter") -> GroundTruth:
    """Two whitespace-separated columns of vertex indices (X, Y); ``#`` starts a comment."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"expected two vertex indices per line, got {line!r}")
        rows.append((int(parts[0]), int(parts[1])))
    if not rows:
        raise ValueError(f"ground-truth file {path} is empty")
    return GroundTruth(np.array(rows), normalization)


def save_ground_truth(path, gt: GroundTruth) -> None:
    np.savetxt(path, gt.pairs, fmt="%d")


# --------------------------------------------------------------------- geodesics

def edge_graph(shape: Shape) -> sp.csr_matrix:
    """Symmetric sparse graph of mesh edges weighted by Euclidean length."""
    e = shape.undirected_edges
    p = shape.vertex_positions
    w = np.linalg.norm(p[e[:, 0]] - p[e[:, 1]], axis=1)
    n = shape.n_vertices
    g = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]),
                                                 np.concatenate([e[:, 1], e[:, 0]]))), shape=(n, n))
    return g.tocsr()


def geodesic_distances(shape: Shape, sources) -> np.ndarray:
    """Graph-geodesic distances from each source to all vertices (``inf`` if unreachable)."""
    src = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    return np.atleast_2d(dijkstra(edge_graph(shape), directed=False, indices=src))


def geodesic_diameter(shape: Shape, n_sources: int = 20) -> float:
    """Largest finite geodesic distance seen from farthest-point-sampled sources."""
    g = edge_graph(shape)
    src = 0
    best = 0.0
    seen = np.full(shape.n_vertices, np.inf)
    for _ in range(min(n_sources, shape.n_vertices)):
        d = dijkstra(g, directed=False, indices=src)
        finite = np.isfinite(d)
        best = max(best, float(d[finite].max()))
        seen = np.minimum(seen, d)
        cand = np.where(np.isfinite(seen), seen, -1.0)
        src = int(np.argmax(cand))
    return best


def normalizer(shape: Shape, kind: str = "geodesic-diameter") -> float:
    if kind == "geodesic-diameter":
        return geodesic_diameter(shape)
    if kind == "sqrt-area":
        return float(np.sqrt(shape.triangle_areas[~shape.hole_triangle_flags].sum()))
    raise ValueError(f"unknown normalization {kind!r}")


# --------------------------------------------------------------------- vertex maps

@dataclass
class VertexMap:
    """Target vertex of Y for every vertex of X (-1 if the vertex is unmatched)."""

    target: np.ndarray
    n_candidates: np.ndarray  # distinct Y vertices proposed per X vertex

    def points(self, Y: Shape) -> np.ndarray:
        out = np.full((len(self.target), 3), np.nan)
        ok = self.target >= 0
        out[ok] = Y.vertex_positions[self.target[ok]]
        return out


def vertex_pairs(gamma, space: ProductSpace) -> np.ndarray:
    """(X vertex, Y vertex) corner pairs of all selected product triangles."""
    sel = np.flatnonzero(np.asarray(gamma))
    return np.stack([space.x_seq[sel].ravel(), space.y_seq[sel].ravel()], axis=1).astype(np.int64)


def vertex_map_from_matching(gamma, space: ProductSpace, X: Shape, Y: Shape) -> VertexMap:
    """Map each X vertex to the geodesic medoid of the Y vertices it is paired with.

    A vertex usually appears in several selected product triangles. Its
    candidates are weighted by how often they occur; the candidate with the
    smallest weighted geodesic distance sum to the others wins, ties going
    to the smallest index.
    """
    g = np.asarray(gamma)
    if not space.constraints.is_feasible(g):
        raise InfeasibleMatchingError("vertex maps need a feasible matching")
    pairs = vertex_pairs(g, space)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    target = -np.ones(X.n_vertices, dtype=np.int64)
    n_cand = np.zeros(X.n_vertices, dtype=np.int64)
    starts = np.searchsorted(uniq[:, 0], np.arange(X.n_vertices + 1))
    multi = []
    for v in range(X.n_vertices):
        lo, hi = starts[v], starts[v + 1]
        n_cand[v] = hi - lo
        if hi - lo == 1:
            target[v] = uniq[lo, 1]
        elif hi > lo:
            multi.append(v)
    if multi:
        graph = edge_graph(Y)
        for v in multi:
            lo, hi = starts[v], starts[v + 1]
            cand, w = uniq[lo:hi, 1], counts[lo:hi]
            d = dijkstra(graph, directed=False, indices=cand)[:, cand]
            spread = np.where(np.isfinite(d), d, 1e300) @ w
            target[v] = cand[np.lexsort((cand, spread))[0]]
    return VertexMap(target, n_cand)


def geodesic_error(vmap: VertexMap | np.ndarray, gt: GroundTruth, Y: Shape,
                   norm: float | None = None) -> np.ndarray:
    """Normalized geodesic distance between mapped and true target, per ground-truth pair."""
    target = vmap.target if isinstance(vmap, VertexMap) else np.asarray(vmap, dtype=np.int64)
    if gt.pairs[:, 0].max() >= len(target) or gt.pairs[:, 1].max() >= Y.n_vertices:
        raise ValueError("ground-truth vertex index out of range")
    mapped = target[gt.pairs[:, 0]]
    if np.any(mapped < 0):
        raise ValueError("ground truth refers to an unmatched vertex")
    true = gt.pairs[:, 1]
    src, inv = np.unique(true, return_inverse=True)
    d = geodesic_distances(Y, src)[inv, mapped]
    if not np.all(np.isfinite(d)):
        k = int(np.flatnonzero(~np.isfinite(d))[0])
        raise GeodesicError(f"vertex {int(true[k])} of Y is not reachable from vertex "
                            f"{int(mapped[k])} (disconnected component)")
    if norm is None:
        norm = normalizer(Y, gt.normalization)
    if not norm > 0:
        raise ValueError("normalizer must be positive")
    return d / norm


def pck_auc(errors, thresholds=None) -> tuple[np.ndarray, float]:
    """Fraction of errors ``<= t`` for each threshold, and the mean of that curve.

    The default grid has 101 uniform thresholds on ``[0, 1]``.
    """
    err = np.asarray(errors, dtype=float).ravel()
    if err.size == 0:
        raise ValueError("no errors given")
    t = np.linspace(0.0, 1.0, 101) if thresholds is None else np.asarray(thresholds, dtype=float)
    s = np.sort(err)
    curve = np.searchsorted(s, t, side="right") / err.size
    return curve, float(curve.mean())


def save_pck_csv(path, curve, thresholds=None) -> None:
    t = np.linspace(0.0, 1.0, len(curve)) if thresholds is None else np.asarray(thresholds)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fraction"])
        for a, b in zip(t, curve):
            w.writerow([f"{a:.6g}", f"{b:.6g}"])


# --------------------------------------------------------------------- transfer

def transfer_vertex_values(gamma, space: ProductSpace, values_x) -> np.ndarray:
    """Per-vertex values of Y as the mean over the X vertices paired with each Y vertex."""
    vals = np.asarray(values_x, dtype=float)
    if vals.shape[0] != space.n_x_vertices:
        raise ValueError("one value per X vertex expected")
    pairs = np.unique(vertex_pairs(gamma, space), axis=0)
    flat = vals.reshape(len(vals), -1)
    out = np.zeros((space.n_y_vertices, flat.shape[1]))
    cnt = np.bincount(pairs[:, 1], minlength=space.n_y_vertices).astype(float)
    np.add.at(out, pairs[:, 1], flat[pairs[:, 0]])
    with np.errstate(invalid="ignore"):
        out /= cnt[:, None]
    return out.reshape((space.n_y_vertices,) + vals.shape[1:])


def height_colors(shape: Shape, axis: int = 2) -> np.ndarray:
    """RGB colors (uint8) from a blue-to-red ramp over one coordinate."""
    h = shape.vertex_positions[:, axis]
    span = h.max() - h.min()
    t = (h - h.min()) / span if span > 0 else np.zeros_like(h)
    rgb = np.stack([t, 0.2 + 0.6 * (1 - np.abs(2 * t - 1)), 1 - t], axis=1)
    return np.round(255 * rgb).astype(np.uint8)


# --------------------------------------------------------------------- partial pairs

def hole_match_stats(gamma, space: ProductSpace, X: Shape, Y: Shape) -> dict:
    """Area shares of X surface matched to real Y surface versus hole patches.

    ``real_to_real`` is the share of X's non-hole area whose product
    triangles have a non-hole element on the Y side.
    """
    sel = np.flatnonzero(np.asarray(gamma))
    xf = space.x_face[sel]
    has_x = xf >= 0
    x_real = np.zeros(len(sel), dtype=bool)
    x_real[has_x] = ~X.hole_triangle_flags[xf[has_x]]
    yf = space.y_face[sel]
    y_in_hole = np.where(yf >= 0, Y.hole_triangle_flags[np.maximum(yf, 0)],
                         Y.hole_vertex_flags[space.y_seq[sel]].any(axis=1))
    area = np.zeros(len(sel))
    area[has_x] = X.triangle_areas[xf[has_x]]
    total = float(area[x_real].sum())
    rr = float(area[x_real & ~y_in_hole].sum())
    return {"real_to_real": rr / total if total > 0 else 0.0,
            "real_to_hole": (total - rr) / total if total > 0 else 0.0,
            "n_hole_matches": int(np.count_nonzero(~x_real | y_in_hole))}
