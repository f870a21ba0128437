"""Triangle and edge product spaces of two shapes and the constraint rows of
the matching ILP (projection rows for X and Y, product-edge boundary rows).

Columns are product triangles. Every product triangle pairs an oriented
triangle of one shape with a (possibly degenerate) triangle of the other,
corner by corner, so it is stored as two vertex sequences ``x_seq`` and
``y_seq``. Its product edges run from corner ``k`` to corner ``k + 1``.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .mesh import Shape, validate

logger = logging.getLogger(__name__)

TT, TE, TV, ET, VT = range(5)
KIND_NAMES = ("TT", "TE", "TV", "ET", "VT")
ALL_KINDS = KIND_NAMES


class InfeasibleMatchingError(ValueError):
    pass


def canonical_triangles(tris: np.ndarray) -> np.ndarray:
    """Rotate every oriented triangle so its smallest vertex comes first."""
    tris = np.asarray(tris)
    k = np.argmin(tris, axis=1)
    idx = (k[:, None] + np.arange(3)[None]) % 3
    return np.take_along_axis(tris, idx, axis=1)


def degenerate_edge_sequences(edges: np.ndarray) -> np.ndarray:
    """All six corner sequences collapsing a triangle onto each edge (u, v).

    Returns shape (n_edges, 6, 3).
    """
    u, v = edges[:, 0], edges[:, 1]
    seqs = [(u, u, v), (u, v, u), (v, u, u), (u, v, v), (v, v, u), (v, u, v)]
    return np.stack([np.stack(s, axis=1) for s in seqs], axis=1)


@dataclass(frozen=True)
class ConstraintSystem:
    """Sparse constraint rows over the product-triangle columns.

    ``matrix`` stacks the X projection rows, the Y projection rows and the
    boundary rows in that order; ``rhs`` is 1 for projection rows and 0 for
    boundary rows.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_x_rows: int
    n_y_rows: int

    @property
    def n_boundary_rows(self) -> int:
        return self.matrix.shape[0] - self.n_x_rows - self.n_y_rows

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def piX(self) -> sp.csr_matrix:
        return self.matrix[: self.n_x_rows]

    @cached_property
    def piY(self) -> sp.csr_matrix:
        return self.matrix[self.n_x_rows: self.n_x_rows + self.n_y_rows]

    @cached_property
    def boundary(self) -> sp.csr_matrix:
        return self.matrix[self.n_x_rows + self.n_y_rows:]

    @cached_property
    def by_column(self) -> sp.csc_matrix:
        """Column-major copy: for each column the rows it appears in."""
        return self.matrix.tocsc()

    def rows_of(self, column: int) -> np.ndarray:
        c = self.by_column
        return c.indices[c.indptr[column]:c.indptr[column + 1]]

    def residual(self, gamma) -> np.ndarray:
        g = np.asarray(gamma, dtype=np.int64)
        m = self.matrix.astype(np.int64)
        return m @ g - self.rhs

    def is_feasible(self, gamma) -> bool:
        g = np.asarray(gamma)
        if g.shape != (self.matrix.shape[1],) or np.any((g != 0) & (g != 1)):
            return False
        return not np.any(self.residual(g))


class MatchedElement(NamedTuple):
    kind: str  # "triangle", "edge" or "vertex"
    vertices: tuple[int, ...]
    face: int  # triangle index for kind == "triangle", else -1


@dataclass(frozen=True)
class ProductSpace:
    """Enumerated product triangles, product edges and constraint rows."""

    n_x_vertices: int
    n_y_vertices: int
    n_x_faces: int
    n_y_faces: int
    x_seq: np.ndarray  # (nF, 3)
    y_seq: np.ndarray  # (nF, 3)
    kind: np.ndarray  # (nF,) codes TT..VT
    x_face: np.ndarray  # (nF,) X triangle or -1
    y_face: np.ndarray
    edge_row: np.ndarray  # (nF, 3) boundary row (0-based within the boundary block)
    edge_sign: np.ndarray  # (nF, 3) +1 if the column uses the row's orientation
    edges: np.ndarray  # (nE, 2, 2) product edge ((xa, ya), (xb, yb)) in row orientation
    constraints: ConstraintSystem

    @property
    def n_columns(self) -> int:
        return len(self.kind)

    def __len__(self) -> int:
        return len(self.kind)

    def __repr__(self) -> str:
        counts = np.bincount(self.kind, minlength=5)
        parts = ", ".join(f"{n}={c}" for n, c in zip(KIND_NAMES, counts))
        return (f"ProductSpace(|F|={self.n_columns}, |E|={len(self.edges)}, {parts})")

    @cached_property
    def pair_ids(self) -> np.ndarray:
        return self.x_seq.astype(np.int64) * self.n_y_vertices + self.y_seq

    def tt_column(self, x_face: int, y_face: int, shift: int) -> int:
        """Column of the TT product triangle aligning X corner k with Y corner k + shift.

        TT columns come first, ordered by (x_face, y_face, shift).
        """
        return (x_face * self.n_y_faces + y_face) * 3 + shift

    @cached_property
    def n_tt(self) -> int:
        return int(np.count_nonzero(self.kind == TT))

    def neighbors(self, f: int) -> np.ndarray:
        """Product triangles sharing one of ``f``'s product edges reversed."""
        if not 0 <= f < self.n_columns:
            raise IndexError(f"product triangle {f} out of range")
        b = self.constraints.boundary
        out = []
        for k in range(3):
            r = self.edge_row[f, k]
            lo, hi = b.indptr[r], b.indptr[r + 1]
            cols = b.indices[lo:hi]
            out.append(cols[b.data[lo:hi] == -self.edge_sign[f, k]])
        res = np.unique(np.concatenate(out))
        return res[res != f]

    def element(self, f: int, side: str) -> MatchedElement:
        seq = self.y_seq[f] if side == "Y" else self.x_seq[f]
        face = self.y_face[f] if side == "Y" else self.x_face[f]
        distinct = tuple(sorted(set(int(s) for s in seq)))
        if len(distinct) == 3:
            return MatchedElement("triangle", tuple(int(s) for s in seq), int(face))
        return MatchedElement("edge" if len(distinct) == 2 else "vertex", distinct, -1)

    def project_matching(self, gamma):
        """Per-triangle readout of a matching.

        Returns ``(map_X, map_Y)``: ``map_X[j]`` is the element of Y matched
        to triangle ``j`` of X, and symmetrically.
        """
        c = self.constraints
        g = np.asarray(gamma, dtype=np.int64)
        if np.any(c.piX @ g != 1) or np.any(c.piY @ g != 1):
            raise InfeasibleMatchingError("matching violates a projection row")
        sel = np.flatnonzero(g)
        map_X: list[MatchedElement | None] = [None] * self.n_x_faces
        map_Y: list[MatchedElement | None] = [None] * self.n_y_faces
        for f in sel:
            if self.x_face[f] >= 0:
                map_X[self.x_face[f]] = self.element(f, "Y")
            if self.y_face[f] >= 0:
                map_Y[self.y_face[f]] = self.element(f, "X")
        return map_X, map_Y

    def energy_of(self, energy, gamma) -> float:
        return float(np.dot(np.asarray(energy, dtype=float), np.asarray(gamma, dtype=float)))


def _check_shape(s: Shape, name: str) -> None:
    if s.n_triangles == 0:
        raise ValueError(f"shape {name} is empty")
    rep = validate(s)
    if not rep.closed:
        raise ValueError(f"shape {name} is not closed; apply close_holes first")
    if not (rep.oriented and rep.manifold):
        raise ValueError(f"shape {name} is not an oriented manifold: {rep.issues}")


def enumerate_product_triangles(X: Shape, Y: Shape, kinds=ALL_KINDS):
    """Corner sequences (x_seq, y_seq, kind, x_face, y_face) of the product space.

    TT columns come first, ordered by (x_face, y_face, shift); then TE, TV,
    ET and VT blocks.
    """
    kinds = set(kinds)
    tx = canonical_triangles(X.triangles)
    ty = canonical_triangles(Y.triangles)
    nfx, nfy = len(tx), len(ty)
    xs, ys, kd, xf, yf = [], [], [], [], []

    def add(xseq, yseq, code, xface, yface):
        xs.append(xseq.reshape(-1, 3))
        ys.append(yseq.reshape(-1, 3))
        n = len(xs[-1])
        kd.append(np.full(n, code, dtype=np.int8))
        xf.append(np.broadcast_to(xface, (n,)).astype(np.int32))
        yf.append(np.broadcast_to(yface, (n,)).astype(np.int32))

    if "TT" in kinds:
        shifts = np.stack([np.roll(ty, -s, axis=1) for s in range(3)], axis=1)  # (nfy, 3, 3)
        xseq = np.broadcast_to(tx[:, None, None, :], (nfx, nfy, 3, 3))
        yseq = np.broadcast_to(shifts[None], (nfx, nfy, 3, 3))
        add(xseq, yseq, TT, np.repeat(np.arange(nfx), nfy * 3),
            np.tile(np.repeat(np.arange(nfy), 3), nfx))
    if "TE" in kinds:
        deg = degenerate_edge_sequences(Y.undirected_edges).reshape(-1, 3)
        add(np.repeat(tx, len(deg), axis=0), np.tile(deg, (nfx, 1)), TE,
            np.repeat(np.arange(nfx), len(deg)), -1)
    if "TV" in kinds:
        yv = np.repeat(np.arange(Y.n_vertices)[:, None], 3, axis=1)
        add(np.repeat(tx, len(yv), axis=0), np.tile(yv, (nfx, 1)), TV,
            np.repeat(np.arange(nfx), len(yv)), -1)
    if "ET" in kinds:
        deg = degenerate_edge_sequences(X.undirected_edges).reshape(-1, 3)
        add(np.repeat(deg, nfy, axis=0), np.tile(ty, (len(deg), 1)), ET,
            -1, np.tile(np.arange(nfy), len(deg)))
    if "VT" in kinds:
        xv = np.repeat(np.arange(X.n_vertices)[:, None], 3, axis=1)
        add(np.repeat(xv, nfy, axis=0), np.tile(ty, (len(xv), 1)), VT,
            -1, np.tile(np.arange(nfy), len(xv)))
    if not xs:
        raise ValueError("no product triangle kinds selected")
    return (np.concatenate(xs).astype(np.int32), np.concatenate(ys).astype(np.int32),
            np.concatenate(kd), np.concatenate(xf), np.concatenate(yf))


def build_product_space(X: Shape, Y: Shape, kinds=ALL_KINDS) -> ProductSpace:
    """Enumerate the product space of two closed shapes and its constraint rows.

    ``kinds`` restricts the enumeration (e.g. ``("TT",)`` for the
    triangle-triangle subproblem). Boundary rows with an empty side would
    force all their columns to zero; such columns are removed up front.
    """
    _check_shape(X, "X")
    _check_shape(Y, "Y")
    x_seq, y_seq, kind, x_face, y_face = enumerate_product_triangles(X, Y, kinds)
    while True:
        space = _assemble(X, Y, x_seq, y_seq, kind, x_face, y_face)
        b = space.constraints.boundary
        plus = np.bincount(b.nonzero()[0][b.data > 0], minlength=b.shape[0])
        minus = np.bincount(b.nonzero()[0][b.data < 0], minlength=b.shape[0])
        dead_rows = np.flatnonzero((plus == 0) | (minus == 0))
        if len(dead_rows) == 0:
            return space
        logger.warning("dropping %d unbalanced product-edge rows", len(dead_rows))
        dead = np.isin(space.edge_row, dead_rows).any(axis=1)
        keep = ~dead
        x_seq, y_seq, kind = x_seq[keep], y_seq[keep], kind[keep]
        x_face, y_face = x_face[keep], y_face[keep]
        if not keep.any():
            raise ValueError("product space is empty after removing unbalanced rows")


def _assemble(X, Y, x_seq, y_seq, kind, x_face, y_face) -> ProductSpace:
    nvy = Y.n_vertices
    pid = x_seq.astype(np.int64) * nvy + y_seq
    a = pid
    b = np.roll(pid, -1, axis=1)
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    n_pairs = np.int64(X.n_vertices) * nvy
    key = lo * n_pairs + hi
    ukey, inv = np.unique(key.ravel(), return_inverse=True)
    edge_row = inv.reshape(-1, 3).astype(np.int32)
    edge_sign = np.where(a < b, 1, -1).astype(np.int8)
    e_lo, e_hi = ukey // n_pairs, ukey % n_pairs
    edges = np.stack([np.stack([e_lo // nvy, e_lo % nvy], axis=1),
                      np.stack([e_hi // nvy, e_hi % nvy], axis=1)], axis=1)

    nF = len(kind)
    nfx, nfy = X.n_triangles, Y.n_triangles
    cols = np.arange(nF)
    rows, vals, cc = [], [], []
    mx = x_face >= 0
    rows.append(x_face[mx].astype(np.int64)); cc.append(cols[mx]); vals.append(np.ones(mx.sum(), np.int8))
    my = y_face >= 0
    rows.append(nfx + y_face[my].astype(np.int64)); cc.append(cols[my]); vals.append(np.ones(my.sum(), np.int8))
    rows.append(nfx + nfy + edge_row.ravel().astype(np.int64))
    cc.append(np.repeat(cols, 3))
    vals.append(edge_sign.ravel())
    n_rows = nfx + nfy + len(ukey)
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cc))),
                        shape=(n_rows, nF), dtype=np.int8)
    mat.sort_indices()
    rhs = np.concatenate([np.ones(nfx + nfy, np.int64), np.zeros(len(ukey), np.int64)])
    cons = ConstraintSystem(mat, rhs, nfx, nfy)
    return ProductSpace(X.n_vertices, Y.n_vertices, nfx, nfy, x_seq, y_seq, kind,
                        x_face, y_face, edge_row, edge_sign, edges.astype(np.int32), cons)


def product_space_size(n_fx: int, n_vx: int, n_ex: int, n_fy: int, n_vy: int, n_ey: int) -> int:
    """Closed-form |F| of the enumeration used by :func:`build_product_space`."""
    return 3 * n_fx * n_fy + n_fx * (6 * n_ey + n_vy) + n_fy * (6 * n_ex + n_vx)


# --------------------------------------------------------------------- binary dump

_MAGIC = b"SMPS"
_VERSION = 1


def save_product_space(path, space: ProductSpace) -> None:
    """Binary dump: magic, version, sizes, then little-endian int32 arrays."""
    head = struct.pack("<4sIIIIII", _MAGIC, _VERSION, space.n_x_vertices, space.n_y_vertices,
                       space.n_x_faces, space.n_y_faces, space.n_columns)
    with open(path, "wb") as fh:
        fh.write(head)
        for arr in (space.x_seq, space.y_seq, space.x_face, space.y_face):
            fh.write(np.ascontiguousarray(arr, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(space.kind, dtype="<i1").tobytes())


def load_product_space(path, X: Shape, Y: Shape) -> ProductSpace:
    with open(path, "rb") as fh:
        data = fh.read()
    size = struct.calcsize("<4sIIIIII")
    if len(data) < size:
        raise ValueError("truncated product-space file")
    magic, version, nvx, nvy, nfx, nfy, nF = struct.unpack_from("<4sIIIIII", data)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not a product-space file of a supported version")
    if (nvx, nvy, nfx, nfy) != (X.n_vertices, Y.n_vertices, X.n_triangles, Y.n_triangles):
        raise ValueError("product-space file does not belong to these shapes")
    pos = size
    arrs = []
    for width in (3, 3, 1, 1):
        n = nF * width
        arrs.append(np.frombuffer(data, dtype="<i4", count=n, offset=pos).reshape(nF, width)
                    if width == 3 else np.frombuffer(data, dtype="<i4", count=n, offset=pos))
        pos += 4 * n
    kind = np.frombuffer(data, dtype="<i1", count=nF, offset=pos)
    x_seq, y_seq, x_face, y_face = (a.astype(np.int32) for a in arrs)
    return _assemble(X, Y, x_seq, y_seq, kind.astype(np.int8), x_face, y_face)
