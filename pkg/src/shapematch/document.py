"""JSON documents holding a matching between two shape files.

Matches are stored as the three (X vertex, Y vertex) corner pairs of every
selected product triangle, so documents stay valid if the column order of
the product space changes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mesh import Shape
from .product_space import KIND_NAMES, ProductSpace

FORMAT = "shapematch-matching"
FORMAT_VERSION = 1


class DocumentError(ValueError):
    """Document does not fit the given shapes (hash mismatch, unknown match)."""


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class MatchingDocument:
    header: dict
    matches: list = field(default_factory=list)  # [{"pairs": [[x, y]] * 3, "kind": str, "hole": bool}]

    def to_json(self) -> str:
        doc = {"format": FORMAT, "version": FORMAT_VERSION, "header": self.header,
               "matches": self.matches}
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MatchingDocument":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DocumentError(f"not a JSON document: {exc}") from exc
        if not isinstance(doc, dict) or doc.get("format") != FORMAT:
            raise DocumentError("not a matching document")
        if doc.get("version") != FORMAT_VERSION:
            raise DocumentError(f"unsupported document version {doc.get('version')}")
        matches = doc.get("matches")
        if not isinstance(matches, list):
            raise DocumentError("document has no match list")
        for m in matches:
            p = m.get("pairs") if isinstance(m, dict) else None
            if (not isinstance(p, list) or len(p) != 3
                    or any(not isinstance(q, list) or len(q) != 2 for q in p)):
                raise DocumentError("every match needs three [x, y] vertex pairs")
        return cls(doc.get("header", {}), matches)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "MatchingDocument":
        return cls.from_json(Path(path).read_text())

    @property
    def pairs(self) -> np.ndarray:
        """(n_matches, 3, 2) array of corner pairs."""
        return np.array([m["pairs"] for m in self.matches], dtype=np.int64).reshape(-1, 3, 2)

    def check_shapes(self, path_x, path_y) -> None:
        for side, path in (("X", path_x), ("Y", path_y)):
            want = self.header.get("shapes", {}).get(side, {}).get("sha256")
            got = file_sha256(path)
            if want != got:
                raise DocumentError(f"shape {side} ({path}) does not match the document "
                                    f"(sha256 {got[:12]} != {str(want)[:12]})")


def _in_hole(space: ProductSpace, X: Shape, Y: Shape, cols: np.ndarray) -> np.ndarray:
    def side(shape, seq, face):
        return np.where(face >= 0, shape.hole_triangle_flags[np.maximum(face, 0)],
                        shape.hole_vertex_flags[seq].any(axis=1))
    return (side(X, space.x_seq[cols], space.x_face[cols])
            | side(Y, space.y_seq[cols], space.y_face[cols]))


def build_document(gamma, space: ProductSpace, X: Shape, Y: Shape, header: dict) -> MatchingDocument:
    cols = np.flatnonzero(np.asarray(gamma))
    hole = _in_hole(space, X, Y, cols)
    matches = []
    for c, h in zip(cols.tolist(), hole.tolist()):
        pairs = [[int(a), int(b)] for a, b in zip(space.x_seq[c], space.y_seq[c])]
        matches.append({"pairs": pairs, "kind": KIND_NAMES[space.kind[c]], "hole": bool(h)})
    return MatchingDocument(dict(header), matches)


def _min_rotation(ids: np.ndarray) -> np.ndarray:
    """Cyclic rotation of each row that is lexicographically smallest."""
    best = ids
    for k in (1, 2):
        r = np.roll(ids, -k, axis=1)
        less = (r[:, 0] < best[:, 0]) | (r[:, 0] == best[:, 0]) & (
            (r[:, 1] < best[:, 1]) | (r[:, 1] == best[:, 1]) & (r[:, 2] < best[:, 2]))
        best = np.where(less[:, None], r, best)
    return np.ascontiguousarray(best)


def gamma_from_document(doc: MatchingDocument, space: ProductSpace) -> np.ndarray:
    """Binary column vector of the matches in ``doc``; raises if one is not a column."""
    n = space.n_columns
    gamma = np.zeros(n, dtype=np.int8)
    if not doc.matches:
        return gamma
    p = doc.pairs
    if (p[..., 0].max() >= space.n_x_vertices or p[..., 1].max() >= space.n_y_vertices
            or p.min() < 0):
        raise DocumentError("match refers to a vertex outside the shapes")
    ids = _min_rotation(space.pair_ids.astype(np.int64))
    want = _min_rotation(p[..., 0] * space.n_y_vertices + p[..., 1])
    rec = np.dtype([("a", np.int64), ("b", np.int64), ("c", np.int64)])
    have = ids.view(rec).ravel()
    order = np.argsort(have, kind="stable")
    q = want.view(rec).ravel()
    pos = np.searchsorted(have[order], q)
    pos = np.minimum(pos, n - 1)
    hit = have[order][pos] == q
    if not np.all(hit):
        k = int(np.flatnonzero(~hit)[0])
        raise DocumentError(f"match {k} {doc.matches[k]['pairs']} is not a product triangle")
    gamma[order[pos]] = 1
    return gamma
