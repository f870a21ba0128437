"""Closed oriented triangle meshes: loading, validation, hole closing and the
per-vertex / per-triangle geometry used by the energy and the seed heuristic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


class MeshParseError(MeshError):
    pass


class MeshIndexError(MeshError):
    pass


class NonManifoldError(MeshError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Shape:
    """Triangle mesh with consistently oriented faces.

    Parameters
    ----------
    vertex_positions : (nV, 3) array_like
    triangles : (nF, 3) array_like of int
        Oriented vertex-index triples.
    hole_triangle_flags : (nF,) array_like of bool, optional
        Marks triangles that were added by :func:`close_holes`.

    The arrays are read-only after construction; derived quantities are
    computed lazily and cached.
    """

    def __init__(self, vertex_positions, triangles, hole_triangle_flags=None):
        v = np.asarray(vertex_positions, dtype=np.float64)
        t = np.asarray(triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError("vertex_positions must have shape (n, 3)")
        if t.size == 0:
            t = t.reshape(0, 3)
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (m, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise MeshIndexError("triangle vertex index out of range")
        if hole_triangle_flags is None:
            hole_triangle_flags = np.zeros(len(t), dtype=bool)
        flags = np.asarray(hole_triangle_flags, dtype=bool)
        if flags.shape != (len(t),):
            raise MeshError("hole_triangle_flags must have one entry per triangle")
        self.vertex_positions = _frozen(v)
        self.triangles = _frozen(t)
        self.hole_triangle_flags = _frozen(flags)

    def __repr__(self) -> str:
        return (f"Shape(n_vertices={self.n_vertices}, n_triangles={self.n_triangles}, "
                f"n_hole_triangles={int(self.hole_triangle_flags.sum())})")

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_positions)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def directed_edges(self) -> np.ndarray:
        """(3 nF, 2) directed edges (a, b), each with its triangle on the left.

        Row ``3 t + k`` is the edge from corner ``k`` to corner ``k + 1`` of
        triangle ``t``.
        """
        t = self.triangles
        e = np.stack([t, np.roll(t, -1, axis=1)], axis=2).reshape(-1, 2)
        return _frozen(e)

    @cached_property
    def undirected_edges(self) -> np.ndarray:
        """Sorted unique undirected edges as (u, v) with u < v."""
        e = np.sort(self.directed_edges, axis=1)
        return _frozen(np.unique(e, axis=0).reshape(-1, 2))

    @cached_property
    def edge_lookup(self) -> dict[tuple[int, int], int]:
        """Map directed edge (a, b) -> triangle index on its left."""
        out: dict[tuple[int, int], int] = {}
        for k, (a, b) in enumerate(self.directed_edges.tolist()):
            out.setdefault((a, b), k // 3)
        return out

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        p = self.vertex_positions[self.triangles]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return _frozen(0.5 * np.linalg.norm(n, axis=1))

    @cached_property
    def triangle_angles(self) -> np.ndarray:
        """(nF, 3) interior angles in radians, angle ``k`` at corner ``k``."""
        p = self.vertex_positions[self.triangles]
        out = np.empty((len(p), 3))
        for k in range(3):
            u = p[:, (k + 1) % 3] - p[:, k]
            w = p[:, (k + 2) % 3] - p[:, k]
            nu = np.linalg.norm(u, axis=1)
            nw = np.linalg.norm(w, axis=1)
            denom = np.where(nu * nw > 0, nu * nw, 1.0)
            c = np.clip(np.einsum("ij,ij->i", u, w) / denom, -1.0, 1.0)
            out[:, k] = np.arccos(c)
        return _frozen(out)

    @cached_property
    def per_vertex_curvature(self) -> np.ndarray:
        """Discrete mean curvature magnitude per vertex (units 1/length).

        Half the norm of the cotangent Laplacian of the vertex positions,
        normalized by the barycentric vertex area.
        """
        v = self.vertex_positions
        t = self.triangles
        lap = np.zeros_like(v)
        area = np.zeros(len(v))
        if len(t):
            ang = self.triangle_angles
            with np.errstate(divide="ignore", invalid="ignore"):
                cot = np.cos(ang) / np.sin(ang)
            cot = np.nan_to_num(cot, nan=0.0, posinf=0.0, neginf=0.0)
            for k in range(3):
                i = t[:, (k + 1) % 3]
                j = t[:, (k + 2) % 3]
                w = 0.5 * cot[:, k][:, None]
                d = v[j] - v[i]
                np.add.at(lap, i, w * d)
                np.add.at(lap, j, -w * d)
            np.add.at(area, t.ravel(), np.repeat(self.triangle_areas / 3.0, 3))
        safe = np.where(area > 0, area, 1.0)
        h = 0.5 * np.linalg.norm(lap, axis=1) / safe
        h[area <= 0] = 0.0
        return _frozen(h)

    @cached_property
    def hole_vertex_flags(self) -> np.ndarray:
        """True for vertices incident to hole triangles only (hole centers)."""
        n_real = np.zeros(self.n_vertices, dtype=np.int64)
        n_all = np.zeros(self.n_vertices, dtype=np.int64)
        np.add.at(n_all, self.triangles.ravel(), 1)
        real = self.triangles[~self.hole_triangle_flags]
        np.add.at(n_real, real.ravel(), 1)
        return _frozen((n_all > 0) & (n_real == 0))

    def scaled(self, factor: float) -> "Shape":
        return Shape(self.vertex_positions * factor, self.triangles,
                     self.hole_triangle_flags)

    def relabeled(self, perm) -> "Shape":
        """Copy with vertex ``i`` renamed to ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        v = np.empty_like(self.vertex_positions)
        v[perm] = self.vertex_positions
        return Shape(v, perm[self.triangles], self.hole_triangle_flags)


# --------------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    closed: bool
    oriented: bool
    manifold: bool
    boundary_loops: list[list[int]] = field(default_factory=list)
    issues: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.closed and self.oriented and self.manifold


def validate(shape: Shape) -> ValidationReport:
    """Check closedness, orientation and manifoldness; never raises."""
    issues: list[str] = []
    t = shape.triangles
    manifold = True
    oriented = True
    if len(t) == 0:
        return ValidationReport(False, True, True, [], ["empty mesh"])

    if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
        manifold = False
        issues.append("triangle repeats a vertex")
    canon = np.array([_canonical_rotation(tri) for tri in t.tolist()])
    if len(np.unique(canon, axis=0)) != len(canon):
        manifold = False
        issues.append("duplicate triangle")

    und = np.sort(shape.directed_edges, axis=1)
    _, und_count = np.unique(und, axis=0, return_counts=True)
    if np.any(und_count > 2):
        manifold = False
        issues.append("edge shared by more than two triangles")
    directed = [tuple(e) for e in shape.directed_edges.tolist()]
    dset: dict[tuple[int, int], int] = {}
    for e in directed:
        dset[e] = dset.get(e, 0) + 1
    if any(c > 1 for c in dset.values()):
        oriented = False
        issues.append("directed edge used twice (inconsistent orientation)")

    boundary = [e for e in dset if (e[1], e[0]) not in dset]
    closed = not boundary
    loops: list[list[int]] = []
    if boundary:
        nxt: dict[int, list[int]] = {}
        for a, b in boundary:
            nxt.setdefault(a, []).append(b)
        if any(len(v) > 1 for v in nxt.values()):
            manifold = False
            issues.append("non-manifold boundary vertex")
        seen: set[tuple[int, int]] = set()
        for start in sorted(boundary):
            if start in seen:
                continue
            loop = []
            cur = start
            while cur not in seen:
                seen.add(cur)
                loop.append(cur[0])
                succ = nxt.get(cur[1])
                if not succ:
                    break
                cur = (cur[1], succ[0])
            loops.append(loop)
    return ValidationReport(closed, oriented, manifold, loops, issues)


def _canonical_rotation(tri) -> tuple[int, int, int]:
    k = min(range(3), key=lambda i: tri[i])
    return (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3])


def close_holes(shape: Shape) -> Shape:
    """Fill every boundary loop with a fan around its barycenter.

    A loop of length L adds one vertex and L triangles, all flagged as hole
    triangles. Closed input is returned unchanged.
    """
    report = validate(shape)
    if not (report.manifold and report.oriented):
        raise NonManifoldError("close_holes needs a manifold, oriented mesh: "
                               + "; ".join(report.issues))
    if report.closed:
        return shape
    v = [shape.vertex_positions]
    tris = [shape.triangles]
    flags = [shape.hole_triangle_flags]
    nv = shape.n_vertices
    for loop in report.boundary_loops:
        c = shape.vertex_positions[loop].mean(axis=0)
        v.append(c[None])
        # boundary edge (a, b) has the mesh on its left; the patch uses (b, a)
        fan = [(loop[(i + 1) % len(loop)], loop[i], nv) for i in range(len(loop))]
        tris.append(np.array(fan, dtype=np.int64))
        flags.append(np.ones(len(fan), dtype=bool))
        nv += 1
    return Shape(np.vstack(v), np.vstack(tris), np.concatenate(flags))


# --------------------------------------------------------------------- regularity

def triangle_regularity(shape: Shape, index: int, w_curv: float = 1.0,
                        min_angle: float = 20.0, max_angle: float = 90.0,
                        strict: bool = True) -> float:
    """Regularity score of one triangle; lower is more regular.

    Relative deviation from the mean (non-hole) triangle area plus
    ``w_curv`` times the mean absolute curvature of its corners, normalized
    by the median absolute vertex curvature. With ``strict`` the score is
    ``inf`` for hole triangles and for triangles with an angle outside
    ``[min_angle, max_angle]`` degrees.
    """
    if not 0 <= index < shape.n_triangles:
        raise IndexError(f"triangle index {index} out of range")
    return float(regularity_scores(shape, w_curv, min_angle, max_angle, strict)[index])


def regularity_scores(shape: Shape, w_curv: float = 1.0, min_angle: float = 20.0,
                      max_angle: float = 90.0, strict: bool = True) -> np.ndarray:
    real = ~shape.hole_triangle_flags
    areas = shape.triangle_areas
    mean_area = areas[real].mean() if real.any() else areas.mean()
    if mean_area <= 0:
        mean_area = 1.0
    h = np.abs(shape.per_vertex_curvature)
    used = np.unique(shape.triangles[real].ravel())
    med = float(np.median(h[used])) if len(used) else 0.0
    if med <= 0:
        med = 1.0
    score = np.abs(areas - mean_area) / mean_area
    score = score + w_curv * h[shape.triangles].mean(axis=1) / med
    if strict:
        deg = np.degrees(shape.triangle_angles)
        # small slack so exact right angles pass
        bad = np.any((deg < min_angle - 1e-9) | (deg > max_angle + 1e-9), axis=1)
        score = np.where(bad | shape.hole_triangle_flags, np.inf, score)
    return score


# --------------------------------------------------------------------- file IO

_FORMATS = {".off": "OFF", ".ply": "PLY", ".obj": "OBJ"}


def load_shape(path, format: str | None = None) -> Shape:
    """Read an OFF, PLY (ascii / binary little endian) or OBJ triangle mesh.

    The result is not validated; call :func:`validate` for that.
    """
    path = Path(path)
    if format is None:
        format = _FORMATS.get(path.suffix.lower())
        if format is None:
            raise MeshParseError(f"cannot infer mesh format from {path.name!r}")
    format = format.upper()
    data = path.read_bytes()
    if format == "OFF":
        v, t = _parse_off(data.decode("ascii", errors="replace"))
    elif format == "OBJ":
        v, t = _parse_obj(data.decode("utf-8", errors="replace"))
    elif format == "PLY":
        v, t = _parse_ply(data)
    else:
        raise MeshParseError(f"unsupported format {format!r}")
    return Shape(v, t)


def _tokens(text: str):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def _parse_off(text: str):
    lines = list(_tokens(text))
    if not lines or not lines[0].upper().startswith("OFF"):
        raise MeshParseError("missing OFF header")
    head = lines[0][3:].split()
    rest = lines[1:]
    if not head:
        if not rest:
            raise MeshParseError("missing OFF counts")
        head, rest = rest[0].split(), rest[1:]
    try:
        nv, nf = int(head[0]), int(head[1])
    except (ValueError, IndexError) as exc:
        raise MeshParseError("bad OFF counts line") from exc
    if len(rest) < nv + nf:
        raise MeshParseError("OFF file truncated")
    try:
        v = np.array([[float(x) for x in rest[i].split()[:3]] for i in range(nv)])
    except ValueError as exc:
        raise MeshParseError("bad OFF vertex row") from exc
    if nv and v.shape != (nv, 3):
        raise MeshParseError("OFF vertex rows need three coordinates")
    faces = []
    for row in rest[nv:nv + nf]:
        parts = row.split()
        try:
            k = int(parts[0])
            idx = [int(x) for x in parts[1:1 + k]]
        except (ValueError, IndexError) as exc:
            raise MeshParseError(f"bad OFF face row {row!r}") from exc
        if k != 3 or len(idx) != 3:
            raise MeshParseError(f"only triangle faces are supported, got {row!r}")
        faces.append(idx)
    _check_indices(faces, nv)
    return v.reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def _parse_obj(text: str):
    verts, faces = [], []
    for line in _tokens(text):
        parts = line.split()
        if parts[0] == "v":
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError as exc:
                raise MeshParseError(f"bad OBJ vertex {line!r}") from exc
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshParseError(f"only triangle faces are supported, got {line!r}")
            idx = []
            for p in parts[1:]:
                try:
                    i = int(p.split("/")[0])
                except ValueError as exc:
                    raise MeshParseError(f"bad OBJ face {line!r}") from exc
                idx.append(i - 1 if i > 0 else len(verts) + i)
            faces.append(idx)
    _check_indices(faces, len(verts))
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


_PLY_TYPES = {
    "char": "b", "int8": "b", "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h", "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i", "uint": "I", "uint32": "I",
    "float": "f", "float32": "f", "double": "d", "float64": "d",
}


def _parse_ply(data: bytes):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshParseError("missing PLY header")
    nl = data.find(b"\n", end)
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[nl + 1:]
    fmt = None
    elements: list[tuple[str, int, list]] = []
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshParseError("PLY property before element")
            if parts[1] == "list":
                elements[-1][2].append((parts[4], "list", parts[2], parts[3]))
            else:
                elements[-1][2].append((parts[2], parts[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshParseError(f"unsupported PLY format {fmt!r}")
    verts = None
    faces = None
    if fmt == "ascii":
        rows = iter(body.decode("ascii", errors="replace").split("\n"))
        for name, count, props in elements:
            recs = []
            for _ in range(count):
                try:
                    vals = next(rows).split()
                except StopIteration as exc:
                    raise MeshParseError("PLY body truncated") from exc
                recs.append(_ply_ascii_record(vals, props))
            if name == "vertex":
                verts = recs
            elif name == "face":
                faces = recs
    else:
        pos = 0
        for name, count, props in elements:
            recs = []
            for _ in range(count):
                rec, pos = _ply_binary_record(body, pos, props)
                recs.append(rec)
            if name == "vertex":
                verts = recs
            elif name == "face":
                faces = recs
    if verts is None:
        raise MeshParseError("PLY has no vertex element")
    try:
        v = np.array([[r["x"], r["y"], r["z"]] for r in verts], dtype=np.float64)
    except KeyError as exc:
        raise MeshParseError("PLY vertices need x, y, z") from exc
    tris = []
    for r in faces or []:
        idx = r.get("vertex_indices", r.get("vertex_index"))
        if idx is None or len(idx) != 3:
            raise MeshParseError("only triangle faces are supported")
        tris.append([int(i) for i in idx])
    _check_indices(tris, len(v))
    return v.reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3)


def _ply_ascii_record(vals, props):
    rec = {}
    k = 0
    try:
        for p in props:
            if p[1] == "list":
                n = int(vals[k])
                rec[p[0]] = [float(x) for x in vals[k + 1:k + 1 + n]]
                if len(rec[p[0]]) != n:
                    raise MeshParseError("PLY list row truncated")
                k += 1 + n
            else:
                rec[p[0]] = float(vals[k])
                k += 1
    except (ValueError, IndexError) as exc:
        raise MeshParseError("bad PLY row") from exc
    return rec


def _ply_binary_record(body, pos, props):
    rec = {}
    try:
        for p in props:
            if p[1] == "list":
                cfmt = "<" + _PLY_TYPES[p[2]]
                (n,) = struct.unpack_from(cfmt, body, pos)
                pos += struct.calcsize(cfmt)
                ifmt = "<" + _PLY_TYPES[p[3]] * n
                rec[p[0]] = list(struct.unpack_from(ifmt, body, pos))
                pos += struct.calcsize(ifmt)
            else:
                f = "<" + _PLY_TYPES[p[1]]
                (rec[p[0]],) = struct.unpack_from(f, body, pos)
                pos += struct.calcsize(f)
    except (struct.error, KeyError) as exc:
        raise MeshParseError("bad or truncated binary PLY body") from exc
    return rec, pos


def _check_indices(faces, n_vertices):
    for f in faces:
        for i in f:
            if i < 0 or i >= n_vertices:
                raise MeshIndexError(f"face index {i} out of range for {n_vertices} vertices")


def save_off(path, shape: Shape) -> None:
    with open(path, "w") as fh:
        fh.write(f"OFF\n{shape.n_vertices} {shape.n_triangles} 0\n")
        for x, y, z in shape.vertex_positions.tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")
        for t in shape.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def save_ply(path, shape: Shape, colors=None, binary: bool = True) -> None:
    """Write a PLY mesh, optionally with per-vertex uint8 RGB colors."""
    v = shape.vertex_positions
    t = shape.triangles
    if colors is not None:
        colors = np.clip(np.rint(np.asarray(colors, dtype=np.float64)), 0, 255).astype(np.uint8)
        if colors.shape != (len(v), 3):
            raise MeshError("colors must have shape (n_vertices, 3)")
    lines = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
             f"element vertex {len(v)}", "property double x", "property double y",
             "property double z"]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines += [f"element face {len(t)}", "property list uchar int vertex_indices",
              "end_header"]
    head = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(head)
        if binary:
            vdt = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if colors is not None:
                vdt += [("r", "u1"), ("g", "u1"), ("b", "u1")]
            rec = np.empty(len(v), dtype=vdt)
            rec["x"], rec["y"], rec["z"] = v[:, 0], v[:, 1], v[:, 2]
            if colors is not None:
                rec["r"], rec["g"], rec["b"] = colors[:, 0], colors[:, 1], colors[:, 2]
            fh.write(rec.tobytes())
            frec = np.empty(len(t), dtype=[("n", "u1"), ("i", "<i4", (3,))])
            frec["n"] = 3
            frec["i"] = t
            fh.write(frec.tobytes())
        else:
            out = []
            for k, (x, y, z) in enumerate(v.tolist()):
                row = f"{x!r} {y!r} {z!r}"
                if colors is not None:
                    row += " {} {} {}".format(*colors[k].tolist())
                out.append(row)
            out += [f"3 {a} {b} {c}" for a, b, c in t.tolist()]
            fh.write(("\n".join(out) + "\n").encode("ascii"))
