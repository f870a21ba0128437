"""Small procedural meshes used as fixtures by tests, scripts and the CLI demo."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import Shape


def _outward(v: np.ndarray, t: np.ndarray, center=None) -> np.ndarray:
    c = v.mean(axis=0) if center is None else np.asarray(center)
    p = v[t]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", n, p.mean(axis=1) - c) < 0
    t = t.copy()
    t[flip] = t[flip][:, [0, 2, 1]]
    return t


def tetrahedron() -> Shape:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    t = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Shape(v, _outward(v, t))


def octahedron() -> Shape:
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
                 dtype=float)
    t = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
                  [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    return Shape(v, _outward(v, t))


def icosahedron() -> Shape:
    p = (1 + 5 ** 0.5) / 2
    v = np.array([[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
                  [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
                  [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]], dtype=float)
    return hull_mesh(v / np.linalg.norm(v, axis=1, keepdims=True))


def hull_mesh(points) -> Shape:
    """Closed mesh of the convex hull of points in convex position."""
    points = np.asarray(points, dtype=float)
    hull = ConvexHull(points)
    if len(hull.vertices) != len(points):
        raise ValueError("all points must lie on the convex hull")
    return Shape(points, _outward(points, hull.simplices))


def fibonacci_sphere(n_faces: int, jitter: float = 0.0, seed: int = 0,
                     radii=(1.0, 1.0, 1.0)) -> Shape:
    """Convex-hull sphere with ``n_faces`` triangles (``n_faces`` even, >= 4).

    ``jitter`` perturbs the Fibonacci points tangentially (relative to the
    mean spacing) which breaks the combinatorial symmetry; ``radii``
    stretches the result into an ellipsoid afterwards.
    """
    if n_faces < 4 or n_faces % 2:
        raise ValueError("a closed genus-0 triangle mesh has an even face count >= 4")
    n = n_faces // 2 + 2
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z * z)
    phi = np.pi * (1 + 5 ** 0.5) * k
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    if jitter:
        rng = np.random.default_rng(seed)
        pts = pts + jitter * np.sqrt(4 * np.pi / n) * rng.normal(size=pts.shape)
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    shape = hull_mesh(pts)
    return Shape(shape.vertex_positions * np.asarray(radii, dtype=float), shape.triangles)


def uv_sphere(n_lon: int, n_lat: int) -> Shape:
    """Latitude/longitude sphere with ``2 n_lon (n_lat - 1)`` triangles."""
    verts = [[0.0, 0.0, 1.0]]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    verts.append([0.0, 0.0, -1.0])
    v = np.array(verts)
    ring = lambda i, j: 1 + (i - 1) * n_lon + j % n_lon  # noqa: E731
    south = len(v) - 1
    t = []
    for j in range(n_lon):
        t.append([0, ring(1, j), ring(1, j + 1)])
        t.append([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            t += [[a, c, d], [a, d, b]]
    return Shape(v, _outward(v, np.array(t), center=(0, 0, 0)))


def uv_hemisphere(n_lon: int, n_rings: int) -> Shape:
    """Open upper hemisphere; its boundary is the equator with ``n_lon`` vertices."""
    verts = [[0.0, 0.0, 1.0]]
    for i in range(1, n_rings + 1):
        th = 0.5 * np.pi * i / n_rings
        for j in range(n_lon):
            ph = 2 * np.pi * j / n_lon
            verts.append([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    v = np.array(verts)
    ring = lambda i, j: 1 + (i - 1) * n_lon + j % n_lon  # noqa: E731
    t = [[0, ring(1, j), ring(1, j + 1)] for j in range(n_lon)]
    for i in range(1, n_rings):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            t += [[a, c, d], [a, d, b]]
    return Shape(v, _outward(v, np.array(t), center=(0, 0, 0)))


def cut_shape(shape: Shape, keep) -> Shape:
    """Submesh on the triangles selected by the boolean mask ``keep``.

    Unused vertices are dropped; vertex order is preserved.
    """
    keep = np.asarray(keep, dtype=bool)
    t = shape.triangles[keep]
    used = np.unique(t.ravel())
    remap = -np.ones(shape.n_vertices, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Shape(shape.vertex_positions[used], remap[t])


def _cap_mask(shape: Shape, axis, fraction: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    c = shape.vertex_positions[shape.triangles].mean(axis=1) @ axis
    order = np.argsort(-c, kind="stable")
    area = shape.triangle_areas[order]
    n_keep = int(np.searchsorted(np.cumsum(area), fraction * area.sum()) + 1)
    keep = np.zeros(shape.n_triangles, dtype=bool)
    keep[order[:n_keep]] = True
    return keep


def sphere_cap(shape: Shape, axis, fraction: float) -> Shape:
    """Keep the triangles whose centroids project highest onto ``axis``.

    ``fraction`` is the share of the total area kept (approximately, at
    triangle granularity).
    """
    return cut_shape(shape, _cap_mask(shape, axis, fraction))


def near_isometric_pair(n_faces: int, seed: int = 1) -> tuple[Shape, Shape]:
    """A jittered sphere and a differently triangulated, slightly stretched one."""
    X = fibonacci_sphere(n_faces, jitter=0.15, seed=seed)
    Y = fibonacci_sphere(n_faces + 4, jitter=0.15, seed=seed + 6, radii=(1.1, 1.0, 0.9))
    return X, Y


def partial_pair(n_faces: int, overlap: float, keep: float = 0.6, seed: int = 0):
    """Two open caps cut from one sphere, sharing about ``overlap`` of their area.

    The caps keep ``keep`` of the sphere each; the second cap's axis is tilted
    until the shared triangles carry ``overlap`` of the first cap's area.
    Returns ``(A, B, measured_overlap, pairs)`` where ``pairs`` lists the
    vertices (index in A, index in B) that both caps share.
    """
    full = fibonacci_sphere(n_faces, jitter=0.1, seed=seed)
    a = _cap_mask(full, [0, 0, 1], keep)
    area = full.triangle_areas

    def share(theta):
        b = _cap_mask(full, [np.sin(theta), 0, np.cos(theta)], keep)
        return area[a & b].sum() / area[a].sum(), b

    lo, hi = 0.0, np.pi
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if share(mid)[0] > overlap:
            lo = mid
        else:
            hi = mid
    measured, b = min((share(t) for t in (lo, hi)), key=lambda r: abs(r[0] - overlap))
    A, B = cut_shape(full, a), cut_shape(full, b)
    va, vb = np.unique(full.triangles[a]), np.unique(full.triangles[b])
    common = np.intersect1d(va, vb)
    pairs = np.stack([np.searchsorted(va, common), np.searchsorted(vb, common)], axis=1)
    return A, B, float(measured), pairs
