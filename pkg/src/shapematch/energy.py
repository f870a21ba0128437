"""Local matching cost of every product triangle.

The default cost is a membrane (area change) plus bending (mean curvature
change) surrogate, both weighted by the involved area, with an extra
penalty for matching real surface onto hole patches.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np

from .mesh import Shape
from .product_space import KIND_NAMES, ProductSpace

EPS = 1e-12


@dataclass(frozen=True)
class EnergyWeights:
    w_membrane: float = 1.0
    w_bend: float = 1.0
    w_hole: float = 0.3

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"energy weight {k} must be finite and >= 0, got {v}")


@dataclass
class EnergyVector:
    costs: np.ndarray
    weights: EnergyWeights = field(default_factory=EnergyWeights)

    def __len__(self) -> int:
        return len(self.costs)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.costs, dtype=dtype)


class EnergyProvider(Protocol):
    def __call__(self, X: Shape, Y: Shape, space: ProductSpace) -> np.ndarray: ...


def normalize_shapes(X: Shape, Y: Shape) -> tuple[Shape, Shape]:
    """Scale both shapes to unit surface area (hole patches excluded)."""
    return _unit_area(X, "X"), _unit_area(Y, "Y")


def _unit_area(s: Shape, name: str) -> Shape:
    area = float(s.triangle_areas[~s.hole_triangle_flags].sum())
    if not area > 0:
        raise ValueError(f"shape {name} has zero surface area")
    if abs(area - 1.0) < 1e-15:
        return s
    return s.scaled(1.0 / np.sqrt(area))


def _side_terms(shape: Shape, seq: np.ndarray, face: np.ndarray):
    real = face >= 0
    area = np.where(real, shape.triangle_areas[np.where(real, face, 0)], 0.0)
    h = shape.per_vertex_curvature[seq]
    distinct = np.ones(seq.shape, dtype=bool)
    distinct[:, 1] = seq[:, 1] != seq[:, 0]
    distinct[:, 2] = (seq[:, 2] != seq[:, 0]) & (seq[:, 2] != seq[:, 1])
    mean_h = (h * distinct).sum(axis=1) / distinct.sum(axis=1)
    in_hole = np.where(real, shape.hole_triangle_flags[np.where(real, face, 0)],
                       shape.hole_vertex_flags[seq].any(axis=1))
    return area, mean_h, in_hole


def compute_energy(X: Shape, Y: Shape, space: ProductSpace,
                   weights: EnergyWeights | None = None) -> EnergyVector:
    """Membrane + bending + hole cost for every product triangle.

    With ``A`` the area of the matched element (0 for edges and vertices)
    and ``H`` the mean vertex curvature over its distinct vertices::

        w_membrane |Ax - Ay| + w_bend (Hx - Hy)^2 (Ax + Ay) + hole term

    The hole term is ``w_hole`` times the area of the non-hole side when
    exactly one side lies in a hole patch and ``w_hole * EPS`` when both do.
    Shapes are expected to be normalized with :func:`normalize_shapes`.
    """
    weights = weights or EnergyWeights()
    if (space.n_x_vertices, space.n_y_vertices, space.n_x_faces, space.n_y_faces) != (
            X.n_vertices, Y.n_vertices, X.n_triangles, Y.n_triangles):
        raise ValueError("product space was built for different shapes")
    ax, hx, hole_x = _side_terms(X, space.x_seq, space.x_face)
    ay, hy, hole_y = _side_terms(Y, space.y_seq, space.y_face)
    total = ax + ay
    membrane = np.abs(ax - ay) / (total + EPS) * total
    bend = (hx - hy) ** 2 * total
    hole = np.where(hole_x & hole_y, EPS,
                    np.where(hole_x, ay, np.where(hole_y, ax, 0.0)))
    costs = weights.w_membrane * membrane + weights.w_bend * bend + weights.w_hole * hole
    return EnergyVector(np.ascontiguousarray(costs, dtype=np.float64), weights)


def save_energy_csv(path, space: ProductSpace, energy) -> None:
    costs = np.asarray(energy, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "kind", "x0", "x1", "x2", "y0", "y1", "y2", "cost"])
        for f in range(space.n_columns):
            w.writerow([f, KIND_NAMES[space.kind[f]], *space.x_seq[f].tolist(),
                        *space.y_seq[f].tolist(), repr(float(costs[f]))])
