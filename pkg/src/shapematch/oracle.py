"""Exact reference solvers used to check the heuristic on small instances."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
import sys

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, milp

from .mesh import Shape
from .product_space import ConstraintSystem, ProductSpace, canonical_triangles


class OracleLimitError(ValueError):
    pass


class OracleInfeasibleError(ValueError):
    pass


@dataclass
class OracleResult:
    optimal_value: float
    optimal_assignment: np.ndarray
    node_count: int


def brute_force_ilp(energy, constraints: ConstraintSystem, variable_limit: int = 5000,
                    two_manifold: bool = False, edge_row=None, edge_sign=None,
                    incumbent: float = np.inf, mode: str = "milp") -> OracleResult:
    """Globally optimal 0/1 solution of ``min <energy, x> s.t. A x = rhs``.

    ``mode="milp"`` hands the problem to HiGHS through
    :func:`scipy.optimize.milp`. ``mode="search"`` runs a depth-first search that branches on the most
    constrained open row, propagates forced values and prunes with a
    row-wise lower bound. ``mode="enumerate"`` checks all ``2**n``
    assignments and is limited to 25 variables.

    With ``two_manifold`` (needs ``edge_row``/``edge_sign`` of the product
    space) each oriented product edge may additionally be used at most once.
    """
    e = np.asarray(energy, dtype=np.float64)
    n = constraints.matrix.shape[1]
    if len(e) != n:
        raise ValueError("energy length does not match the constraint columns")
    if mode == "enumerate":
        if n > 25:
            raise OracleLimitError(f"exhaustive enumeration limited to 25 variables, got {n}")
        return _enumerate(e, constraints, two_manifold, edge_row, edge_sign)
    if n > variable_limit:
        raise OracleLimitError(f"{n} variables exceed the oracle limit {variable_limit}")
    if mode == "milp":
        return _milp(e, constraints, two_manifold, edge_row, edge_sign)
    if mode != "search":
        raise ValueError(f"unknown oracle mode {mode!r}")
    return _Search(e, constraints, two_manifold, edge_row, edge_sign, incumbent).run()


def _manifold_ok(x, edge_row, edge_sign) -> bool:
    sel = np.flatnonzero(x)
    if len(sel) == 0:
        return True
    key = edge_row[sel] * 2 + (edge_sign[sel] > 0)
    return len(np.unique(key)) == key.size


def _manifold_rows(edge_row, edge_sign, n):
    key = np.asarray(edge_row).astype(np.int64) * 2 + (np.asarray(edge_sign) > 0)
    cols = np.repeat(np.arange(n), 3)
    _, rows = np.unique(key.ravel(), return_inverse=True)
    return sp.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(rows.max() + 1, n))


def _milp(e, cons, two_manifold, edge_row, edge_sign) -> OracleResult:
    n = len(e)
    parts = [LinearConstraint(cons.matrix.astype(np.float64), cons.rhs, cons.rhs)]
    if two_manifold:
        if edge_row is None or edge_sign is None:
            raise ValueError("two_manifold needs edge_row and edge_sign")
        parts.append(LinearConstraint(_manifold_rows(edge_row, edge_sign, n), 0, 1))
    res = milp(e, constraints=parts, integrality=np.ones(n), bounds=Bounds(0, 1),
               options={"mip_rel_gap": 0.0})
    if res.status == 2:
        raise OracleInfeasibleError("no feasible assignment")
    if not res.success:
        raise OracleLimitError(f"MILP solver stopped: {res.message}")
    x = np.round(res.x).astype(np.int8)
    if not cons.is_feasible(x):
        raise OracleLimitError("MILP solution violates the constraints after rounding")
    return OracleResult(float(x @ e), x, int(getattr(res, "mip_node_count", 0) or 0))


def _enumerate(e, cons, two_manifold, edge_row, edge_sign) -> OracleResult:
    n = len(e)
    A = cons.matrix.toarray().astype(np.int64)
    best, best_x = np.inf, None
    chunk = 1 << min(n, 16)
    bits = np.arange(n)
    total = 1 << n
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        X = ((codes[:, None] >> bits[None]) & 1).astype(np.int64)
        ok = np.all(X @ A.T == cons.rhs[None], axis=1)
        for k in np.flatnonzero(ok):
            if two_manifold and not _manifold_ok(X[k], edge_row, edge_sign):
                continue
            v = float(X[k] @ e)
            if v < best:
                best, best_x = v, X[k].copy()
    if best_x is None:
        raise OracleInfeasibleError("no feasible assignment")
    return OracleResult(best, best_x.astype(np.int8), total)


class _Search:
    def __init__(self, e, cons, two_manifold, edge_row, edge_sign, incumbent):
        m = cons.matrix.tocsr()
        self.e = e
        self.n = len(e)
        self.nonneg = bool(np.all(e >= 0))
        self.row_cols = [m.indices[m.indptr[r]:m.indptr[r + 1]].tolist() for r in range(m.shape[0])]
        self.row_coef = [m.data[m.indptr[r]:m.indptr[r + 1]].astype(int).tolist()
                         for r in range(m.shape[0])]
        self.rhs = cons.rhs.astype(int).tolist()
        self.n_proj = cons.n_x_rows + cons.n_y_rows
        self.n_x = cons.n_x_rows
        c = cons.by_column
        self.col_rows = [c.indices[c.indptr[j]:c.indptr[j + 1]].tolist() for j in range(self.n)]
        self.col_coef = [c.data[c.indptr[j]:c.indptr[j + 1]].astype(int).tolist() for j in range(self.n)]
        self.manifold = two_manifold
        if two_manifold:
            if edge_row is None or edge_sign is None:
                raise ValueError("two_manifold needs edge_row and edge_sign")
            self.col_edges = [[int(edge_row[j, k]) * 2 + int(edge_sign[j, k] > 0) for k in range(3)]
                              for j in range(self.n)]
            self.edge_used: dict[int, int] = {}
        self.x = [-1] * self.n
        self.row_sum = [0] * len(self.rhs)
        self.free_pos = [sum(1 for k in cf if k > 0) for cf in self.row_coef]
        self.free_neg = [sum(1 for k in cf if k < 0) for cf in self.row_coef]
        self.trail: list[int] = []
        self.cost = 0.0
        self.best = incumbent
        self.best_x = None
        self.nodes = 0

    # assignment with undo via trail
    def _assign(self, j, v) -> bool:
        cur = self.x[j]
        if cur >= 0:
            return cur == v
        self.x[j] = v
        self.trail.append(j)
        for r, k in zip(self.col_rows[j], self.col_coef[j]):
            if k > 0:
                self.free_pos[r] -= 1
            else:
                self.free_neg[r] -= 1
            if v:
                self.row_sum[r] += k
        if v:
            self.cost += self.e[j]
            if self.manifold:
                for key in self.col_edges[j]:
                    self.edge_used[key] = self.edge_used.get(key, 0) + 1
        return True

    def _undo_to(self, mark):
        while len(self.trail) > mark:
            j = self.trail.pop()
            v = self.x[j]
            self.x[j] = -1
            for r, k in zip(self.col_rows[j], self.col_coef[j]):
                if k > 0:
                    self.free_pos[r] += 1
                else:
                    self.free_neg[r] += 1
                if v:
                    self.row_sum[r] -= k
            if v:
                self.cost -= self.e[j]
                if self.manifold:
                    for key in self.col_edges[j]:
                        self.edge_used[key] -= 1

    def _propagate(self, queue) -> bool:
        while queue:
            j = queue.pop()
            if self.manifold and self.x[j] == 1:
                for key in self.col_edges[j]:
                    if self.edge_used.get(key, 0) > 1:
                        return False
            for r in self.col_rows[j]:
                s = self.rhs[r] - self.row_sum[r]  # what the free vars still have to add
                fp, fn = self.free_pos[r], self.free_neg[r]
                if s > fp or -s > fn:
                    return False
                if s == fp and fp or -s == fn and fn:
                    # all free positives to 1 and negatives to 0, or the reverse
                    want_pos = 1 if s == fp else 0
                    for c, k in zip(self.row_cols[r], self.row_coef[r]):
                        if self.x[c] < 0:
                            v = want_pos if k > 0 else 1 - want_pos
                            self._assign(c, v)
                            queue.append(c)
                if r < self.n_proj and self.row_sum[r] == 1:
                    for c in self.row_cols[r]:
                        if self.x[c] < 0:
                            self._assign(c, 0)
                            queue.append(c)
        return True

    def _bound(self) -> float:
        if not self.nonneg:
            return self.cost + sum(min(0.0, self.e[j]) for j in range(self.n) if self.x[j] < 0)
        lb_x = lb_y = 0.0
        for r in range(self.n_proj):
            if self.row_sum[r] == 0:
                m = min((self.e[c] for c in self.row_cols[r] if self.x[c] < 0), default=np.inf)
                if r < self.n_x:
                    lb_x += m
                else:
                    lb_y += m
        return self.cost + max(lb_x, lb_y)

    def _pick_row(self):
        best_r, best_c = None, None
        for r in range(len(self.rhs)):
            s = self.rhs[r] - self.row_sum[r]
            if s == 0 and r >= self.n_proj:
                continue
            if r < self.n_proj and s == 0:
                continue
            cands = [c for c, k in zip(self.row_cols[r], self.row_coef[r])
                     if self.x[c] < 0 and (k > 0) == (s > 0)]
            if best_c is None or len(cands) < len(best_c):
                best_r, best_c = r, cands
                if len(cands) <= 1:
                    break
        return best_r, best_c

    def _manifold_block(self, c) -> bool:
        return any(self.edge_used.get(key, 0) for key in self.col_edges[c])

    def _dfs(self):
        self.nodes += 1
        if self._bound() >= self.best - 1e-12:
            return
        r, cands = self._pick_row()
        if r is None:
            # every row is balanced; open variables may stay 0 unless one pays to switch on
            neg = [j for j in range(self.n) if self.x[j] < 0 and self.e[j] < 0]
            if not neg:
                self.best = self.cost
                self.best_x = [max(v, 0) for v in self.x]
                return
            cands = neg[:1]
        c = min(cands, key=lambda c: (self.e[c], c)) if cands else None
        if c is None:
            return
        mark = len(self.trail)
        if not (self.manifold and self._manifold_block(c)):
            self._assign(c, 1)
            if self._propagate([c]):
                self._dfs()
            self._undo_to(mark)
        # the other branch excludes c; propagation may force further values
        self._assign(c, 0)
        if self._propagate([c]):
            self._dfs()
        self._undo_to(mark)

    def run(self) -> OracleResult:
        queue = [cols[0] for cols in self.row_cols if cols]
        for r in range(len(self.rhs)):
            s = self.rhs[r] - self.row_sum[r]
            if s > self.free_pos[r] or -s > self.free_neg[r]:
                raise OracleInfeasibleError(f"row {r} cannot be satisfied")
        if not self._propagate(queue):
            raise OracleInfeasibleError("constraints are infeasible")
        # one frame per branching decision, at most one per variable
        sys.setrecursionlimit(max(sys.getrecursionlimit(), 3 * self.n + 1000))
        self._dfs()
        if self.best_x is None:
            if np.isfinite(self.best):
                raise OracleInfeasibleError("no assignment better than the given incumbent")
            raise OracleInfeasibleError("no feasible assignment")
        x = np.array(self.best_x, dtype=np.int8)
        return OracleResult(float(x @ self.e), x, self.nodes)


# ----------------------------------------------------------- triangle-triangle solver

def tt_polynomial_solve(X: Shape, Y: Shape, space: ProductSpace, energy) -> OracleResult:
    """Optimal matching that uses triangle-triangle correspondences only.

    A single aligned triangle pair fixes the whole matching: the pair's
    shared-edge neighbors must be matched to the Y triangles across the
    corresponding Y edges, and so on. Every alignment of X's first triangle
    is propagated breadth first; inconsistent ones are discarded as soon as
    a triangle, Y triangle or vertex receives two different images.
    """
    if X.n_triangles != Y.n_triangles:
        raise ValueError("triangle-triangle matchings need |F_X| == |F_Y|")
    if space.n_tt != 3 * X.n_triangles * Y.n_triangles:
        raise ValueError("product space lacks the full triangle-triangle block")
    e = np.asarray(energy, dtype=np.float64)
    cx = canonical_triangles(X.triangles).tolist()
    cy = canonical_triangles(Y.triangles).tolist()
    nf = len(cx)
    # neighbor of X triangle t across corner edge k, with the position of the shared
    # edge's start vertex in the neighbor
    x_left = {}
    for t, tri in enumerate(cx):
        for k in range(3):
            x_left[(tri[k], tri[(k + 1) % 3])] = (t, k)
    y_left = {}
    for t, tri in enumerate(cy):
        for k in range(3):
            y_left[(tri[k], tri[(k + 1) % 3])] = (t, k)
    x_adj = []
    for t, tri in enumerate(cx):
        row = []
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            row.append(x_left[(b, a)])
        x_adj.append(row)

    best, best_assign = np.inf, None
    nodes = 0
    for ty in range(nf):
        for shift in range(3):
            nodes += 1
            assign = _propagate_tt(cx, cy, x_adj, y_left, ty, shift, X.n_vertices)
            if assign is None:
                continue
            cols = [space.tt_column(t, y, s) for t, (y, s) in enumerate(assign)]
            val = float(e[cols].sum())
            if val < best:
                best, best_assign = val, cols
    if best_assign is None:
        raise OracleInfeasibleError("no consistent triangle-triangle matching")
    x = np.zeros(space.n_columns, dtype=np.int8)
    x[best_assign] = 1
    return OracleResult(best, x, nodes)


def _propagate_tt(cx, cy, x_adj, y_left, ty0, shift0, n_vx):
    nf = len(cx)
    assign = [None] * nf
    y_used = [-1] * len(cy)
    phi = [-1] * n_vx

    def place(t, y, s):
        cur = assign[t]
        if cur is not None:
            return cur == (y, s)
        if y_used[y] >= 0:
            return False
        tri, ytri = cx[t], cy[y]
        for k in range(3):
            img = ytri[(k + s) % 3]
            if phi[tri[k]] >= 0 and phi[tri[k]] != img:
                return False
        for k in range(3):
            phi[tri[k]] = ytri[(k + s) % 3]
        assign[t] = (y, s)
        y_used[y] = t
        queue.append(t)
        return True

    queue: deque[int] = deque()
    if not place(0, ty0, shift0):
        return None
    while queue:
        t = queue.popleft()
        y, s = assign[t]
        ytri = cy[y]
        for k in range(3):
            A = ytri[(k + s) % 3]
            B = ytri[(k + 1 + s) % 3]
            nb = y_left.get((B, A))
            if nb is None:
                return None
            y2, j = nb  # Y edge B->A starts at corner j of y2
            t2, i = x_adj[t][k]  # X edge b->a starts at corner i of t2
            if not place(t2, y2, (j - i) % 3):
                return None
    if any(a is None for a in assign):
        return None
    return assign

