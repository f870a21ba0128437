"""Rounding dual information into a feasible matching.

The search grows a matching from a seed product triangle. Candidates are the
product triangles adjacent to the current selection, explored in ascending
order of their total min-marginals. Every assignment is propagated through
the constraint rows; conflicts undo the trail up to the most recent decision
involved and exclude that decision. Min-marginals are recomputed on the
problem reduced by the current partial matching at regular intervals.
"""

from __future__ import annotations

import heapq
import logging
import time
from array import array
from dataclasses import dataclass, field

import numpy as np

from .dual import (DualInfeasibleError, DualState, build_subproblems, extract_by_sign,
                   fix_and_reduce, init_dual, run_dual, total_min_marginals)
from .energy import EnergyWeights, compute_energy, normalize_shapes
from .mesh import Shape, regularity_scores
from .product_space import TT, ProductSpace, build_product_space

logger = logging.getLogger(__name__)

# trail causes
SEED, DECISION, INJECTIVITY, SURJECTIVITY, TWO_MANIFOLD, GC_II, CLOSEDNESS, EXCLUDED = range(8)
CAUSE_NAMES = ("seed", "decision", "injectivity", "surjectivity", "two-manifold",
               "geometric-consistency-II", "closedness", "excluded")

FREE = -1


class RoundingError(RuntimeError):
    """No feasible matching was found within the restart budget."""


@dataclass
class SolverConfig:
    """Knobs of :func:`solve`.

    ``max_backtracks_per_round`` defaults to ``min(|F_X|, |F_Y|)`` and
    ``max_backtracks`` (per seed, before restarting) to 20 times that.
    ``seed_trials`` and ``improve_backtracks`` default to ``max_restarts``
    and 200 on product spaces of at most ``SMALL_PROBLEM`` columns and to 1
    and 0 above.
    """

    alpha_factor: float = 0.2
    max_backtracks_per_round: int | None = None
    max_backtracks: int | None = None
    dual_passes: int = 100
    recompute_passes: int = 20
    max_restarts: int = 10
    w_curv: float = 1.0
    min_angle: float = 20.0
    max_angle: float = 90.0
    two_manifold: bool = True
    closedness: bool = True
    seed_triangle: int | None = None
    seed_trials: int | None = None  # completed seeds to compare; None: auto by problem size
    improve_backtracks: int | None = None  # search budget after the first matching; None: auto
    sign_rounding: bool = True
    random_seed: int | None = None  # unused: the solver is deterministic
    debug: bool = False
    log_every: int = 50
    weights: EnergyWeights = field(default_factory=EnergyWeights)

    def __post_init__(self):
        if not self.alpha_factor > 0:
            raise ValueError("alpha_factor must be > 0")
        if self.dual_passes < 0 or self.recompute_passes < 0:
            raise ValueError("pass counts must be >= 0")
        if self.max_restarts < 1:
            raise ValueError("max_restarts must be >= 1")
        if isinstance(self.weights, dict):
            self.weights = EnergyWeights(**self.weights)


@dataclass
class Conflict:
    kind: str  # "infeasible" or "contradiction"
    row: int  # constraint row (matrix numbering) or -1
    participants: list  # assigned variables involved
    level: int  # most recent decision level among the participants


@dataclass
class Matching:
    assignment: np.ndarray
    energy: float
    lower_bound: float
    decisions: int = 0
    backtracks: int = 0
    recomputations: int = 0
    restarts: int = 0
    seed: int = -1
    wall_time: float = 0.0

    @property
    def gap(self) -> float:
        return self.energy - self.lower_bound

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.assignment)


def _arr(code, a) -> array:
    out = array(code)
    out.frombytes(np.ascontiguousarray(a, dtype={"i": np.int32, "b": np.int8, "d": np.float64}[code]).tobytes())
    return out


class PartialMatching:
    """Ternary assignment with trail, row counters and exploration frontier.

    Rows use the constraint-matrix numbering: X projection rows, Y
    projection rows, then one balance row per undirected product edge.
    """

    def __init__(self, space: ProductSpace, two_manifold: bool = True, closedness: bool = True):
        c = space.constraints
        m = c.matrix.tocsr()
        n = space.n_columns
        self.space = space
        self.n = n
        self.n_proj = c.n_x_rows + c.n_y_rows
        self.n_rows = m.shape[0]
        self.two_manifold = two_manifold
        self.closedness = closedness
        self.row_ptr = _arr("i", m.indptr)
        self.row_col = _arr("i", m.indices)
        self.row_coef = _arr("b", m.data)
        cc = c.by_column
        self.col_ptr = _arr("i", cc.indptr)
        self.col_row = _arr("i", cc.indices)
        self.col_coef = _arr("b", cc.data)

        self.value = _arr("b", np.full(n, FREE))
        self.level = _arr("i", np.zeros(n))
        self.n_sel_nb = _arr("i", np.zeros(n))  # selected neighbors (frontier membership)
        deg = np.diff(m.indptr)
        plus = np.bincount(m.nonzero()[0][m.data > 0], minlength=self.n_rows)
        self.ones_p = _arr("i", np.zeros(self.n_rows))
        self.ones_n = _arr("i", np.zeros(self.n_rows))
        self.free_p = _arr("i", plus)
        self.free_n = _arr("i", deg - plus)
        self.trail_var: list[int] = []
        self.trail_cause: list[int] = []
        self.decisions: list[int] = []  # trail positions of decisions
        self.n_selected = 0
        self.n_proj_done = 0
        self.n_frontier = 0
        self.queue: list[int] = []
        self.queued = bytearray(self.n_rows)

    # ------------------------------------------------------------------ basic state
    @property
    def decision_level(self) -> int:
        return len(self.decisions)

    @property
    def trail(self) -> list[tuple[int, int, str]]:
        return [(v, self.value[v], CAUSE_NAMES[c]) for v, c in zip(self.trail_var, self.trail_cause)]

    def assignment(self) -> np.ndarray:
        return np.frombuffer(self.value, dtype=np.int8).copy()

    def is_complete(self) -> bool:
        return self.n_proj_done == self.n_proj

    def frontier(self) -> np.ndarray:
        v = np.frombuffer(self.value, dtype=np.int8)
        c = np.frombuffer(self.n_sel_nb, dtype=np.int32)
        return np.flatnonzero((c > 0) & (v == FREE))

    def rows_of(self, i: int):
        return range(self.col_ptr[i], self.col_ptr[i + 1])

    def _neighbors(self, i: int):
        for s in range(self.col_ptr[i], self.col_ptr[i + 1]):
            r = self.col_row[s]
            if r < self.n_proj:
                continue
            want = -self.col_coef[s]
            for t in range(self.row_ptr[r], self.row_ptr[r + 1]):
                if self.row_coef[t] == want:
                    yield self.row_col[t]

    # ------------------------------------------------------------------ assignment
    def _assign(self, i: int, v: int, cause: int, level: int) -> None:
        self.value[i] = v
        self.level[i] = level
        self.trail_var.append(i)
        self.trail_cause.append(cause)
        if self.n_sel_nb[i] > 0:
            self.n_frontier -= 1
        for s in range(self.col_ptr[i], self.col_ptr[i + 1]):
            r = self.col_row[s]
            if self.col_coef[s] > 0:
                self.free_p[r] -= 1
                if v:
                    self.ones_p[r] += 1
                    if r < self.n_proj and self.ones_p[r] == 1:
                        self.n_proj_done += 1
            else:
                self.free_n[r] -= 1
                if v:
                    self.ones_n[r] += 1
            if not self.queued[r]:
                self.queued[r] = 1
                self.queue.append(r)
        if v:
            self.n_selected += 1
            for g in self._neighbors(i):
                self.n_sel_nb[g] += 1
                if self.n_sel_nb[g] == 1 and self.value[g] == FREE:
                    self.n_frontier += 1
                    self.on_frontier(g)

    def _unassign(self, i: int) -> None:
        v = self.value[i]
        self.value[i] = FREE
        for s in range(self.col_ptr[i], self.col_ptr[i + 1]):
            r = self.col_row[s]
            if self.col_coef[s] > 0:
                self.free_p[r] += 1
                if v:
                    if r < self.n_proj and self.ones_p[r] == 1:
                        self.n_proj_done -= 1
                    self.ones_p[r] -= 1
            else:
                self.free_n[r] += 1
                if v:
                    self.ones_n[r] -= 1
        if v:
            self.n_selected -= 1
            for g in self._neighbors(i):
                self.n_sel_nb[g] -= 1
                if self.n_sel_nb[g] == 0 and self.value[g] == FREE:
                    self.n_frontier -= 1
        if self.n_sel_nb[i] > 0:
            self.n_frontier += 1
            self.on_frontier(i)

    def on_frontier(self, i: int) -> None:
        """Hook called when a free variable (re)enters the frontier."""

    # ------------------------------------------------------------------ propagation
    def _row_level(self, r: int, skip: int = -1) -> int:
        lvl = 0
        for t in range(self.row_ptr[r], self.row_ptr[r + 1]):
            c = self.row_col[t]
            if c != skip and self.value[c] != FREE and self.level[c] > lvl:
                lvl = self.level[c]
        return lvl

    def _participants(self, r: int) -> list[int]:
        return [self.row_col[t] for t in range(self.row_ptr[r], self.row_ptr[r + 1])
                if self.value[self.row_col[t]] != FREE]

    def _conflict(self, kind: str, r: int, extra: int = -1) -> Conflict:
        parts = self._participants(r) if r >= 0 else []
        lvl = self._row_level(r) if r >= 0 else 0
        if extra >= 0:
            parts.append(extra)
            lvl = max(lvl, self.level[extra])
        return Conflict(kind, r, parts, lvl)

    def _force(self, r: int, want_coef: int, v: int, cause: int, lvl: int):
        """Assign ``v`` to every free column of row ``r`` with coefficient ``want_coef``."""
        for t in range(self.row_ptr[r], self.row_ptr[r + 1]):
            if self.row_coef[t] != want_coef:
                continue
            c = self.row_col[t]
            if self.value[c] == FREE:
                self._assign(c, v, cause, lvl)
        return None

    def _check_projection(self, r: int):
        ones, free = self.ones_p[r], self.free_p[r]
        if ones > 1:
            return self._conflict("contradiction", r)
        if ones == 1:
            if free:
                self._force(r, 1, 0, INJECTIVITY, self._row_level(r))
            return None
        if free == 0:
            return self._conflict("infeasible", r)
        if free == 1:
            self._force(r, 1, 1, SURJECTIVITY, self._row_level(r))
        return None

    def _check_boundary(self, r: int):
        a, b = self.ones_p[r], self.ones_n[r]
        fp, fn = self.free_p[r], self.free_n[r]
        if self.two_manifold:
            if a > 1 or b > 1:
                return self._conflict("contradiction", r)
            if (a and fp) or (b and fn):
                lvl = self._row_level(r)
                if a and fp:
                    self._force(r, 1, 0, TWO_MANIFOLD, lvl)
                if b and fn:
                    self._force(r, -1, 0, TWO_MANIFOLD, lvl)
                fp, fn = self.free_p[r], self.free_n[r]
        d = a - b  # > 0: row needs d more negatives, < 0: -d more positives
        if d > fn or -d > fp:
            return self._conflict("infeasible", r)
        if d > 0 and d == fn:
            self._force(r, -1, 1, GC_II, self._row_level(r))
        elif d < 0 and -d == fp:
            self._force(r, 1, 1, GC_II, self._row_level(r))
        elif d != 0 and self.closedness:
            self._closedness(r, -1 if d > 0 else 1)
        return None

    def _demand(self, r: int, coef: int) -> bool:
        d = self.ones_p[r] - self.ones_n[r]
        return d > 0 if coef < 0 else d < 0

    def _closedness(self, r: int, coef: int):
        for t in range(self.row_ptr[r], self.row_ptr[r + 1]):
            if self.row_coef[t] != coef:
                continue
            c = self.row_col[t]
            if self.value[c] != FREE:
                continue
            ok = True
            lvl = 0
            for s in range(self.col_ptr[c], self.col_ptr[c + 1]):
                r2 = self.col_row[s]
                if r2 < self.n_proj:
                    continue
                if not self._demand(r2, self.col_coef[s]):
                    ok = False
                    break
                lvl = max(lvl, self._row_level(r2, c))
            if ok:
                self._assign(c, 1, CLOSEDNESS, lvl)

    def propagate(self) -> Conflict | None:
        """Apply all rules to fixpoint; returns a conflict or ``None``."""
        while self.queue:
            r = self.queue.pop()
            self.queued[r] = 0
            if r < self.n_proj:
                conflict = self._check_projection(r)
            else:
                conflict = self._check_boundary(r)
            if conflict is not None:
                self._clear_queue()
                return conflict
        return None

    def _clear_queue(self):
        for r in self.queue:
            self.queued[r] = 0
        self.queue.clear()

    def set_and_propagate(self, i: int, value: int, cause: int = DECISION):
        """Assign ``i`` and propagate. Returns the forced trail entries or a conflict."""
        if self.value[i] != FREE:
            if self.value[i] == value:
                return []
            return Conflict("contradiction", -1, [i], self.level[i])
        start = len(self.trail_var)
        if cause == DECISION:
            self.decisions.append(start)
        lvl = self.decision_level if cause in (DECISION, SEED) else self._cause_level()
        self._assign(i, value, cause, lvl)
        conflict = self.propagate()
        if conflict is not None:
            return conflict
        return [(v, self.value[v], CAUSE_NAMES[c])
                for v, c in zip(self.trail_var[start + 1:], self.trail_cause[start + 1:])]

    def _cause_level(self) -> int:
        return self.decision_level

    def backtrack(self, conflict: Conflict) -> bool:
        """Undo through the most recent decision involved in ``conflict``.

        That decision is then excluded (assigned 0) one level lower. Returns
        ``False`` when the conflict involves no decision.
        """
        lc = min(conflict.level, self.decision_level)
        if lc <= 0:
            return False
        pos = self.decisions[lc - 1]
        dec = self.trail_var[pos]
        touched = []
        while len(self.trail_var) > pos:
            v = self.trail_var.pop()
            self.trail_cause.pop()
            self._unassign(v)
            touched.append(v)
        del self.decisions[lc - 1:]
        self._assign(dec, 0, EXCLUDED, lc - 1)
        # rows of popped variables may have lost propagations of lower levels
        for v in touched:
            for s in range(self.col_ptr[v], self.col_ptr[v + 1]):
                r = self.col_row[s]
                if not self.queued[r]:
                    self.queued[r] = 1
                    self.queue.append(r)
        return True

    def undo_all(self) -> None:
        while self.trail_var:
            self._unassign(self.trail_var.pop())
            self.trail_cause.pop()
        self.decisions.clear()
        self._clear_queue()

    # ------------------------------------------------------------------ checks
    def check_invariants(self) -> None:
        """Recompute counters and frontier from scratch and compare (debug aid)."""
        x = np.frombuffer(self.value, dtype=np.int8)
        m = self.space.constraints.matrix.tocsr()
        one = (x == 1).astype(np.int64)
        free = (x == FREE).astype(np.int64)
        pos = m.multiply(m > 0).astype(np.int64)
        neg = (-m.multiply(m < 0)).astype(np.int64)
        assert np.array_equal(pos @ one, np.frombuffer(self.ones_p, dtype=np.int32))
        assert np.array_equal(neg @ one, np.frombuffer(self.ones_n, dtype=np.int32))
        assert np.array_equal(pos @ free, np.frombuffer(self.free_p, dtype=np.int32))
        assert np.array_equal(neg @ free, np.frombuffer(self.free_n, dtype=np.int32))
        assert np.all(pos[: self.n_proj] @ one <= 1)
        if self.two_manifold:
            assert np.all(pos @ one <= 1) and np.all(neg @ one <= 1)
        nb = np.zeros(self.n, dtype=np.int64)
        for f in np.flatnonzero(x == 1):
            nb[self.space.neighbors(int(f))] += 1
        # neighbors() drops f itself; the counters never include self-loops either
        got = np.frombuffer(self.n_sel_nb, dtype=np.int32)
        assert np.array_equal((nb > 0) & (x == FREE), (got > 0) & (x == FREE))
        assert self.n_frontier == int(np.count_nonzero((got > 0) & (x == FREE)))


# ---------------------------------------------------------------------- seed & search

def seed_order(X: Shape, Y: Shape, config: SolverConfig | None = None):
    """Candidate seed triangles of the smaller shape, most regular first.

    Returns ``(side, triangles)`` with side ``"X"`` or ``"Y"``.
    """
    config = config or SolverConfig()
    side, Z = ("X", X) if X.n_triangles <= Y.n_triangles else ("Y", Y)
    score = regularity_scores(Z, config.w_curv, config.min_angle, config.max_angle)
    real = ~Z.hole_triangle_flags
    if not np.any(np.isfinite(score) & real):
        score = regularity_scores(Z, config.w_curv, strict=False)
        score = np.where(real | ~real.any(), score, np.inf)
    order = np.lexsort((np.arange(len(score)), score))
    order = [int(t) for t in order if np.isfinite(score[t])]
    return side, order


def initialize_seed(X: Shape, Y: Shape, space: ProductSpace, M, config: SolverConfig | None = None,
                    skip: int = 0) -> int:
    """TT column of the ``skip``-th most regular triangle with the smallest min-marginal."""
    M = np.asarray(getattr(M, "total", M), dtype=float)
    side, order = seed_order(X, Y, config)
    face = space.x_face if side == "X" else space.y_face
    tried = 0
    for z in order:
        cand = np.flatnonzero((face == z) & (space.kind == TT))
        if len(cand) == 0:
            continue
        if tried == skip:
            return int(cand[np.lexsort((cand, M[cand]))[0]])
        tried += 1
    raise RoundingError("no triangle-triangle seed candidate left")


class _Search(PartialMatching):
    """PartialMatching plus a lazy min-heap over the frontier keyed by min-marginals."""

    def __init__(self, space, M, two_manifold=True, closedness=True):
        super().__init__(space, two_manifold, closedness)
        self.M = np.asarray(M, dtype=float)
        self.heap: list[tuple[float, int]] = []

    def on_frontier(self, i: int) -> None:
        heapq.heappush(self.heap, (float(self.M[i]), int(i)))

    def set_marginals(self, M) -> None:
        self.M = np.asarray(M, dtype=float)
        f = self.frontier()
        self.heap = list(zip(self.M[f].tolist(), f.tolist()))
        heapq.heapify(self.heap)

    def explore_step(self) -> int | None:
        """Free frontier variable with the smallest min-marginal, or ``None``."""
        while self.heap:
            m, i = self.heap[0]
            if self.value[i] == FREE and self.n_sel_nb[i] > 0 and m == self.M[i]:
                return i
            heapq.heappop(self.heap)
        return None


def explore_step(state: _Search, M=None) -> int | None:
    if M is not None:
        state.set_marginals(getattr(M, "total", M))
    return state.explore_step()


def maybe_recompute(state: _Search, root: DualState, config: SolverConfig, k: int,
                    backtracks_in_round: int, budget: int, alpha: float, force: bool = False):
    """Fresh min-marginals on the reduced problem if a threshold is reached.

    The threshold is ``k * alpha`` selected product triangles, or more than
    ``budget`` backtracks since the last recomputation. Returns
    ``(fired, conflict)``; ``conflict`` is set when the reduced problem is
    infeasible.
    """
    if not force and state.n_selected < k * alpha and backtracks_in_round <= budget:
        return False, None
    try:
        red = fix_and_reduce(root, state.assignment())
    except DualInfeasibleError as exc:
        r = exc.row if exc.row is not None else -1
        lvl = state.decision_level
        return True, Conflict("infeasible", r, [], lvl)
    red = run_dual(red, config.recompute_passes)
    M = total_min_marginals(red).total
    state.set_marginals(M)
    state.last_bound = red.lower_bound()
    state.sign_candidate = M < 0
    return True, None


@dataclass
class _Incumbent:
    value: float = np.inf
    x: np.ndarray | None = None
    seed: int = -1

    def offer(self, x, e, seed) -> bool:
        val = float(e @ x)
        if val < self.value:
            self.value, self.x, self.seed = val, np.asarray(x, dtype=np.int8), seed
            return True
        return False


def _auto(value, space: ProductSpace, small, large):
    if value is not None:
        return value
    return small if space.n_columns <= SMALL_PROBLEM else large


SMALL_PROBLEM = 20_000


def solve_problem(space: ProductSpace, energy, X: Shape, Y: Shape,
                  config: SolverConfig | None = None, root: DualState | None = None) -> Matching:
    """Round a matching for an arbitrary energy over ``space``.

    The first complete matching found from a seed is kept as incumbent. On
    small problems the search then goes on within an extra backtrack budget,
    treating partial matchings whose reduced dual bound cannot beat the
    incumbent as conflicts, and further seeds are tried. The lowest-energy
    matching wins.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    e = np.asarray(energy, dtype=np.float64)
    if root is None:
        root = run_dual(init_dual(e, build_subproblems(space)), config.dual_passes)
    lb = root.lower_bound()
    tol = 1e-9 * max(1.0, abs(lb))
    M0 = total_min_marginals(root).total
    cons = space.constraints
    best = _Incumbent()
    # the signs of the min-marginals are often a feasible matching already;
    # if that matching attains the bound it is optimal
    sign = extract_by_sign(M0)
    if config.sign_rounding and cons.is_feasible(sign):
        best.offer(sign, e, -1)
        if best.value <= lb + tol:
            return Matching(best.x, best.value, lb, wall_time=time.perf_counter() - t0)
    n_min = min(space.n_x_faces, space.n_y_faces)
    alpha = config.alpha_factor * n_min
    round_budget = config.max_backtracks_per_round or n_min
    total_budget = config.max_backtracks or 20 * round_budget
    trials = _auto(config.seed_trials, space, config.max_restarts, 1)
    improve = _auto(config.improve_backtracks, space, 200, 0)
    stats = dict(decisions=0, backtracks=0, recomputations=0, restarts=0)

    if config.seed_triangle is not None:
        seeds = [config.seed_triangle]
    else:
        seeds = []
        for s in range(config.max_restarts):
            try:
                seeds.append(initialize_seed(X, Y, space, M0, config, skip=s))
            except RoundingError:
                break
    if not seeds:
        raise RoundingError("no seed candidate")

    budget = {"left": improve}
    done = 0
    for attempt, seed in enumerate(seeds):
        st = _Search(space, M0, config.two_manifold, config.closedness)
        st.last_bound = lb
        if isinstance(st.set_and_propagate(seed, 1, SEED), Conflict):
            continue
        ok = _round_from(st, seed, root, e, config, alpha, round_budget, total_budget, budget,
                         best, stats, found=best.x is not None and improve > 0)
        if not ok:
            logger.info("primal restart after seed=%d failed", seed)
            continue
        logger.info("primal done seed=%d energy=%.12g lb=%.12g decisions=%d backtracks=%d",
                    seed, best.value, lb, stats["decisions"], stats["backtracks"])
        stats["restarts"] = attempt
        done += 1
        if done >= trials or best.value <= lb + tol:
            break
    if best.x is not None and budget["left"] > 0 and best.value > lb + tol:
        _improve_over_row(space, X, Y, M0, root, e, config, alpha, round_budget, total_budget,
                          budget, best, stats, lb + tol)
    if best.x is None:
        raise RoundingError(f"rounding failed for all {len(seeds)} seed candidates")
    if not cons.is_feasible(best.x):
        raise RoundingError("internal error: rounded matching is infeasible")
    return Matching(best.x, best.value, lb, seed=best.seed, wall_time=time.perf_counter() - t0,
                    **stats)


def _improve_over_row(space, X, Y, M0, root, e, config, alpha, round_budget, total_budget,
                      budget, best, stats, target):
    """Bounded search over every column of the seed triangle's projection row.

    Exactly one of them is part of any matching, so with an unlimited
    budget this proves optimality (up to the closedness heuristic).
    """
    side, order = seed_order(X, Y, config)
    face = space.x_face if side == "X" else space.y_face
    cand = np.flatnonzero(face == order[0])
    cand = cand[np.lexsort((cand, M0[cand]))]
    for c in cand.tolist():
        if budget["left"] <= 0 or best.value <= target:
            return
        budget["left"] -= 1
        st = _Search(space, M0, config.two_manifold, config.closedness)
        if isinstance(st.set_and_propagate(c, 1, SEED), Conflict):
            continue
        try:
            red = run_dual(fix_and_reduce(root, st.assignment()), config.recompute_passes)
        except DualInfeasibleError:
            continue
        if red.lower_bound() >= best.value - 1e-12:
            continue
        st.set_marginals(total_min_marginals(red).total)
        st.last_bound = red.lower_bound()
        _round_from(st, c, root, e, config, alpha, round_budget, total_budget, budget, best,
                    stats, found=True)


def _round_from(st: _Search, seed: int, root, e, config, alpha, round_budget, total_budget,
                budget, best: _Incumbent, stats, found: bool = False) -> bool:
    """Search from a seeded state; returns whether a complete matching was reached.

    Complete matchings (and feasible sign roundings) are offered to ``best``.
    Once a matching is known (``found``), partial matchings whose reduced
    bound cannot beat it count as conflicts, and every further backtrack is
    paid from ``budget["left"]``.
    """
    cons = st.space.constraints
    k = 1
    bt_round = 0
    bt_seed = 0
    steps = 0
    reached = False
    while True:
        conflict = None
        if st.is_complete():
            best.offer(st.assignment(), e, seed)
            found = reached = True
            if budget["left"] <= 0:
                return True
            conflict = Conflict("bound", -1, [], st.decision_level)
        else:
            pruning = found and budget["left"] > 0
            fired, conflict = maybe_recompute(st, root, config, k, bt_round, round_budget, alpha,
                                              force=pruning)
            if fired:
                stats["recomputations"] += 1
                bt_round = 0
                k = int(st.n_selected // alpha) + 1
                if conflict is None:
                    if config.sign_rounding and cons.is_feasible(st.sign_candidate):
                        best.offer(st.sign_candidate, e, seed)
                        found = reached = True
                        if budget["left"] <= 0:
                            return True
                    if pruning and st.last_bound >= best.value - 1e-12:
                        conflict = Conflict("bound", -1, [], st.decision_level)
            if conflict is None:
                i = st.explore_step()
                if i is None:
                    # closed partial surface that cannot grow: drop the latest decision
                    conflict = Conflict("infeasible", -1, [], st.decision_level)
                else:
                    stats["decisions"] += 1
                    res = st.set_and_propagate(i, 1, DECISION)
                    conflict = res if isinstance(res, Conflict) else None
        while conflict is not None:
            stats["backtracks"] += 1
            bt_round += 1
            bt_seed += 1
            if found:
                budget["left"] -= 1
                if budget["left"] < 0:
                    return reached
            elif bt_seed > total_budget:
                return reached
            if not st.backtrack(conflict):
                return reached
            conflict = st.propagate()
        steps += 1
        if config.debug:
            st.check_invariants()
        if config.log_every and steps % config.log_every == 0:
            logger.info("primal selected=%d frontier=%d backtracks=%d lb=%.12g",
                        st.n_selected, st.n_frontier, stats["backtracks"], st.last_bound)


def solve(X: Shape, Y: Shape, config: SolverConfig | None = None, space: ProductSpace | None = None,
          energy=None) -> Matching:
    """Match two closed shapes end to end.

    Normalizes both shapes to unit area, enumerates the product space,
    computes the energy (unless given), runs the dual and rounds.
    """
    config = config or SolverConfig()
    Xn, Yn = normalize_shapes(X, Y)
    if space is None:
        space = build_product_space(Xn, Yn)
    if energy is None:
        energy = compute_energy(Xn, Yn, space, config.weights)
    return solve_problem(space, energy, Xn, Yn, config)
