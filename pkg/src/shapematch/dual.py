"""Lagrange decomposition of the matching ILP, one subproblem per constraint row.

Every row becomes a small 0/1 subproblem with its own share ``lam`` of the
cost of each variable it touches; the shares of a variable always sum to its
energy. Two row types occur:

* exactly-one rows (projection): ``sum_i x_i = 1``
* balance rows (product edges): ``sum_{i in P} x_i - sum_{i in N} x_i = d``

Both have closed-form minima and min-marginals, which makes sequential
min-marginal averaging cheap. The sweep itself is compiled with numba.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .product_space import ProductSpace

logger = logging.getLogger(__name__)

EXACTLY_ONE = 0
BALANCE = 1
KIND_LABELS = {EXACTLY_ONE: "projection", BALANCE: "boundary"}

INF = np.inf


class DualInfeasibleError(ValueError):
    """A fixed partial assignment violates (or cannot complete) a constraint row."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


# --------------------------------------------------------------------- kernels

@numba.njit(cache=True)
def _sort_small(a, n):
    for i in range(1, n):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


@numba.njit(cache=True)
def _balance_min(P, n_p, N, n_n, d):
    # min of sum(chosen P) + sum(chosen N) s.t. |chosen P| - |chosen N| = d;
    # both inputs sorted ascending. Pairing sorted sequences is optimal since
    # pair costs are nondecreasing.
    if d < 0:
        return _balance_min(N, n_n, P, n_p, -d)
    if n_p < d:
        return np.inf
    tot = 0.0
    for j in range(d):
        tot += P[j]
    j = 0
    while d + j < n_p and j < n_n:
        v = P[d + j] + N[j]
        if v >= 0.0:
            break
        tot += v
        j += 1
    return tot


@numba.njit(cache=True)
def _mm_from_branches(f1, f0):
    if f1 == np.inf and f0 == np.inf:
        return np.nan
    if f1 == np.inf:
        return np.inf
    if f0 == np.inf:
        return -np.inf
    return f1 - f0


@numba.njit(cache=True)
def _exactly_one_min(lam, lo, hi):
    m = np.inf
    for t in range(lo, hi):
        if lam[t] < m:
            m = lam[t]
    return m


@numba.njit(cache=True)
def _balance_row_min(lam, coef, lo, hi, d, bufP, bufN):
    n_p = 0
    n_n = 0
    for t in range(lo, hi):
        if coef[t] > 0:
            bufP[n_p] = lam[t]
            n_p += 1
        else:
            bufN[n_n] = lam[t]
            n_n += 1
    _sort_small(bufP, n_p)
    _sort_small(bufN, n_n)
    return _balance_min(bufP, n_p, bufN, n_n, d)


@numba.njit(cache=True)
def _balance_mm(lam, coef, lo, hi, s, d, bufP, bufN):
    n_p = 0
    n_n = 0
    for t in range(lo, hi):
        if t == s:
            continue
        if coef[t] > 0:
            bufP[n_p] = lam[t]
            n_p += 1
        else:
            bufN[n_n] = lam[t]
            n_n += 1
    _sort_small(bufP, n_p)
    _sort_small(bufN, n_n)
    f0 = _balance_min(bufP, n_p, bufN, n_n, d)
    if coef[s] > 0:
        f1 = _balance_min(bufP, n_p, bufN, n_n, d - 1)
    else:
        f1 = _balance_min(bufP, n_p, bufN, n_n, d + 1)
    if f1 != np.inf:
        f1 += lam[s]
    return _mm_from_branches(f1, f0)


@numba.njit(cache=True)
def _exactly_one_mm(lam, lo, hi, s):
    other = np.inf
    for t in range(lo, hi):
        if t != s and lam[t] < other:
            other = lam[t]
    return _mm_from_branches(lam[s], other)


@numba.njit(cache=True)
def _row_minima(row_ptr, row_kind, row_rhs, coef, lam, max_len):
    bufP = np.empty(max_len)
    bufN = np.empty(max_len)
    n_rows = len(row_kind)
    out = np.empty(n_rows)
    for r in range(n_rows):
        lo, hi = row_ptr[r], row_ptr[r + 1]
        if row_kind[r] == 0:
            out[r] = _exactly_one_min(lam, lo, hi)
        else:
            out[r] = _balance_row_min(lam, coef, lo, hi, row_rhs[r], bufP, bufN)
    return out


@numba.njit(cache=True)
def _all_min_marginals(row_ptr, row_kind, row_rhs, coef, lam, max_len):
    bufP = np.empty(max_len)
    bufN = np.empty(max_len)
    out = np.empty(len(lam))
    for r in range(len(row_kind)):
        lo, hi = row_ptr[r], row_ptr[r + 1]
        if row_kind[r] == 0:
            b1 = np.inf
            b2 = np.inf
            for t in range(lo, hi):
                v = lam[t]
                if v < b1:
                    b2 = b1
                    b1 = v
                elif v < b2:
                    b2 = v
            for t in range(lo, hi):
                # equal minima leave b2 == b1, so ties are covered
                other = b2 if lam[t] == b1 else b1
                out[t] = _mm_from_branches(lam[t], other)
        else:
            for t in range(lo, hi):
                out[t] = _balance_mm(lam, coef, lo, hi, t, row_rhs[r], bufP, bufN)
    return out


@numba.njit(cache=True)
def _mma_sweep(row_ptr, row_kind, row_rhs, coef, slot_row, var_ids, var_ptr, var_slots,
               lam, max_len):
    """One forward sweep of min-marginal averaging in ascending variable order."""
    bufP = np.empty(max_len)
    bufN = np.empty(max_len)
    n_slots = len(lam)
    suffix = np.empty(n_slots)
    prefix = np.full(len(row_kind), np.inf)
    for r in range(len(row_kind)):
        if row_kind[r] == 0:
            run = np.inf
            for t in range(row_ptr[r + 1] - 1, row_ptr[r] - 1, -1):
                suffix[t] = run
                if lam[t] < run:
                    run = lam[t]
    mm = np.empty(64)
    n_skipped = 0
    for k in range(len(var_ids)):
        lo, hi = var_ptr[k], var_ptr[k + 1]
        deg = hi - lo
        if deg == 0:
            continue
        if deg > len(mm):
            mm = np.empty(deg)
        finite = True
        total = 0.0
        for q in range(lo, hi):
            s = var_slots[q]
            r = slot_row[s]
            if row_kind[r] == 0:
                other = prefix[r]
                if suffix[s] < other:
                    other = suffix[s]
                v = _mm_from_branches(lam[s], other)
            else:
                v = _balance_mm(lam, coef, row_ptr[r], row_ptr[r + 1], s, row_rhs[r], bufP, bufN)
            mm[q - lo] = v
            if not np.isfinite(v):
                finite = False
            total += v
        if finite:
            avg = total / deg
            for q in range(lo, hi):
                s = var_slots[q]
                lam[s] += avg - mm[q - lo]
        else:
            n_skipped += 1
        for q in range(lo, hi):
            s = var_slots[q]
            r = slot_row[s]
            if row_kind[r] == 0 and lam[s] < prefix[r]:
                prefix[r] = lam[s]
    return n_skipped


# --------------------------------------------------------------------- data types

@dataclass(frozen=True)
class Subproblem:
    kind: int  # EXACTLY_ONE or BALANCE
    support: np.ndarray  # variable ids
    coefficients: np.ndarray  # +1 / -1
    rhs: int

    def __post_init__(self):
        if len(self.support) == 0:
            raise ValueError("subproblem support must be nonempty")
        if len(self.coefficients) != len(self.support):
            raise ValueError("one coefficient per supported variable")
        if self.kind == EXACTLY_ONE and (np.any(np.asarray(self.coefficients) != 1) or self.rhs != 1):
            raise ValueError("projection subproblems are sum(x) = 1")


@dataclass
class Decomposition:
    """Rows of the (possibly reduced) problem in CSR layout over slots.

    A slot is one (row, variable) incidence. ``var_ids`` lists the free
    variables (ascending); ``var_slots[var_ptr[k]:var_ptr[k+1]]`` are the
    slots of ``var_ids[k]``.
    """

    n_vars: int
    row_ptr: np.ndarray
    row_kind: np.ndarray
    row_rhs: np.ndarray
    row_origin: np.ndarray  # row id in the full constraint system
    slot_var: np.ndarray
    slot_coef: np.ndarray
    slot_row: np.ndarray
    var_ids: np.ndarray
    var_ptr: np.ndarray
    var_slots: np.ndarray
    max_row_len: int

    @property
    def n_rows(self) -> int:
        return len(self.row_kind)

    @property
    def n_slots(self) -> int:
        return len(self.slot_var)

    def degree(self) -> np.ndarray:
        deg = np.zeros(self.n_vars, dtype=np.int64)
        deg[self.var_ids] = np.diff(self.var_ptr)
        return deg

    def subproblem(self, r: int) -> Subproblem:
        lo, hi = self.row_ptr[r], self.row_ptr[r + 1]
        return Subproblem(int(self.row_kind[r]), self.slot_var[lo:hi].copy(),
                          self.slot_coef[lo:hi].copy(), int(self.row_rhs[r]))


def _make_decomposition(n_vars, rows, cols, coef, kind_of_row, rhs_of_row, origin_of_row,
                        free_vars) -> Decomposition:
    """Assemble from COO triplets whose row ids are already compact 0..n_rows-1."""
    n_rows = len(kind_of_row)
    order = np.lexsort((cols, rows))
    rows, cols, coef = rows[order], cols[order], coef[order]
    row_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.add.at(row_ptr, rows + 1, 1)
    row_ptr = np.cumsum(row_ptr)
    by_var = np.lexsort((rows, cols))
    var_ids = np.asarray(free_vars, dtype=np.int64)
    counts = np.zeros(n_vars, dtype=np.int64)
    np.add.at(counts, cols, 1)
    var_ptr = np.concatenate([[0], np.cumsum(counts[var_ids])]).astype(np.int64)
    # every slot belongs to a free variable, so by_var lists them grouped by var_ids order
    max_len = int(np.diff(row_ptr).max()) if n_rows else 1
    return Decomposition(
        n_vars=n_vars, row_ptr=row_ptr, row_kind=np.asarray(kind_of_row, dtype=np.int8),
        row_rhs=np.asarray(rhs_of_row, dtype=np.int64),
        row_origin=np.asarray(origin_of_row, dtype=np.int64),
        slot_var=cols.astype(np.int64), slot_coef=coef.astype(np.int8),
        slot_row=rows.astype(np.int64), var_ids=var_ids, var_ptr=var_ptr,
        var_slots=by_var.astype(np.int64), max_row_len=max(max_len, 1))


def build_subproblems(space: ProductSpace) -> Decomposition:
    """One subproblem per row of the constraint system."""
    c = space.constraints
    m = c.matrix.tocoo()
    n_proj = c.n_x_rows + c.n_y_rows
    kind = np.where(np.arange(c.n_rows) < n_proj, EXACTLY_ONE, BALANCE)
    return _make_decomposition(space.n_columns, m.row.astype(np.int64), m.col.astype(np.int64),
                               m.data.astype(np.int64), kind, c.rhs, np.arange(c.n_rows),
                               np.arange(space.n_columns))


@dataclass
class MinMarginals:
    per_slot: np.ndarray  # m(S, i) aligned with the decomposition slots
    total: np.ndarray  # M_i per variable (full length)


@dataclass
class DualState:
    """Lagrange multipliers (one per slot) reparametrizing the energy."""

    decomposition: Decomposition
    lam: np.ndarray
    energy: np.ndarray
    fixed: np.ndarray  # -1 free, 0 or 1 fixed; full length
    history: list = field(default_factory=list)

    @property
    def free(self) -> np.ndarray:
        return self.fixed < 0

    def reparametrization_error(self) -> float:
        d = self.decomposition
        sums = np.zeros(d.n_vars)
        np.add.at(sums, d.slot_var, self.lam)
        covered = np.zeros(d.n_vars, dtype=bool)
        covered[d.slot_var] = True
        if not covered.any():
            return 0.0
        return float(np.max(np.abs(sums[covered] - self.energy[covered])))

    def row_minima(self) -> np.ndarray:
        d = self.decomposition
        return _row_minima(d.row_ptr, d.row_kind, d.row_rhs, d.slot_coef, self.lam,
                           d.max_row_len)

    def lower_bound(self) -> float:
        """Dual bound on the energy of every feasible completion of ``fixed``."""
        d = self.decomposition
        lb = float(self.row_minima().sum()) if d.n_rows else 0.0
        lb += float(self.energy[self.fixed == 1].sum())
        uncovered = self.free.copy()
        uncovered[d.slot_var] = False
        lb += float(np.minimum(self.energy[uncovered], 0.0).sum())
        return lb


def init_dual(energy, decomposition: Decomposition, fixed=None) -> DualState:
    """Split every variable's cost uniformly over the subproblems containing it."""
    e = np.ascontiguousarray(np.asarray(energy, dtype=np.float64))
    if len(e) != decomposition.n_vars:
        raise ValueError("energy length does not match the number of variables")
    deg = decomposition.degree()
    lam = e[decomposition.slot_var] / deg[decomposition.slot_var]
    if fixed is None:
        fixed = -np.ones(decomposition.n_vars, dtype=np.int8)
    return DualState(decomposition, lam, e, np.asarray(fixed, dtype=np.int8).copy())


# --------------------------------------------------------------------- single-row API

def subproblem_min(S: Subproblem, lam) -> float:
    """Optimal value of one subproblem under costs ``lam`` (aligned with S.support)."""
    lam = np.asarray(lam, dtype=np.float64)
    if len(lam) != len(S.support):
        raise ValueError("one cost per supported variable")
    if S.kind == EXACTLY_ONE:
        return float(lam.min())
    n = len(lam)
    return float(_balance_row_min(lam, np.asarray(S.coefficients, dtype=np.int8), 0, n,
                                  int(S.rhs), np.empty(n), np.empty(n)))


def min_marginal(S: Subproblem, lam, i: int) -> float:
    """``min_{x_i = 1} - min_{x_i = 0}`` for the ``i``-th supported variable of S.

    ``-inf`` if the variable is forced to 1, ``+inf`` if forced to 0.
    """
    lam = np.asarray(lam, dtype=np.float64)
    n = len(lam)
    if not 0 <= i < n:
        raise IndexError("variable is not in the subproblem support")
    if S.kind == EXACTLY_ONE:
        return float(_exactly_one_mm(lam, 0, n, i))
    return float(_balance_mm(lam, np.asarray(S.coefficients, dtype=np.int8), 0, n, i,
                             int(S.rhs), np.empty(n), np.empty(n)))


# --------------------------------------------------------------------- passes

def mma_pass(state: DualState) -> tuple[DualState, float]:
    """One sweep of min-marginal averaging; returns the state and its new bound.

    Every variable's min-marginals are equalized across its subproblems,
    visiting variables in ascending index. The update sums to zero per
    variable, so the shares keep summing to the energy. Variables with an
    infinite min-marginal (forced) are left untouched.
    """
    d = state.decomposition
    _mma_sweep(d.row_ptr, d.row_kind, d.row_rhs, d.slot_coef, d.slot_row, d.var_ids,
               d.var_ptr, d.var_slots, state.lam, d.max_row_len)
    lb = state.lower_bound()
    state.history.append(lb)
    return state, lb


def run_dual(state: DualState, passes: int = 50, rel_tol: float = 1e-7,
             log: logging.Logger | None = None) -> DualState:
    """Repeat :func:`mma_pass` until ``passes`` or until the bound stalls."""
    log = log or logger
    prev = state.lower_bound()
    if not state.history:
        state.history.append(prev)
    n_forced = int(np.count_nonzero(state.fixed >= 0))
    for k in range(passes):
        _, lb = mma_pass(state)
        log.info("dual pass=%d lb=%.12g forced=%d", k + 1, lb, n_forced)
        if lb - prev < rel_tol * max(1.0, abs(lb)):
            break
        prev = lb
    return state


def total_min_marginals(state: DualState) -> MinMarginals:
    """Per-slot min-marginals and their per-variable sums.

    Free variables outside every subproblem get their raw energy; fixed
    variables get ``-inf`` (fixed to 1) or ``+inf`` (fixed to 0).
    """
    d = state.decomposition
    per_slot = _all_min_marginals(d.row_ptr, d.row_kind, d.row_rhs, d.slot_coef, state.lam,
                                  d.max_row_len)
    total = np.zeros(d.n_vars)
    np.add.at(total, d.slot_var, per_slot)
    covered = np.zeros(d.n_vars, dtype=bool)
    covered[d.slot_var] = True
    free_uncovered = state.free & ~covered
    total[free_uncovered] = state.energy[free_uncovered]
    total[state.fixed == 1] = -np.inf
    total[state.fixed == 0] = np.inf
    return MinMarginals(per_slot, total)


def extract_by_sign(M: MinMarginals | np.ndarray) -> np.ndarray:
    total = M.total if isinstance(M, MinMarginals) else np.asarray(M)
    return (total < 0).astype(np.int8)


# --------------------------------------------------------------------- reduction

def fix_and_reduce(state: DualState, assignment) -> DualState:
    """Reduced decomposition after fixing variables.

    ``assignment`` holds -1 (free), 0 or 1 per variable. Fixed variables
    leave every subproblem; an exactly-one row containing a 1 is dropped and
    its other variables are fixed to 0; balance rows absorb the fixed
    coefficients into their right-hand side. Variables that the reduced rows
    force are fixed too. Multipliers of the remaining slots are kept, so the
    shares of every free variable still sum to its energy.
    """
    d = state.decomposition
    fixed = np.asarray(assignment, dtype=np.int8).copy()
    if fixed.shape != (d.n_vars,):
        raise ValueError("assignment must have one entry per variable")
    prev = state.fixed >= 0
    if np.any(prev & (fixed >= 0) & (fixed != state.fixed)):
        raise DualInfeasibleError("assignment contradicts earlier fixes")
    fixed[prev] = state.fixed[prev]
    if not np.any((fixed >= 0) & ~prev):
        return state

    slot_row = d.slot_row
    slot_var = d.slot_var
    coef = d.slot_coef.astype(np.int64)
    n_rows = d.n_rows
    while True:
        val = fixed[slot_var]
        ones = np.bincount(slot_row, weights=(val == 1) * coef, minlength=n_rows)
        n_ones = np.bincount(slot_row, weights=(val == 1), minlength=n_rows).astype(np.int64)
        is_free = val < 0
        proj = d.row_kind == EXACTLY_ONE
        bad = proj & (n_ones > 1)
        if bad.any():
            r = int(np.flatnonzero(bad)[0])
            raise DualInfeasibleError(f"two variables fixed to 1 in row {d.row_origin[r]}",
                                      int(d.row_origin[r]))
        new_fix = np.zeros(d.n_vars, dtype=np.int8) - 1
        # exactly-one rows with a fixed 1: all free siblings -> 0
        done = proj & (n_ones == 1)
        m = done[slot_row] & is_free
        new_fix[slot_var[m]] = 0
        # remaining count bounds
        n_pf = np.bincount(slot_row, weights=is_free & (coef > 0), minlength=n_rows).astype(np.int64)
        n_nf = np.bincount(slot_row, weights=is_free & (coef < 0), minlength=n_rows).astype(np.int64)
        rhs = d.row_rhs - ones.astype(np.int64)
        open_proj = proj & (n_ones == 0)
        empty = open_proj & (n_pf == 0)
        if empty.any():
            r = int(np.flatnonzero(empty)[0])
            raise DualInfeasibleError(f"row {d.row_origin[r]} cannot be satisfied", int(d.row_origin[r]))
        single = open_proj & (n_pf == 1)
        m = single[slot_row] & is_free
        _set_forced(new_fix, slot_var[m], 1, d)
        bal = ~proj
        p_lo = np.maximum(0, rhs)
        p_hi = np.minimum(n_pf, n_nf + rhs)
        infeasible = bal & (p_lo > p_hi)
        if infeasible.any():
            r = int(np.flatnonzero(infeasible)[0])
            raise DualInfeasibleError(f"row {d.row_origin[r]} cannot be balanced", int(d.row_origin[r]))
        n_lo = p_lo - rhs
        n_hi = p_hi - rhs
        pos = coef > 0
        r_of = slot_row
        m = bal[r_of] & is_free & pos & (p_lo[r_of] == n_pf[r_of]) & (n_pf[r_of] > 0)
        _set_forced(new_fix, slot_var[m], 1, d)
        m = bal[r_of] & is_free & pos & (p_hi[r_of] == 0)
        _set_forced(new_fix, slot_var[m], 0, d)
        m = bal[r_of] & is_free & ~pos & (n_lo[r_of] == n_nf[r_of]) & (n_nf[r_of] > 0)
        _set_forced(new_fix, slot_var[m], 1, d)
        m = bal[r_of] & is_free & ~pos & (n_hi[r_of] == 0)
        _set_forced(new_fix, slot_var[m], 0, d)
        newly = (new_fix >= 0) & (fixed < 0)
        if not newly.any():
            break
        fixed[newly] = new_fix[newly]

    val = fixed[slot_var]
    ones = np.bincount(slot_row, weights=(val == 1) * coef, minlength=n_rows).astype(np.int64)
    is_free = val < 0
    free_in_row = np.bincount(slot_row, weights=is_free, minlength=n_rows).astype(np.int64)
    rhs = d.row_rhs - ones
    nonempty = free_in_row > 0
    closed = ~nonempty & (d.row_kind == BALANCE) & (rhs != 0)
    if closed.any():
        r = int(np.flatnonzero(closed)[0])
        raise DualInfeasibleError(f"row {d.row_origin[r]} is unbalanced", int(d.row_origin[r]))
    keep_row = nonempty
    new_row_id = -np.ones(n_rows, dtype=np.int64)
    new_row_id[keep_row] = np.arange(int(keep_row.sum()))
    keep_slot = is_free & keep_row[slot_row]
    free_vars = np.flatnonzero(fixed < 0)
    sub = _make_decomposition(d.n_vars, new_row_id[slot_row[keep_slot]], slot_var[keep_slot],
                              coef[keep_slot], d.row_kind[keep_row], rhs[keep_row],
                              d.row_origin[keep_row], free_vars)
    # carry multipliers over: match reduced slots to old slots by (origin row, var)
    old_key = d.row_origin[slot_row[keep_slot]] * d.n_vars + slot_var[keep_slot]
    old_lam = state.lam[keep_slot]
    order = np.argsort(old_key)
    new_key = sub.row_origin[sub.slot_row] * d.n_vars + sub.slot_var
    lam = old_lam[order][np.searchsorted(old_key[order], new_key)]
    out = DualState(sub, lam, state.energy, fixed)
    err = out.reparametrization_error()
    if err > 1e-6:
        logger.warning("reduced dual lost shares (error %.3g); re-splitting energy", err)
        out.lam = init_dual(state.energy, sub, fixed).lam
    return out


def _set_forced(new_fix, vars_, value, d):
    if len(vars_) == 0:
        return
    clash = new_fix[vars_]
    if np.any((clash >= 0) & (clash != value)):
        v = int(vars_[np.flatnonzero((clash >= 0) & (clash != value))[0]])
        raise DualInfeasibleError(f"variable {v} forced to both 0 and 1")
    new_fix[vars_] = value
