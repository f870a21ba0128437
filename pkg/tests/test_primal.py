import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import identity_tt, problem, shape
from shapematch import meshgen
from shapematch.dual import build_subproblems, init_dual, run_dual, total_min_marginals
from shapematch.energy import compute_energy, normalize_shapes
from shapematch.mesh import Shape
from shapematch.oracle import brute_force_ilp
from shapematch.primal import (DECISION, EXCLUDED, SEED, Conflict, PartialMatching, SolverConfig,
                               _Search, explore_step, initialize_seed, maybe_recompute,
                               seed_order, solve, solve_problem)
from shapematch.product_space import TT, build_product_space


def _counters(st_):
    return [bytes(a) for a in (st_.value, st_.n_sel_nb, st_.ones_p, st_.ones_n, st_.free_p,
                               st_.free_n)]


def _irregular_tetra(seed=5):
    rng = np.random.default_rng(seed)
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float)
    return meshgen.hull_mesh(v + 0.3 * rng.normal(size=v.shape))


def _root(space, e, passes=50):
    return run_dual(init_dual(e, build_subproblems(space)), passes)


def _walk(space, M, n_decisions, two_manifold=True):
    """Seed with the best TT column, then take greedy decisions without conflicts."""
    st_ = _Search(space, M, two_manifold)
    seed = int(np.flatnonzero(space.kind == TT)[np.argmin(M[space.kind == TT])])
    assert not isinstance(st_.set_and_propagate(seed, 1, SEED), Conflict)
    decided = []
    while len(decided) < n_decisions:
        i = st_.explore_step()
        assert i is not None
        mark = len(st_.trail_var)
        res = st_.set_and_propagate(i, 1, DECISION)
        if isinstance(res, Conflict):
            st_.backtrack(res)
            assert st_.propagate() is None
            continue
        decided.append((i, mark))
    return st_, decided


# ----------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(alpha_factor=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_restarts=0)
    assert SolverConfig(weights={"w_hole": 1.0}).weights.w_hole == 1.0


# ----------------------------------------------------------------- propagation

def test_identity_seed_propagates_to_full_matching_tt_only():
    X = shape("tetra")
    space = build_product_space(X, X, kinds=("TT",))
    gamma = identity_tt(space, 4)
    st_ = PartialMatching(space)
    forced = st_.set_and_propagate(int(np.flatnonzero(gamma)[0]), 1, SEED)
    assert st_.is_complete() and st_.decision_level == 0
    np.testing.assert_array_equal(st_.assignment() == 1, gamma == 1)
    causes = {c for _, _, c in forced}
    assert causes == {"injectivity", "geometric-consistency-II"}
    assert sum(1 for _, v, c in forced if c == "injectivity" and v == 0) >= 41


def test_injectivity_zeroes_row_siblings(tetra_problem):
    _, _, space, _ = tetra_problem
    st_ = PartialMatching(space)
    c = space.tt_column(0, 0, 0)
    st_.set_and_propagate(c, 1, SEED)
    row = space.constraints.matrix[0].indices
    assert all(st_.value[j] == 0 for j in row if j != c)


def test_shared_oriented_edge_conflicts(octa_problem):
    _, _, space, _ = octa_problem
    c1 = space.tt_column(0, 0, 0)
    # any other column using one of c1's product edges in the same orientation
    same = np.flatnonzero(np.any((space.edge_row[:, :, None] == space.edge_row[c1][None, None])
                                 & (space.edge_sign[:, :, None] == space.edge_sign[c1][None, None]),
                                 axis=(1, 2)))
    c2 = int(same[same != c1][0])
    st_ = PartialMatching(space)
    st_.set_and_propagate(c1, 1, SEED)
    assert st_.value[c2] == 0
    res = st_.set_and_propagate(c2, 1, DECISION)
    assert isinstance(res, Conflict) and res.kind == "contradiction"


def test_empty_projection_row_conflict(tetra_problem):
    _, _, space, _ = tetra_problem
    st_ = PartialMatching(space)
    for j in space.constraints.matrix[0].indices:
        st_._assign(int(j), 0, DECISION, 0)
    res = st_.propagate()
    assert isinstance(res, Conflict) and res.kind == "infeasible" and res.row == 0


def test_surjectivity_forces_last_column(tetra_problem):
    _, _, space, _ = tetra_problem
    st_ = PartialMatching(space)
    row = space.constraints.matrix[0].indices
    for j in row[:-1]:
        st_._assign(int(j), 0, DECISION, 0)
    assert st_.propagate() is None
    assert st_.value[row[-1]] == 1


def test_trail_soundness(octa_problem):
    _, _, space, e = octa_problem
    M = total_min_marginals(_root(space, e, 5)).total
    fresh = _counters(_Search(space, M))
    st_, _ = _walk(space, M, 3)
    st_.undo_all()
    assert _counters(st_) == fresh
    assert st_.trail == [] and st_.n_selected == 0 and st_.n_frontier == 0


def test_propagation_fixpoint(octa_problem):
    _, _, space, e = octa_problem
    M = total_min_marginals(_root(space, e, 5)).total
    st_, _ = _walk(space, M, 2)
    before = list(st_.trail_var)
    for r in range(st_.n_rows):
        st_.queued[r] = 1
        st_.queue.append(r)
    assert st_.propagate() is None
    assert list(st_.trail_var) == before


# ----------------------------------------------------------------- backtracking

def test_backtrack_last_decision(octa_problem):
    _, _, space, e = octa_problem
    M = total_min_marginals(_root(space, e, 5)).total
    st_, decided = _walk(space, M, 1)
    i, mark = decided[0]
    assert st_.backtrack(Conflict("infeasible", -1, [i], st_.decision_level))
    assert len(st_.trail_var) == mark + 1
    assert st_.trail_var[-1] == i and st_.value[i] == 0 and st_.trail_cause[-1] == EXCLUDED
    assert st_.level[i] == 0 and st_.decision_level == 0


def test_backtrack_skips_to_participating_decision():
    # the octahedron may complete after one decision; the icosahedron needs several
    _, _, space, e = problem("icosa")
    M = total_min_marginals(_root(space, e, 5)).total
    st_, decided = _walk(space, M, 3)
    assert st_.decision_level == 3
    i1, mark1 = decided[0]
    assert st_.backtrack(Conflict("infeasible", -1, [i1], 1))
    assert st_.decision_level == 0
    assert len(st_.trail_var) == mark1 + 1
    for i, _ in decided[1:]:
        assert st_.value[i] == -1
    assert st_.value[i1] == 0
    st_.check_invariants()


def test_level_zero_conflict_fails(tetra_problem):
    _, _, space, _ = tetra_problem
    st_ = PartialMatching(space)
    st_.set_and_propagate(space.tt_column(0, 0, 0), 1, SEED)
    assert st_.backtrack(Conflict("infeasible", -1, [], 0)) is False


# ----------------------------------------------------------------- exploration

def test_explore_argmin_and_ties(tetra_problem):
    _, _, space, _ = tetra_problem
    M = np.full(space.n_columns, 10.0)
    st_ = _Search(space, M)
    st_.set_and_propagate(space.tt_column(0, 0, 0), 1, SEED)
    f = st_.frontier()
    i, j, k = f[:3]
    M[[i, j, k]] = [-2.0, -5.0, 1.0]
    assert explore_step(st_, M) == j
    M[i] = -5.0
    assert explore_step(st_, M) == min(i, j)


def test_explore_empty_frontier(tetra_problem):
    _, _, space, _ = tetra_problem
    st_ = _Search(space, np.zeros(space.n_columns))
    assert not st_.is_complete()
    assert explore_step(st_) is None


# ----------------------------------------------------------------- seeds

def test_seed_side_tie_and_identity():
    X = Y = _irregular_tetra()
    Xn, Yn = normalize_shapes(X, Y)
    space = build_product_space(Xn, Yn)
    e = compute_energy(Xn, Yn, space).costs
    side, order = seed_order(Xn, Yn)
    assert side == "X" and len(order) > 0
    M = total_min_marginals(_root(space, e, 100)).total
    c = initialize_seed(Xn, Yn, space, M)
    assert space.kind[c] == TT and space.x_face[c] == order[0]
    assert e[c] == 0.0


def test_seed_side_smaller_shape(tetra, octa):
    assert seed_order(octa, tetra)[0] == "Y"


def test_seed_fallback_when_all_angles_fail():
    o = meshgen.octahedron()
    s = Shape(o.vertex_positions * [5.0, 1.0, 0.1], o.triangles)
    side, order = seed_order(s, s)
    assert sorted(order) == list(range(s.n_triangles))


# ----------------------------------------------------------------- recomputation

def _state_with(space, M, target):
    """Walk identity decisions until at least ``target`` triangles are selected."""
    gamma = identity_tt(space, space.n_x_faces)
    st_ = _Search(space, M)
    for c in np.flatnonzero(gamma):
        if st_.n_selected >= target:
            break
        if st_.value[c] == -1:
            st_.set_and_propagate(int(c), 1, DECISION if st_.n_selected else SEED)
    return st_


def test_recompute_threshold():
    X, _, space, e = problem("sphere100")
    root = _root(space, e, 5)
    M = total_min_marginals(root).total
    cfg = SolverConfig(recompute_passes=2)
    alpha = cfg.alpha_factor * min(space.n_x_faces, space.n_y_faces)
    assert alpha == 20
    st_ = _state_with(space, M, 19)
    n = st_.n_selected
    fired, conflict = maybe_recompute(st_, root, cfg, 1, 0, 100, alpha)
    assert fired == (n >= 20) and conflict is None
    st_ = _state_with(space, M, 20)
    assert st_.n_selected >= 20
    assert maybe_recompute(st_, root, cfg, 1, 0, 100, alpha) == (True, None)
    assert st_.last_bound <= e @ identity_tt(space, 100) + 1e-9


def test_recompute_on_backtrack_budget():
    X, _, space, e = problem("sphere100")
    root = _root(space, e, 5)
    M = total_min_marginals(root).total
    cfg = SolverConfig(recompute_passes=2)
    st_ = _state_with(space, M, 5)
    assert st_.n_selected < 20
    assert maybe_recompute(st_, root, cfg, 1, 3, 100, 20.0) == (False, None)
    assert maybe_recompute(st_, root, cfg, 1, 101, 100, 20.0) == (True, None)


# ----------------------------------------------------------------- solve

def test_solve_irregular_tetra_identity():
    X = _irregular_tetra()
    m = solve(X, X)
    Xn, _ = normalize_shapes(X, X)
    space = build_product_space(Xn, Xn)
    np.testing.assert_array_equal(m.assignment, identity_tt(space, 4))
    assert m.energy == 0.0
    assert m.lower_bound <= 1e-12 and m.gap <= 1e-9


def test_solve_deterministic(octa_problem):
    X, Y, space, _ = octa_problem
    e = np.random.default_rng(4).random(space.n_columns)
    a = solve_problem(space, e, X, Y)
    b = solve_problem(space, e, X, Y)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    assert (a.decisions, a.backtracks) == (b.decisions, b.backtracks)


def test_solve_debug_invariants():
    X, Y, space, e = problem("icosa")
    m = solve_problem(space, e, X, Y, SolverConfig(debug=True, sign_rounding=False,
                                                   seed_trials=1, improve_backtracks=0))
    assert space.constraints.is_feasible(m.assignment)
    assert m.decisions > 0


def test_solve_fixed_seed(tetra_problem):
    X, Y, space, e = tetra_problem
    c = space.tt_column(1, 2, 0)
    m = solve_problem(space, e, X, Y, SolverConfig(seed_triangle=c, sign_rounding=False))
    assert m.seed == c and m.assignment[c] == 1


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=15)
def test_solve_feasible_and_above_optimum(seed):
    X, Y, space, _ = problem("tetra")
    e = np.random.default_rng(seed).random(space.n_columns)
    m = solve_problem(space, e, X, Y)
    assert space.constraints.is_feasible(m.assignment)
    assert m.energy == pytest.approx(float(e @ m.assignment))
    opt = brute_force_ilp(e, space.constraints).optimal_value
    assert m.energy >= opt - 1e-9
    assert m.lower_bound <= opt + 1e-9
