import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import identity_tt, problem, shape
from shapematch import meshgen
from shapematch.evaluate import (GeodesicError, GroundTruth, geodesic_diameter,
                                 geodesic_distances, geodesic_error, hole_match_stats,
                                 identity_ground_truth, load_ground_truth, pck_auc,
                                 save_ground_truth, save_pck_csv, transfer_vertex_values,
                                 vertex_map_from_matching, vertex_pairs)
from shapematch.mesh import Shape, close_holes
from shapematch.oracle import brute_force_ilp
from shapematch.product_space import TV, InfeasibleMatchingError


def _path_shape(n=5):
    # strip of triangles along x, vertices 0..n-1 on y=0 and n..2n-1 on y=1
    v = np.array([[i, 0, 0] for i in range(n)] + [[i, 1, 0] for i in range(n)], float)
    t = []
    for i in range(n - 1):
        t += [[i, i + 1, n + i], [i + 1, n + i + 1, n + i]]
    return Shape(v, np.array(t))


# ------------------------------------------------------------------ vertex maps

def test_identity_map(octa_problem):
    X, Y, space, _ = octa_problem
    vm = vertex_map_from_matching(identity_tt(space, X.n_triangles), space, X, Y)
    np.testing.assert_array_equal(vm.target, np.arange(X.n_vertices))
    assert np.all(vm.n_candidates == 1)


def test_infeasible_gamma_rejected(tetra_problem):
    X, Y, space, _ = tetra_problem
    with pytest.raises(InfeasibleMatchingError):
        vertex_map_from_matching(np.zeros(space.n_columns, dtype=np.int8), space, X, Y)


def test_triangle_to_vertex_corners_pair_with_b(tetra_problem):
    _, _, space, _ = tetra_problem
    tv = np.flatnonzero(space.kind == TV)[0]
    b = int(space.y_seq[tv][0])
    g = np.zeros(space.n_columns, dtype=np.int8)
    g[tv] = 1
    pairs = vertex_pairs(g, space)
    assert set(pairs[:, 1].tolist()) == {b}
    assert sorted(pairs[:, 0].tolist()) == sorted(space.x_seq[tv].tolist())


def _medoid_reference(pairs, v, Y):
    # plain loops over the candidate list, independent of the vectorized code
    cands = sorted({b for a, b in pairs if a == v})
    counts = {c: sum(1 for a, b in pairs if a == v and b == c) for c in cands}
    d = geodesic_distances(Y, cands)
    best = None
    for i, c in enumerate(cands):
        spread = sum(counts[o] * d[i, o] for o in cands)
        if best is None or spread < best[0] - 1e-12:
            best = (spread, c)
    return best[1]


@pytest.mark.parametrize("seed", range(4))
def test_medoid_matches_reference(seed, tetra_problem):
    # cheap degenerate matches give conflicting candidates; the regular tetra makes ties common
    X, Y, space, _ = tetra_problem
    e = np.random.default_rng(seed).random(space.n_columns)
    e[space.kind == TV] *= 0.1
    g = brute_force_ilp(e, space.constraints).optimal_assignment
    pairs = [tuple(p) for p in vertex_pairs(g, space).tolist()]
    vm = vertex_map_from_matching(g, space, X, Y)
    assert vm.n_candidates.max() > 1
    for v in range(X.n_vertices):
        assert vm.target[v] == _medoid_reference(pairs, v, Y)


def test_vertex_map_deterministic(octa_problem):
    X, Y, space, _ = octa_problem
    g = identity_tt(space, X.n_triangles)
    a = vertex_map_from_matching(g, space, X, Y)
    b = vertex_map_from_matching(g, space, X, Y)
    np.testing.assert_array_equal(a.target, b.target)
    np.testing.assert_allclose(a.points(Y), Y.vertex_positions)


# ------------------------------------------------------------------ geodesic errors

def test_identity_errors_zero():
    Y = shape("icosa")
    err = geodesic_error(np.arange(Y.n_vertices), identity_ground_truth(Y.n_vertices), Y)
    np.testing.assert_array_equal(err, 0.0)


def test_one_edge_error():
    Y = _path_shape(5)
    D = geodesic_diameter(Y)
    target = np.arange(Y.n_vertices)
    target[0] = 1
    gt = GroundTruth(np.array([[0, 0]]))
    err = geodesic_error(target, gt, Y)
    assert err[0] == pytest.approx(1.0 / D, rel=1e-12)


def test_diameter_of_strip():
    # the diagonals run from (i+1, 0) to (i, 1), so (0, 0) to (4, 1) needs five unit edges
    assert geodesic_diameter(_path_shape(5)) == pytest.approx(5.0, rel=1e-12)


def test_disconnected_target():
    a = shape("tetra")
    b = Shape(a.vertex_positions + 5.0, a.triangles)
    both = Shape(np.vstack([a.vertex_positions, b.vertex_positions]),
                 np.vstack([a.triangles, b.triangles + 4]))
    target = np.arange(8)
    target[0] = 5
    with pytest.raises(GeodesicError):
        geodesic_error(target, GroundTruth(np.array([[0, 0]])), both)


def test_sqrt_area_normalization():
    Y = _path_shape(5)
    target = np.arange(Y.n_vertices)
    target[0] = 1
    err = geodesic_error(target, GroundTruth(np.array([[0, 0]]), "sqrt-area"), Y)
    assert err[0] == pytest.approx(1.0 / 2.0, rel=1e-12)  # area 4


def test_bad_ground_truth():
    with pytest.raises(ValueError):
        GroundTruth(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        GroundTruth(np.array([[0, -1]]))
    with pytest.raises(ValueError):
        GroundTruth(np.array([[0, 0]]), "unknown")
    Y = shape("tetra")
    with pytest.raises(ValueError):
        geodesic_error(np.arange(4), GroundTruth(np.array([[0, 9]])), Y)


@given(st.floats(0.01, 100.0))
def test_errors_scale_invariant(s):
    Y = shape("sphere100")
    rng = np.random.default_rng(0)
    target = rng.integers(0, Y.n_vertices, Y.n_vertices)
    gt = identity_ground_truth(Y.n_vertices)
    a = geodesic_error(target, gt, Y)
    b = geodesic_error(target, gt, Y.scaled(s))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


@given(st.integers(0, 2**31 - 1))
def test_geodesic_metric(seed):
    Y = shape("sphere100")
    i, j, k = np.random.default_rng(seed).integers(0, Y.n_vertices, 3)
    d = geodesic_distances(Y, [i, j, k])
    assert d[0, j] == pytest.approx(d[1, i], rel=1e-12)
    assert d[0, k] <= d[0, j] + d[1, k] + 1e-12


# ------------------------------------------------------------------ PCK

def test_pck_all_zero():
    curve, auc = pck_auc(np.zeros(10))
    assert len(curve) == 101 and np.all(curve == 1.0) and auc == 1.0


def test_pck_all_large():
    curve, auc = pck_auc(np.full(7, 1.5))
    assert np.all(curve == 0.0) and auc == 0.0


def test_pck_half_and_half():
    curve, auc = pck_auc(np.array([0.0] * 5 + [0.5] * 5))
    t = np.linspace(0, 1, 101)
    np.testing.assert_array_equal(curve, np.where(t < 0.5, 0.5, 1.0))
    # 50 grid points at 0.5 and 51 at 1.0
    assert auc == pytest.approx(76 / 101, abs=1e-15)
    assert auc == pytest.approx(0.75, abs=0.01)


def test_pck_empty():
    with pytest.raises(ValueError):
        pck_auc([])


@given(st.lists(st.floats(0, 2), min_size=1, max_size=50), st.integers(0, 1000))
def test_pck_properties(errs, seed):
    curve, auc = pck_auc(errs)
    assert np.all(np.diff(curve) >= 0)
    assert 0.0 <= auc <= 1.0 and np.all((curve >= 0) & (curve <= 1))
    perm = np.random.default_rng(seed).permutation(len(errs))
    assert pck_auc(np.asarray(errs)[perm])[1] == auc


def test_pck_csv(tmp_path):
    curve, _ = pck_auc([0.1, 0.2])
    save_pck_csv(tmp_path / "c.csv", curve)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "threshold,fraction" and len(lines) == 102
    assert lines[-1] == "1,1"


# ------------------------------------------------------------------ ground truth files

def test_ground_truth_round_trip(tmp_path):
    gt = identity_ground_truth(6)
    save_ground_truth(tmp_path / "gt.txt", gt)
    np.testing.assert_array_equal(load_ground_truth(tmp_path / "gt.txt").pairs, gt.pairs)


def test_ground_truth_comments_and_errors(tmp_path):
    p = tmp_path / "gt.txt"
    p.write_text("# header\n0 1\n\n2 3  # trailing\n")
    np.testing.assert_array_equal(load_ground_truth(p).pairs, [[0, 1], [2, 3]])
    p.write_text("# nothing\n")
    with pytest.raises(ValueError):
        load_ground_truth(p)
    p.write_text("0 1 2\n")
    with pytest.raises(ValueError):
        load_ground_truth(p)


# ------------------------------------------------------------------ transfer and holes

def test_transfer_identity(octa_problem):
    X, _, space, _ = octa_problem
    vals = np.arange(X.n_vertices, dtype=float) ** 2
    out = transfer_vertex_values(identity_tt(space, X.n_triangles), space, vals)
    np.testing.assert_array_equal(out, vals)


def test_transfer_aggregates_mean(tetra_problem):
    _, _, space, _ = tetra_problem
    tv = np.flatnonzero(space.kind == TV)[0]
    g = np.zeros(space.n_columns, dtype=np.int8)
    g[tv] = 1
    vals = np.array([1.0, 2.0, 4.0, 8.0])
    out = transfer_vertex_values(g, space, vals)
    b = space.y_seq[tv][0]
    assert out[b] == pytest.approx(vals[space.x_seq[tv]].mean())
    assert np.isnan(out[np.arange(4) != b]).all()


def test_hole_stats_identity():
    X, Y, space, _ = problem("hemi")
    stats = hole_match_stats(identity_tt(space, X.n_triangles), space, X, Y)
    assert stats["real_to_real"] == pytest.approx(1.0)
    assert stats["real_to_hole"] == pytest.approx(0.0)
    assert stats["n_hole_matches"] == int(X.hole_triangle_flags.sum())


def test_cap_fixture_is_partial():
    full = meshgen.fibonacci_sphere(100, jitter=0.1, seed=1)
    closed = close_holes(meshgen.sphere_cap(full, [0, 0, 1], 0.7))
    real = closed.triangle_areas[~closed.hole_triangle_flags].sum()
    assert 0.6 < real / full.triangle_areas.sum() < 0.8
    assert closed.hole_triangle_flags.any()
