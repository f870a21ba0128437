import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import identity_tt, problem, shape
from shapematch.energy import EnergyWeights, compute_energy, normalize_shapes, save_energy_csv
from shapematch.mesh import Shape
from shapematch.product_space import TT, TV, build_product_space


def _with_curvature(s: Shape, h) -> Shape:
    out = Shape(s.vertex_positions, s.triangles, s.hole_triangle_flags)
    out.__dict__["per_vertex_curvature"] = np.broadcast_to(np.asarray(h, float), (s.n_vertices,))
    return out


def test_identity_zero(tetra_problem):
    X, _, space, e = tetra_problem
    gamma = identity_tt(space, X.n_triangles)
    assert np.all(e[gamma == 1] == 0.0)


def test_triangle_to_vertex_is_membrane_only():
    X = _with_curvature(shape("tetra"), 0.5)
    space = build_product_space(X, X)
    w = EnergyWeights(w_membrane=2.0, w_bend=5.0, w_hole=0.0)
    e = compute_energy(X, X, space, w).costs
    tv = np.flatnonzero(space.kind == TV)
    a = X.triangle_areas[space.x_face[tv]]
    np.testing.assert_allclose(e[tv], 2.0 * a, rtol=1e-12)


def test_bending_term_plug_in():
    base = shape("tetra")
    X = _with_curvature(base, 0.5)
    Y = _with_curvature(base, 0.7)
    space = build_product_space(X, Y)
    w = EnergyWeights(w_membrane=1.0, w_bend=3.0, w_hole=0.0)
    e = compute_energy(X, Y, space, w).costs
    a = base.triangle_areas[0]
    for s in range(3):
        c = space.tt_column(0, 0, s)
        assert e[c] == pytest.approx(3.0 * 0.04 * 2 * a, rel=1e-9)


def test_hole_penalty():
    X, Y, space, _ = problem("hemi")
    w = EnergyWeights(w_membrane=0.0, w_bend=0.0, w_hole=1.0)
    e = compute_energy(X, Y, space, w).costs
    tt = np.flatnonzero(space.kind == TT)
    hx = X.hole_triangle_flags[space.x_face[tt]]
    hy = Y.hole_triangle_flags[space.y_face[tt]]
    np.testing.assert_allclose(e[tt][hx & hy], 1e-12)
    np.testing.assert_array_equal(e[tt][~hx & ~hy], 0.0)
    np.testing.assert_allclose(e[tt][hx & ~hy], Y.triangle_areas[space.y_face[tt][hx & ~hy]])
    np.testing.assert_allclose(e[tt][~hx & hy], X.triangle_areas[space.x_face[tt][~hx & hy]])


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        EnergyWeights(w_bend=-1.0)


def test_space_mismatch(tetra, octa):
    space = build_product_space(tetra, tetra)
    with pytest.raises(ValueError):
        compute_energy(tetra, octa, space)


def test_energy_finite_nonnegative():
    for name in ("tetra", "octa", "icosa", "hemi"):
        _, _, space, e = problem(name)
        assert len(e) == space.n_columns
        assert np.all(np.isfinite(e)) and np.all(e >= 0)


def test_normalize_unit_area():
    X, Y = normalize_shapes(shape("octa"), shape("sphere100").scaled(3.0))
    assert X.triangle_areas.sum() == pytest.approx(1.0, rel=1e-12)
    assert Y.triangle_areas.sum() == pytest.approx(1.0, rel=1e-12)
    X2, _ = normalize_shapes(X, X)
    assert X2 is X


def test_normalize_scale_and_curvature():
    s = shape("icosa")
    a, _ = normalize_shapes(s, s)
    b, _ = normalize_shapes(s.scaled(2.0), s)
    assert s.scaled(2.0).per_vertex_curvature[0] == pytest.approx(s.per_vertex_curvature[0] / 2)
    np.testing.assert_allclose(a.per_vertex_curvature, b.per_vertex_curvature, rtol=1e-12)


def test_normalize_hole_area_excluded():
    h = shape("hemi")
    n, _ = normalize_shapes(h, h)
    assert n.triangle_areas[~n.hole_triangle_flags].sum() == pytest.approx(1.0, rel=1e-12)


def test_zero_area_rejected():
    v = np.zeros((4, 3))
    flat = Shape(v, shape("tetra").triangles)
    with pytest.raises(ValueError):
        normalize_shapes(flat, shape("tetra"))


def test_csv_export(tmp_path, tetra_problem):
    _, _, space, e = tetra_problem
    save_energy_csv(tmp_path / "e.csv", space, e)
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert len(lines) == space.n_columns + 1
    assert float(lines[1].split(",")[-1]) == e[0]


def _pair_key(xs, ys):
    p = list(zip(xs.tolist(), ys.tolist()))
    return min(tuple(p[(k + s) % 3] for k in range(3)) for s in range(3))


def test_swap_symmetry():
    A, B = normalize_shapes(shape("tetra"), shape("octa"))
    s_ab = build_product_space(A, B)
    s_ba = build_product_space(B, A)
    e_ab = compute_energy(A, B, s_ab).costs
    e_ba = compute_energy(B, A, s_ba).costs
    index = {_pair_key(x, y): f for f, (x, y) in enumerate(zip(s_ab.x_seq, s_ab.y_seq))}
    perm = np.array([index[_pair_key(x, y)] for x, y in zip(s_ba.y_seq, s_ba.x_seq)])
    assert len(set(perm.tolist())) == s_ab.n_columns
    np.testing.assert_allclose(e_ba, e_ab[perm], rtol=0, atol=1e-15)


@given(st.floats(0.1, 10.0), st.floats(0.1, 10.0))
def test_scale_invariance(sx, sy):
    X, Y = shape("tetra"), shape("octa")
    a = normalize_shapes(X, Y)
    b = normalize_shapes(X.scaled(sx), Y.scaled(sy))
    space = build_product_space(*a)
    np.testing.assert_allclose(compute_energy(*a, space).costs, compute_energy(*b, space).costs,
                               rtol=0, atol=1e-9)


@given(st.sampled_from(["tetra", "octa", "icosa"]), st.integers(0, 2**31 - 1))
def test_identity_zero_after_relabel(name, seed):
    X = shape(name)
    perm = np.random.default_rng(seed).permutation(X.n_vertices)
    Y = X.relabeled(perm)
    Xn, Yn = normalize_shapes(X, Y)
    space = build_product_space(Xn, Yn)
    e = compute_energy(Xn, Yn, space).costs
    for f in range(X.n_triangles):
        hits = [space.tt_column(f, f, s) for s in range(3)
                if np.array_equal(perm[space.x_seq[space.tt_column(f, f, s)]],
                                  space.y_seq[space.tt_column(f, f, s)])]
        assert len(hits) == 1 and e[hits[0]] == pytest.approx(0.0, abs=1e-12)


def test_deterministic():
    X, Y, space, e = problem("octa")
    np.testing.assert_array_equal(compute_energy(X, Y, space).costs, e)
