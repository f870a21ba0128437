import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shapematch import meshgen
from shapematch.energy import compute_energy, normalize_shapes
from shapematch.mesh import close_holes
from shapematch.product_space import build_product_space

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=15,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running test")
    config.addinivalue_line("markers", "criterion(label): acceptance criterion checked by the test")


_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
    if marker.args[0] not in _CRITERIA or status != "PASS":
        _CRITERIA[marker.args[0]] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, (status, detail) in _CRITERIA.items():
        terminalreporter.write_line(f"{status}  {label}" + (f"  [{detail}]" if detail else ""))


@functools.lru_cache(maxsize=None)
def shape(name: str):
    """Named fixture meshes, built once per session."""
    if name == "tetra":
        return meshgen.tetrahedron()
    if name == "octa":
        return meshgen.octahedron()
    if name == "icosa":
        return meshgen.icosahedron()
    if name == "sphere100":
        return meshgen.fibonacci_sphere(100, jitter=0.15, seed=3)
    if name == "hemi":
        return close_holes(meshgen.uv_hemisphere(16, 3))
    raise KeyError(name)


@functools.lru_cache(maxsize=None)
def problem(name_x: str, name_y: str | None = None):
    """(Xn, Yn, space, energy) for a pair of named fixtures."""
    X = shape(name_x)
    Y = shape(name_y or name_x)
    Xn, Yn = normalize_shapes(X, Y)
    space = build_product_space(Xn, Yn)
    e = compute_energy(Xn, Yn, space).costs
    return Xn, Yn, space, e


@pytest.fixture
def tetra():
    return shape("tetra")


@pytest.fixture
def octa():
    return shape("octa")


@pytest.fixture
def icosa():
    return shape("icosa")


@pytest.fixture
def tetra_problem():
    return problem("tetra")


@pytest.fixture
def octa_problem():
    return problem("octa")


def identity_tt(space, n_faces):
    """Columns of the identity TT matching for X = Y (same face, same vertex order)."""
    cols = []
    for f in range(n_faces):
        for s in range(3):
            c = space.tt_column(f, f, s)
            if np.array_equal(space.x_seq[c], space.y_seq[c]):
                cols.append(c)
                break
    gamma = np.zeros(space.n_columns, dtype=np.int8)
    gamma[cols] = 1
    return gamma
