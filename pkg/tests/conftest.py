import numpy as np
import pytest
from hypothesis import settings

from stresspath import geometry
from stresspath.meshcore import TriMesh, vertex_normals

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


def with_normals(mesh: TriMesh) -> TriMesh:
    return TriMesh(mesh.vertices, mesh.faces, vertex_normals(mesh))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cube10():
    return geometry.box(shape=(10, 10, 10))


@pytest.fixture(scope="session")
def bar_mesh():
    return geometry.box(size=(10.0, 1.0, 1.0), shape=(20, 4, 4))


def make_slice(surface: TriMesh, comps=None, index: int = 0, iso: float = 0.0):
    """Slice on an arbitrary surface with given per-vertex stress components."""
    from stresspath.fea import StressTensorField, principal_decomposition
    from stresspath.slicing import Slice

    surface = surface if surface.normals is not None else with_normals(surface)
    n = surface.n_vertices
    comps = np.zeros((n, 6)) if comps is None else np.broadcast_to(np.asarray(comps, float), (n, 6)).copy()
    field = StressTensorField(comps)
    return Slice(surface, principal_decomposition(field), field, index, iso,
                 np.zeros((n, 2), dtype=np.int64), np.full((n, 2), 0.5))


def uniaxial_components(direction, magnitude=1.0, lateral=0.0):
    d = np.asarray(direction, float)
    d = d / np.linalg.norm(d)
    m = magnitude * np.outer(d, d)
    c = np.array([m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2]])
    c[:3] += lateral
    return c


# ---------------------------------------------------------------- acceptance summary

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.failed or report.skipped:
        prev = _CRITERIA.get(name, "PASS")
        _CRITERIA[name] = "FAIL" if report.failed or prev == "FAIL" else ("SKIP" if report.skipped else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split("_")[2])):
        num = name.split("_")[2]
        label = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {num}: {_CRITERIA[name]} ({label})")
