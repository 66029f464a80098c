import logging

import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from stresspath import geometry
from stresspath.fea import StressTensorField, principal_decomposition
from stresspath.meshcore import TetMesh, tet_gradients
from stresspath.slicing import (SlicingError, extract_slices, geodesic_heat, level_set, planar_distance,
                                slicing_alignment, write_slice)


def face_nodes(mesh, axis, value):
    fv = mesh.vertices[mesh.boundary_faces]
    sel = np.all(np.isclose(fv[:, :, axis], value), axis=1)
    return np.unique(mesh.boundary_faces[sel])


def uniaxial(n, direction=(1.0, 0.0, 0.0), magnitude=100.0):
    d = np.asarray(direction, float)
    d /= np.linalg.norm(d)
    m = magnitude * np.outer(d, d)
    c = np.array([m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2]])
    return StressTensorField(np.tile(c, (n, 1)))


@pytest.fixture(scope="module")
def cube_distance(cube10):
    return geodesic_heat(cube10, face_nodes(cube10, 2, 0.0))


# ---------------------------------------------------------------- heat method

def test_source_is_zero(cube_distance):
    assert np.all(cube_distance.values[cube_distance.source] == 0)
    assert np.all(cube_distance.values >= 0)


def test_planar_distance_accuracy(cube10, cube_distance):
    assert np.abs(cube_distance.values - cube10.vertices[:, 2]).max() <= 0.05


def test_eikonal(cube10, cube_distance):
    grads, _ = tet_gradients(cube10.vertices, cube10.tets)
    g = np.linalg.norm(np.einsum("tid,ti->td", grads, cube_distance.values[cube10.tets]), axis=1)
    assert np.mean((g >= 0.8) & (g <= 1.2)) >= 0.95


def test_single_source_node(cube10):
    d = geodesic_heat(cube10, [0])
    assert d.values[0] == 0
    assert np.argmax(d.values) == np.argmax(np.linalg.norm(cube10.vertices - cube10.vertices[0], axis=1))


def test_l_shape_against_dijkstra():
    mesh = geometry.l_shape()
    v = mesh.vertices
    src = face_nodes(mesh, 0, 4.0)
    phi = geodesic_heat(mesh, src).values
    e = mesh.edges()
    w = np.linalg.norm(v[e[:, 0]] - v[e[:, 1]], axis=1)
    graph = sparse.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(len(v), len(v))).tocsr()
    ref = dijkstra(graph, directed=False, indices=src, min_only=True)
    far = int(np.argmin(np.linalg.norm(v - [0.0, 0.0, 4.0], axis=1)))
    assert abs(phi[far] - ref[far]) <= 0.1 * ref[far]


def test_rotation_invariance(cube10, cube_distance):
    rot = np.linalg.qr(np.random.default_rng(2).normal(size=(3, 3)))[0]
    if np.linalg.det(rot) < 0:
        rot[:, 0] *= -1
    moved = cube10.transformed(rot, [3.0, -1.0, 2.0])
    d = geodesic_heat(moved, cube_distance.source)
    assert np.abs(d.values - cube_distance.values).max() <= 1e-6


def _union_violation(mesh):
    z0 = face_nodes(mesh, 2, 0.0)
    x0 = face_nodes(mesh, 0, 0.0)
    a = geodesic_heat(mesh, z0).values
    b = geodesic_heat(mesh, np.union1d(z0, x0)).values
    return float((b - a).max())


def test_enlarged_source_monotone_up_to_cut_locus_smoothing(cube10):
    # the heat method smooths the distance across the cut locus (here the x = z
    # ridge) over about one element, which can raise it there by O(h)
    h = cube10.mean_edge_length()
    assert _union_violation(cube10) <= 2.5 * h


def test_enlarged_source_never_lowers_source_nodes(cube10):
    z0 = face_nodes(cube10, 2, 0.0)
    both = np.union1d(z0, face_nodes(cube10, 0, 0.0))
    b = geodesic_heat(cube10, both).values
    assert np.all(b[both] == 0)


@pytest.mark.xfail(strict=True, reason="heat-method distance is smoothed across the cut locus")
def test_enlarged_source_monotone_strict(cube10):
    assert _union_violation(cube10) <= 1e-9


def test_empty_source(cube10):
    with pytest.raises(SlicingError, match="empty"):
        geodesic_heat(cube10, [])


def test_interior_source(cube10):
    inner = int(np.argmin(np.linalg.norm(cube10.vertices - 0.5, axis=1)))
    with pytest.raises(SlicingError, match="boundary"):
        geodesic_heat(cube10, [inner])


def test_unreachable_component():
    a = geometry.box(shape=(2, 2, 2))
    b = a.translated([5.0, 0.0, 0.0])
    v = np.vstack([a.vertices, b.vertices])
    t = np.vstack([a.tets, b.tets + a.n_vertices])
    with pytest.raises(SlicingError, match="unreachable"):
        geodesic_heat(TetMesh(v, t), [0])


# ---------------------------------------------------------------- level sets

def test_cube_planar_slices(cube10):
    phi = cube10.vertices[:, 2]
    slices = extract_slices(cube10, phi, uniaxial(cube10.n_vertices), 0.25)
    assert [s.index for s in slices] == [0, 1, 2, 3, 4]
    for s in slices:
        assert s.iso == pytest.approx(0.25 * s.index, abs=1e-9)
        assert s.surface.area() == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_allclose(s.surface.vertices[:, 2], s.iso, atol=1e-12)
        np.testing.assert_allclose(s.normals, np.tile([0, 0, 1.0], (s.n_vertices, 1)), atol=1e-9)


def test_consecutive_iso_spacing(cube10, cube_distance):
    slices = extract_slices(cube10, cube_distance, uniaxial(cube10.n_vertices), 0.1)
    isos = np.array([s.iso for s in slices])
    np.testing.assert_allclose(np.diff(isos), 0.1, rtol=1e-12)


def test_iso_beyond_range_gives_nothing(cube10):
    ls = level_set(cube10, cube10.vertices[:, 2], 1.5)
    assert len(ls.faces) == 0


def test_layer_height_above_max_warns(cube10, caplog):
    with caplog.at_level(logging.WARNING):
        slices = extract_slices(cube10, cube10.vertices[:, 2], uniaxial(cube10.n_vertices), 2.0)
    assert len(slices) == 1 and slices[0].iso == 0.0
    assert "exceeds" in caplog.text


def test_invalid_layer_height(cube10):
    with pytest.raises(SlicingError):
        extract_slices(cube10, cube10.vertices[:, 2], uniaxial(cube10.n_vertices), 0.0)


def test_sphere_cross_sections():
    ball = geometry.ball(radius=1.0, n=20)
    phi = np.abs(ball.vertices[:, 2])
    slices = extract_slices(ball, phi, uniaxial(ball.n_vertices), 0.3)
    for s in slices[1:]:
        expected = 2 * np.pi * (1.0 - s.iso**2)  # two discs, one each side of the centre plane
        assert s.surface.area() == pytest.approx(expected, rel=0.02)


def test_slice_vertices_interpolate_tet_nodes(cube10, cube_distance):
    s = extract_slices(cube10, cube_distance, uniaxial(cube10.n_vertices), 0.3)[2]
    np.testing.assert_allclose(s.origin_weights.sum(axis=1), 1.0)
    rec = np.einsum("nk,nkd->nd", s.origin_weights, cube10.vertices[s.origin_nodes])
    np.testing.assert_allclose(rec, s.surface.vertices, atol=1e-12)
    phi = np.einsum("nk,nk->n", s.origin_weights, cube_distance.values[s.origin_nodes])
    np.testing.assert_allclose(phi, s.iso, atol=1e-9)


def test_normals_follow_gradient():
    mesh = geometry.box(shape=(6, 6, 6))
    phi = mesh.vertices @ np.array([0.3, -0.4, 0.8])
    phi -= phi.min()
    for s in extract_slices(mesh, phi, uniaxial(mesh.n_vertices), 0.2):
        assert np.all(s.surface.face_normals() @ np.array([0.3, -0.4, 0.8]) > 0)


def test_interpolated_stress(cube10):
    rng = np.random.default_rng(0)
    comps = rng.normal(size=(cube10.n_vertices, 6))
    s = extract_slices(cube10, cube10.vertices[:, 2], StressTensorField(comps), 0.35)[1]
    expected = np.einsum("nk,nkc->nc", s.origin_weights, comps[s.origin_nodes])
    np.testing.assert_allclose(s.tensors.components, expected, atol=1e-12)
    np.testing.assert_allclose(s.stress.values, principal_decomposition(expected).values, atol=1e-12)


def test_snap_moves_crossings_to_nodes():
    mesh = geometry.box(shape=(4, 4, 4))
    phi = mesh.vertices[:, 2] + 0.01 * mesh.vertices[:, 0]
    ls = level_set(mesh, phi, 0.5, snap=0.2)
    assert np.all((ls.weights == 0) | (ls.weights == 1) | ((ls.weights > 0.2) & (ls.weights < 0.8)))


# ---------------------------------------------------------------- slicing alignment

def _slices(mesh, axis, stress):
    return extract_slices(mesh, planar_distance(mesh, axis), stress, 0.25)


def test_alignment_tangent_and_normal(cube10):
    stress = uniaxial(cube10.n_vertices, (1, 0, 0))
    z = _slices(cube10, 2, stress)
    x = _slices(cube10, 0, stress)
    g_tan, _ = slicing_alignment(z, [np.ones(s.n_vertices, bool) for s in z])
    g_nrm, _ = slicing_alignment(x, [np.ones(s.n_vertices, bool) for s in x])
    assert g_tan == pytest.approx(1.0, abs=1e-12)
    assert g_nrm == pytest.approx(0.0, abs=1e-12)


def test_uniaxial_bar_slicing(bar_mesh):
    stress = uniaxial(bar_mesh.n_vertices, (1, 0, 0))
    normal = _slices(bar_mesh, 0, stress)
    parallel = _slices(bar_mesh, 2, stress)
    assert slicing_alignment(normal, [np.ones(s.n_vertices, bool) for s in normal])[0] <= 0.05
    assert slicing_alignment(parallel, [np.ones(s.n_vertices, bool) for s in parallel])[0] >= 0.99


def test_alignment_in_unit_range(cube10):
    rng = np.random.default_rng(1)
    stress = StressTensorField(rng.normal(size=(cube10.n_vertices, 6)))
    sl = _slices(cube10, 1, stress)
    g, per = slicing_alignment(sl, [np.ones(s.n_vertices, bool) for s in sl])
    assert 0 <= g <= 1 and all(0 <= p <= 1 for p in per)


def test_no_critical_nodes(cube10):
    sl = _slices(cube10, 2, uniaxial(cube10.n_vertices))
    with pytest.raises(SlicingError, match="critical"):
        slicing_alignment(sl, [np.zeros(s.n_vertices, bool) for s in sl])


def test_write_slice(tmp_path, cube10):
    s = _slices(cube10, 2, uniaxial(cube10.n_vertices))[1]
    obj, side = write_slice(s, tmp_path)
    lines = open(side).read().splitlines()
    assert lines[0].startswith("vertex,nx,ny,nz")
    assert len(lines) == s.n_vertices + 1
    assert open(obj).read().count("\nf ") + open(obj).read().startswith("f ") == s.surface.n_faces
