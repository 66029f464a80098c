import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_slice, uniaxial_components
from stresspath import geometry
from stresspath.slicing import extract_slices, planar_distance
from stresspath.fea import StressTensorField
from stresspath.stressflow import (FlowError, TangentFlow, axis_scores, classify_critical, critical_components,
                                   critical_from_values, dirichlet_energy, extrapolate_uncritical,
                                   flow_on_surface, preprocess_slice, project_orthogonal, project_vectors,
                                   rectify, write_flow_csv)

EZ = np.array([[0.0, 0.0, 1.0]])


# ---------------------------------------------------------------- projection

def test_project_ex_on_xy():
    f, ok = project_vectors(np.array([[1.0, 0, 0]]), EZ)
    np.testing.assert_allclose(f, [[0, -1, 0]], atol=1e-15)
    assert ok.all()


def test_project_normal_stress_invalid():
    f, ok = project_vectors(np.array([[0.0, 0, 1]]), EZ)
    assert not ok[0] and np.all(f == 0)


def test_project_tilted():
    f, _ = project_vectors(np.array([[1.0, 0, 1]]) / np.sqrt(2), EZ)
    np.testing.assert_allclose(f, [[0, -1, 0]], atol=1e-15)


def test_projected_flow_unit_tangent():
    slc = make_slice(geometry.uv_sphere(n_theta=24, n_phi=12),
                     np.random.default_rng(0).normal(size=(1, 6)))
    fl = project_orthogonal(slc)
    v = fl.vectors[fl.valid]
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-8)
    assert np.abs(np.einsum("ij,ij->i", v, slc.normals[fl.valid])).max() <= 1e-6


# ---------------------------------------------------------------- rectification

def raw_flow(v):
    v = np.asarray(v, float)
    return TangentFlow(v, "projected_orthogonal", np.linalg.norm(v, axis=1) > 0)


def test_antipodal_pair():
    out = rectify(raw_flow([[1.0, 0, 0], [-1.0, 0, 0]]))
    np.testing.assert_array_equal(out.vectors, [[1, 0, 0], [1, 0, 0]])
    np.testing.assert_array_equal(out.axis, [1, 0, 0])


def test_consistent_field_unchanged():
    v = np.array([[0.9, 0.1, 0], [0.8, -0.6, 0], [1.0, 0, 0]])
    out = rectify(raw_flow(v))
    np.testing.assert_array_equal(out.vectors, v)


def test_dominant_axis_nonnegative():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(50, 3)) * [0.2, 1.0, 0.1]
    out = rectify(raw_flow(v))
    k = int(np.argmax(axis_scores(v)))
    assert k == 1 and np.all(out.vectors[:, k] >= 0)


def test_all_invalid():
    with pytest.raises(FlowError):
        rectify(TangentFlow(np.zeros((3, 3)), "projected_orthogonal", np.zeros(3, bool)))


def test_stage_order_enforced():
    pre = TangentFlow(np.ones((2, 3)), "preprocessed", np.ones(2, bool))
    with pytest.raises(FlowError):
        rectify(pre)


def test_pca_axis_mode():
    v = np.array([[1.0, 1.0, 0], [-1.0, -1.1, 0], [0.9, 1.0, 0]])
    out = rectify(raw_flow(v), axis="pca")
    assert np.all(out.vectors @ out.axis > 0)


@given(st.integers(0, 10_000), st.sampled_from(["global", "pca"]))
def test_rectify_idempotent_and_sign_invariant(seed, mode):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(int(rng.integers(1, 60)), 3))
    flow = raw_flow(v)
    r = rectify(flow, axis=mode)
    again = rectify(TangentFlow(r.vectors, "projected_orthogonal", r.valid), axis=mode)
    np.testing.assert_array_equal(again.vectors, r.vectors)
    flips = np.where(rng.random(len(v)) < 0.5, -1.0, 1.0)
    neg = rectify(raw_flow(v * flips[:, None]), axis=mode)
    np.testing.assert_array_equal(neg.vectors, r.vectors)


# ---------------------------------------------------------------- critical regions

def test_critical_example():
    vals = np.array([[10.0, 5.0, 1.0]])
    assert critical_from_values(vals, 3.0, 0.1, global_max=10.0)[0]


def test_hydrostatic_never_critical():
    vals = np.full((4, 3), 7.0)
    for theta_a in (1.01, 3.0, 50.0):
        assert not critical_from_values(vals, theta_a, 0.1).any()


def test_zero_sigma3_counts_as_infinite_ratio():
    assert critical_from_values(np.array([[2.0, 0.0, 0.0]]), 3.0, 0.1)[0]


def test_zero_stress_not_critical():
    assert not critical_from_values(np.zeros((3, 3)), 3.0, 0.1).any()


def test_threshold_validation():
    slc = make_slice(geometry.square(n=2), uniaxial_components([1, 0, 0]))
    with pytest.raises(ValueError):
        classify_critical(slc, theta_a=1.0)
    with pytest.raises(ValueError):
        classify_critical(slc, theta_s=1.0)


def test_uniaxial_bar_slices_mostly_critical(bar_mesh):
    rng = np.random.default_rng(0)
    comps = np.tile(uniaxial_components([1, 0, 0], 100.0), (bar_mesh.n_vertices, 1))
    comps += rng.normal(scale=0.5, size=comps.shape)
    slices = extract_slices(bar_mesh, planar_distance(bar_mesh, 2), StressTensorField(comps), 0.25)
    gmax = None
    for s in slices[1:-1]:
        m = classify_critical(s, global_max=gmax)
        assert m.mask.mean() > 0.9


@given(st.integers(0, 10_000))
def test_critical_monotone_in_thresholds(seed):
    rng = np.random.default_rng(seed)
    vals = np.sort(np.abs(rng.normal(size=(40, 3))), axis=1)[:, ::-1] * rng.choice([-1, 1], (40, 3))
    a1, a2 = sorted(rng.uniform(1.01, 10, 2))
    s1, s2 = sorted(rng.uniform(0.01, 0.99, 2))
    lo = critical_from_values(vals, a1, s1)
    assert not np.any(critical_from_values(vals, a2, s1) & ~lo)
    assert not np.any(critical_from_values(vals, a1, s2) & ~lo)


def test_critical_components_count():
    slc = make_slice(geometry.square(n=10))
    x = slc.surface.vertices[:, 0]
    assert critical_components(slc, (x < 0.25) | (x > 0.75)) == 2
    assert critical_components(slc, np.zeros(slc.n_vertices, bool)) == 0


# ---------------------------------------------------------------- extrapolation

def rectified(vectors):
    v = np.asarray(vectors, float)
    return TangentFlow(v, "rectified", np.linalg.norm(v, axis=1) > 0, np.array([1.0, 0, 0]))


def test_constant_boundary_extends_constant():
    slc = make_slice(geometry.disk(n=12, jitter=0.2))
    n = slc.n_vertices
    c = np.array([0.6, 0.8, 0.0])
    v = np.tile(c, (n, 1))
    r = np.linalg.norm(slc.surface.vertices, axis=1)
    crit = r > 0.7
    v[~crit] = np.random.default_rng(0).normal(size=((~crit).sum(), 3))
    out = extrapolate_uncritical(slc, rectified(v), crit)
    np.testing.assert_allclose(out.vectors, np.tile(c, (n, 1)), atol=1e-6)
    assert out.stage == "preprocessed"


def test_no_uncritical_vertices_is_identity():
    slc = make_slice(geometry.square(n=4))
    v = np.tile([1.0, 0, 0], (slc.n_vertices, 1))
    out = extrapolate_uncritical(slc, rectified(v), np.ones(slc.n_vertices, bool))
    np.testing.assert_array_equal(out.vectors, v)


def test_annulus_energy_beats_random_competitors():
    slc = make_slice(geometry.annulus(0.5, 1.0, 48, 8))
    v = slc.surface.vertices
    n = slc.n_vertices
    r = np.linalg.norm(v[:, :2], axis=1)
    crit = r < 0.5 + 1e-9
    th = np.arctan2(v[:, 1], v[:, 0])
    # inner ring e_x, outer ring swirling: a non-trivial harmonic problem
    crit |= r > 1.0 - 1e-9
    f = np.zeros((n, 3))
    f[r < 0.5 + 1e-9] = [1.0, 0, 0]
    outer = r > 1.0 - 1e-9
    f[outer] = np.column_stack([np.cos(th[outer] / 2) ** 2 + 0.5, np.sin(th[outer]), 0 * th[outer]])
    f[outer] /= np.linalg.norm(f[outer], axis=1, keepdims=True)
    out = extrapolate_uncritical(slc, rectified(f), crit)
    e = dirichlet_energy(slc, out.vectors)
    rng = np.random.default_rng(0)
    for _ in range(100):
        comp = out.vectors.copy()
        rnd = rng.normal(size=((~crit).sum(), 3))
        rnd[:, 2] = 0
        comp[~crit] = rnd / np.linalg.norm(rnd, axis=1, keepdims=True)
        assert e <= dirichlet_energy(slc, comp)
    np.testing.assert_array_equal(out.vectors[crit], f[crit])


def test_output_unit_and_tangent_on_curved_slice():
    surf = geometry.cylinder_patch(shape=(20, 10), jitter=0.2)
    slc = make_slice(surf, uniaxial_components([0, 0, 1]))
    fl = preprocess_slice(slc)
    v = fl.preprocessed.vectors
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-8)
    assert np.abs(np.einsum("ij,ij->i", v, slc.normals)).max() <= 1e-6


def test_invalid_vertices_are_overwritten():
    slc = make_slice(geometry.square(n=6))
    v = np.tile([1.0, 0, 0], (slc.n_vertices, 1))
    v[10] = 0.0
    flow = rectified(v)
    out = extrapolate_uncritical(slc, flow, np.ones(slc.n_vertices, bool))
    np.testing.assert_allclose(out.vectors[10], [1.0, 0, 0], atol=1e-9)
    assert out.valid.all()


def test_unanchored_region_gets_mean(caplog):
    a = geometry.square(n=3)
    b = geometry.square(n=3)
    from stresspath.meshcore import TriMesh
    v = np.vstack([a.vertices, b.vertices + [3.0, 0, 0]])
    f = np.vstack([a.faces, b.faces + a.n_vertices])
    slc = make_slice(TriMesh(v, f))
    vec = np.tile([0.0, 1.0, 0.0], (slc.n_vertices, 1))
    crit = np.zeros(slc.n_vertices, bool)
    crit[: a.n_vertices] = True
    with caplog.at_level(logging.WARNING):
        out = extrapolate_uncritical(slc, rectified(vec), crit)
    assert "no critical boundary" in caplog.text
    np.testing.assert_allclose(out.vectors[a.n_vertices:], np.tile([0, 1.0, 0], (b.n_vertices, 1)), atol=1e-12)


def test_extrapolation_requires_rectified():
    slc = make_slice(geometry.square(n=2))
    with pytest.raises(FlowError):
        extrapolate_uncritical(slc, flow_on_surface(slc, np.ones((slc.n_vertices, 3))),
                               np.ones(slc.n_vertices, bool))


@pytest.mark.parametrize("scale", [1e-3, 7.0, 1e6])
def test_stress_scaling_invariance(scale):
    rng = np.random.default_rng(3)
    surf = geometry.cylinder_patch(shape=(12, 8), jitter=0.2)
    base = np.tile(uniaxial_components([0.3, 0.2, 1.0], 10.0), (surf.n_vertices, 1))
    comps = base + rng.normal(scale=2.0, size=base.shape)
    a = preprocess_slice(make_slice(surf, comps))
    b = preprocess_slice(make_slice(surf, comps * scale))
    np.testing.assert_array_equal(a.critical.mask, b.critical.mask)
    np.testing.assert_allclose(a.projected.vectors, b.projected.vectors, atol=1e-12)
    np.testing.assert_allclose(a.rectified.vectors, b.rectified.vectors, atol=1e-12)
    np.testing.assert_allclose(a.preprocessed.vectors, b.preprocessed.vectors, atol=1e-9)


def test_flow_csv(tmp_path):
    slc = make_slice(geometry.square(n=3), uniaxial_components([1, 0, 0]))
    fl = preprocess_slice(slc)
    p = tmp_path / "flow.csv"
    write_flow_csv(fl, p)
    lines = p.read_text().splitlines()
    assert lines[0].split(",")[-2:] == ["valid", "critical"]
    assert len(lines) == slc.n_vertices + 1
