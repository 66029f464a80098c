"""Offset slicing: volumetric heat-method geodesics and curved level-set layers."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .fea import PrincipalStressField, StressTensorField, principal_decomposition
from .meshcore import (
    DEGENERATE_AREA,
    TetMesh,
    TriMesh,
    boundary_face_owners,
    build_tet_operators,
    save_obj,
    tet_gradients,
    triangle_areas,
    vertex_normals,
)
from .numerics import solve_spd

logger = logging.getLogger(__name__)


class SlicingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DistanceField:
    values: np.ndarray
    source: np.ndarray
    time: float

    def __len__(self):
        return len(self.values)


@dataclass(eq=False)
class Slice:
    """One curved layer: a level set of the distance field.

    ``origin_nodes``/``origin_weights`` give, per slice vertex, the two tet
    nodes and the weights (summing to 1) it was interpolated from.
    ``critical`` is left empty here and filled by the flow stage.
    """

    surface: TriMesh
    stress: PrincipalStressField
    tensors: StressTensorField
    index: int
    iso: float
    origin_nodes: np.ndarray
    origin_weights: np.ndarray
    critical: np.ndarray | None = None

    @property
    def normals(self) -> np.ndarray:
        return self.surface.normals

    @property
    def n_vertices(self) -> int:
        return self.surface.n_vertices


def tet_graph(mesh: TetMesh) -> sparse.csr_matrix:
    e = mesh.edges()
    n = mesh.n_vertices
    a = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return (a + a.T).tocsr()


def geodesic_heat(mesh: TetMesh, source, time: float | None = None, method: str = "direct",
                  tol: float = 1e-10) -> DistanceField:
    """Geodesic distance from a set of boundary nodes via the heat method.

    Steps: diffuse ``(M + t L) u = u0`` for one implicit step, normalize
    ``X = -grad u / |grad u|`` per tet, then solve ``L phi = div X`` with one
    source node pinned and shift so the source sits at zero.
    ``time`` defaults to the squared mean edge length.
    """
    source = np.asarray(source)
    if source.dtype == bool:
        if source.shape != (mesh.n_vertices,):
            raise SlicingError("boolean source mask must have one entry per node")
        source = np.flatnonzero(source)
    source = np.unique(source.astype(np.int64))
    if source.size == 0:
        raise SlicingError("source node set is empty")
    if source.min() < 0 or source.max() >= mesh.n_vertices:
        raise SlicingError("source node index out of range")
    on_boundary = np.isin(source, mesh.boundary_nodes())
    if not on_boundary.all():
        raise SlicingError(f"source node {source[~on_boundary][0]} is not on the boundary")

    _, label = connected_components(tet_graph(mesh), directed=False)
    reached = np.isin(label, np.unique(label[source]))
    if not reached.all():
        lost = np.flatnonzero(~reached)
        raise SlicingError(
            f"{lost.size} nodes are unreachable from the source, e.g. {lost[:10].tolist()}"
        )

    G, ops = build_tet_operators(mesh)
    L, M = ops.laplacian, ops.mass
    if time is None:
        time = mesh.mean_edge_length() ** 2
    u0 = _source_density(mesh, source)
    u = solve_spd((M + time * L).tocsr(), u0, tol=tol, method=method)

    grad = G.apply(u)
    gn = np.linalg.norm(grad, axis=1)
    X = np.zeros_like(grad)
    ok = gn > 0
    X[ok] = -grad[ok] / gn[ok, None]
    div = G.matrix.T @ (X * G.weights[:, None]).ravel()

    pin = source[0]
    keep = np.ones(mesh.n_vertices, bool)
    keep[pin] = False
    phi = np.zeros(mesh.n_vertices)
    phi[keep] = solve_spd(L[keep][:, keep].tocsr(), div[keep], tol=tol, method=method)
    phi -= phi[source].min()
    phi[source] = 0.0
    np.maximum(phi, 0.0, out=phi)
    return DistanceField(phi, source, float(time))


def _source_density(mesh: TetMesh, source: np.ndarray) -> np.ndarray:
    """Initial heat as a surface delta: lumped area of boundary faces inside the source.

    Weighting by area (instead of a 0/1 indicator) keeps the injected heat
    uniform across a source face regardless of how many tets meet at each node.
    Isolated source nodes with no full face get the mean lumped area.
    """
    n = mesh.n_vertices
    bf = mesh.boundary_faces
    inside = np.isin(bf, source).all(axis=1)
    f = bf[inside]
    area = np.bincount(f.ravel(), weights=np.repeat(triangle_areas(mesh.vertices, f) / 3.0, 3), minlength=n)
    u0 = np.zeros(n)
    u0[source] = area[source]
    missing = source[u0[source] == 0]
    if missing.size:
        ref = area[area > 0].mean() if np.any(area > 0) else 1.0
        u0[missing] = ref
    return u0


def gradient_norms(mesh: TetMesh, values) -> np.ndarray:
    """Per-tet |grad f| of a piecewise-linear nodal field."""
    grads, _ = tet_gradients(mesh.vertices, mesh.tets)
    g = np.einsum("tid,ti->td", grads, np.asarray(values, float)[mesh.tets])
    return np.linalg.norm(g, axis=1)


# ---------------------------------------------------------------------------
# Marching tetrahedra
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LevelSet:
    vertices: np.ndarray
    faces: np.ndarray
    nodes: np.ndarray     # (n, 2) tet nodes each vertex interpolates
    weights: np.ndarray   # (n, 2) interpolation weights


def _crossings(phi, x, a, b, iso, snap):
    """Crossing points on edges (a above, b below); normalized to (lo, hi) order."""
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    flo, fhi = phi[lo], phi[hi]
    w = (iso - flo) / (fhi - flo)  # weight of hi
    n = len(phi)
    key = lo * n + hi
    w = np.where(w <= snap, 0.0, np.where(w >= 1.0 - snap, 1.0, w))
    at_lo, at_hi = w == 0.0, w == 1.0
    key = np.where(at_lo, lo * n + lo, np.where(at_hi, hi * n + hi, key))
    nodes = np.stack([lo, hi], axis=-1)
    weights = np.stack([1.0 - w, w], axis=-1)
    pts = x[lo] * weights[..., :1] + x[hi] * weights[..., 1:]
    return key, pts, nodes, weights


def level_set(mesh: TetMesh, phi, iso: float, snap: float = 0.0,
              tet_grads: np.ndarray | None = None, owners=None) -> LevelSet:
    """Triangulated ``phi == iso`` surface, wound so normals follow +grad phi.

    Nodes with ``phi == iso`` count as above. A boundary face lying exactly on
    the level whose tet is entirely above is emitted as well, so the extreme
    levels (base face, top face) are not lost. Crossings within ``snap`` (edge
    fraction) of a node are moved onto that node.
    """
    phi = np.asarray(phi, float)
    x = mesh.vertices
    T = mesh.tets
    f = phi[T]
    above = f >= iso
    cnt = above.sum(axis=1)
    if tet_grads is None:
        grads, _ = tet_gradients(x, T)
        tet_grads = np.einsum("tid,ti->td", grads, f)

    tri_keys, tri_pts, tri_nodes, tri_w, tri_tet = [], [], [], [], []

    # one vertex separated from three
    for lone_above in (True, False):
        sel = np.flatnonzero(cnt == (1 if lone_above else 3))
        if sel.size == 0:
            continue
        ab = above[sel]
        lone = np.argmax(ab if lone_above else ~ab, axis=1)
        others = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])[lone]
        tl = T[sel, lone]
        to = np.take_along_axis(T[sel], others, axis=1)
        if lone_above:
            k, p, nd, w = _crossings(phi, x, tl[:, None], to, iso, snap)
        else:
            k, p, nd, w = _crossings(phi, x, to, tl[:, None], iso, snap)
        tri_keys.append(k)
        tri_pts.append(p)
        tri_nodes.append(nd)
        tri_w.append(w)
        tri_tet.append(sel)

    # two and two: quad split into two triangles
    sel = np.flatnonzero(cnt == 2)
    if sel.size:
        ab = above[sel]
        order = np.argsort(~ab, axis=1, kind="stable")  # above first
        tt = np.take_along_axis(T[sel], order, axis=1)
        a0, a1, b0, b1 = tt[:, 0], tt[:, 1], tt[:, 2], tt[:, 3]
        k, p, nd, w = _crossings(phi, x, np.stack([a0, a0, a1, a1], 1), np.stack([b0, b1, b1, b0], 1), iso, snap)
        for c in ([0, 1, 2], [0, 2, 3]):
            tri_keys.append(k[:, c])
            tri_pts.append(p[:, c])
            tri_nodes.append(nd[:, c])
            tri_w.append(w[:, c])
            tri_tet.append(sel)

    # boundary faces lying exactly on the level with their tet above it
    bf = mesh.boundary_faces
    on = np.all(phi[bf] == iso, axis=1)
    if on.any():
        owner, local = owners if owners is not None else boundary_face_owners(mesh)
        opp = T[owner[on], local[on]]
        emit = np.flatnonzero(on)[phi[opp] > iso]
        if emit.size:
            nodes = bf[emit]
            n = len(phi)
            tri_keys.append(nodes * n + nodes)
            tri_pts.append(x[nodes])
            tri_nodes.append(np.stack([nodes, nodes], axis=-1))
            tri_w.append(np.stack([np.ones(nodes.shape), np.zeros(nodes.shape)], axis=-1))
            tri_tet.append(owner[emit])

    if not tri_keys:
        return LevelSet(np.zeros((0, 3)), np.zeros((0, 3), np.int64), np.zeros((0, 2), np.int64), np.zeros((0, 2)))

    keys = np.concatenate(tri_keys)
    pts = np.concatenate(tri_pts)
    nodes = np.concatenate(tri_nodes)
    wts = np.concatenate(tri_w)
    tets = np.concatenate(tri_tet)

    uniq, first, inv = np.unique(keys.ravel(), return_index=True, return_inverse=True)
    faces = inv.reshape(-1, 3)
    verts = pts.reshape(-1, 3)[first]
    vnodes = nodes.reshape(-1, 2)[first]
    vw = wts.reshape(-1, 2)[first]

    good = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    faces, tets = faces[good], tets[good]
    area = triangle_areas(verts, faces)
    good = area > DEGENERATE_AREA
    faces, tets = faces[good], tets[good]
    # drop duplicate triangles (same vertex set)
    _, ui = np.unique(np.sort(faces, axis=1), axis=0, return_index=True)
    ui = np.sort(ui)
    faces, tets = faces[ui], tets[ui]

    p = verts[faces]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    flip = np.einsum("ij,ij->i", fn, tet_grads[tets]) < 0
    faces[flip] = faces[flip][:, ::-1]

    used = np.unique(faces)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return LevelSet(verts[used], remap[faces], vnodes[used], vw[used])


def extract_slices(mesh: TetMesh, dist: DistanceField | np.ndarray, stress, layer_height: float,
                   snap: float = 0.0, min_area: float | None = None) -> list[Slice]:
    """Level-set layers at ``iso = k * layer_height``, k = 0, 1, ...

    Per-vertex stress tensors are interpolated along the cut tet edges and
    re-decomposed. Layers with area below ``layer_height**2`` are dropped.
    """
    if not layer_height > 0:
        raise SlicingError(f"layer_height must be > 0, got {layer_height}")
    phi = dist.values if isinstance(dist, DistanceField) else np.asarray(dist, float)
    if isinstance(stress, PrincipalStressField):
        tensors = stress.tensors().components
    elif isinstance(stress, StressTensorField):
        tensors = stress.components
    else:
        tensors = np.asarray(stress, float)
    if min_area is None:
        min_area = layer_height**2
    top = float(phi.max())
    n_levels = int(np.floor(top / layer_height + 1e-9)) + 1
    if top < layer_height:
        logger.warning("layer height %.4g exceeds the maximum distance %.4g; only the base layer is produced",
                       layer_height, top)
    grads, _ = tet_gradients(mesh.vertices, mesh.tets)
    tet_grads = np.einsum("tid,ti->td", grads, phi[mesh.tets])
    owners = boundary_face_owners(mesh)
    slices = []
    for k in range(n_levels):
        iso = k * layer_height
        ls = level_set(mesh, phi, iso, snap=snap, tet_grads=tet_grads, owners=owners)
        if len(ls.faces) == 0:
            continue
        surf = TriMesh(ls.vertices, ls.faces)
        if surf.area() < min_area and not (k == 0 and top < layer_height):
            logger.info("dropping layer %d (area %.3g mm^2)", k, surf.area())
            continue
        surf = TriMesh(ls.vertices, ls.faces, vertex_normals(surf))
        t = (tensors[ls.nodes] * ls.weights[..., None]).sum(axis=1)
        tf = StressTensorField(t)
        slices.append(Slice(surf, principal_decomposition(tf), tf, k, iso, ls.nodes, ls.weights))
    return slices


def planar_distance(mesh: TetMesh, axis: int) -> np.ndarray:
    """Coordinate along ``axis`` shifted to start at zero (planar slicing field)."""
    c = mesh.vertices[:, axis]
    return c - c.min()


def slicing_alignment(slices: list[Slice], critical=None) -> tuple[float, list[float]]:
    """Mean of ``|f x n|`` over critical slice vertices, overall and per slice.

    ``critical`` is a list of per-slice boolean masks; defaults to each
    slice's own ``critical`` field. Slices without critical vertices report NaN.
    """
    if critical is None:
        critical = [s.critical for s in slices]
    total, count, per = 0.0, 0, []
    for s, mask in zip(slices, critical):
        if mask is None:
            raise SlicingError(f"slice {s.index} has no critical mask")
        mask = np.asarray(mask, bool)
        g = np.linalg.norm(np.cross(s.stress.max_direction, s.normals), axis=1)
        g = np.clip(g, 0.0, 1.0)[mask]
        per.append(float(g.mean()) if g.size else float("nan"))
        total += float(g.sum())
        count += g.size
    if count == 0:
        raise SlicingError("no critical nodes on any slice; lower theta_a or theta_s")
    return total / count, per


def write_slice(slc: Slice, directory, stem: str | None = None) -> tuple[str, str]:
    """Export a slice as OBJ plus a per-vertex CSV of normals and principal stress."""
    os.makedirs(directory, exist_ok=True)
    stem = stem or f"slice_{slc.index:04d}"
    obj = os.path.join(directory, stem + ".obj")
    side = os.path.join(directory, stem + ".csv")
    save_obj(slc.surface, obj)
    crit = slc.critical if slc.critical is not None else np.zeros(slc.n_vertices, bool)
    with open(side, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["vertex", "nx", "ny", "nz", "s1", "s2", "s3", "d1x", "d1y", "d1z", "critical"])
        d1 = slc.stress.max_direction
        for i in range(slc.n_vertices):
            wr.writerow([i, *(f"{v:.9g}" for v in slc.normals[i]), *(f"{v:.9g}" for v in slc.stress.values[i]),
                         *(f"{v:.9g}" for v in d1[i]), int(crit[i])])
    return obj, side


def with_critical(slc: Slice, mask) -> Slice:
    return replace(slc, critical=np.asarray(mask, bool))

