"""Synthetic desk-scale geometries built from structured grids.

Volumes are hexahedral grids split into six tets each (Kuhn split, so the
pieces conform across cells) and then pushed through a mapping. Boundary faces
carry a marker identifying the parametric side they lie on::

    1: u = min   2: u = max   3: v = min   4: v = max   5: w = min   6: w = max

and 0 for faces created by removed cells.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .meshcore import TetMesh, TriMesh

# Kuhn split: one tet per axis permutation, all sharing the 000-111 diagonal
_KUHN = []
for perm in permutations(range(3)):
    corner = [0, 0, 0]
    tet = [0]
    for ax in perm:
        corner[ax] = 1
        tet.append(corner[0] + 2 * corner[1] + 4 * corner[2])
    _KUHN.append(tet)
_KUHN = np.array(_KUHN)


def structured_tet_mesh(shape, mapping=None, keep=None, bounds=((0, 1), (0, 1), (0, 1))) -> TetMesh:
    """Tet mesh of a parametric box, optionally mapped and with cells removed.

    Parameters
    ----------
    shape : (nu, nv, nw)
        Cells per parametric direction.
    mapping : callable, optional
        ``mapping(uvw) -> xyz`` on an (n, 3) array of parametric points.
    keep : callable, optional
        ``keep(centroids) -> bool mask`` over cell centroids in parametric space.
    bounds : three (lo, hi) pairs
        Parametric extent.
    """
    nu, nv, nw = (int(s) for s in shape)
    axes = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(bounds, (nu, nv, nw))]
    U, V, W = np.meshgrid(*axes, indexing="ij")
    param = np.column_stack([U.ravel(), V.ravel(), W.ravel()])

    def vid(i, j, k):
        return (i * (nv + 1) + j) * (nw + 1) + k

    I, J, K = np.meshgrid(np.arange(nu), np.arange(nv), np.arange(nw), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    if keep is not None:
        cen = np.column_stack([
            axes[0][I] + 0.5 * np.diff(axes[0])[I],
            axes[1][J] + 0.5 * np.diff(axes[1])[J],
            axes[2][K] + 0.5 * np.diff(axes[2])[K],
        ])
        mask = np.asarray(keep(cen), bool)
        I, J, K = I[mask], J[mask], K[mask]
    corners = np.stack(
        [vid(I + (c & 1), J + ((c >> 1) & 1), K + ((c >> 2) & 1)) for c in range(8)], axis=1
    )
    tets = corners[:, _KUHN].reshape(-1, 4)
    used = np.unique(tets)
    remap = -np.ones(len(param), dtype=np.int64)
    remap[used] = np.arange(len(used))
    tets = remap[tets]
    param = param[used]
    xyz = param if mapping is None else np.asarray(mapping(param), float)
    mesh = TetMesh(xyz, tets)

    fp = param[mesh.boundary_faces]
    markers = np.zeros(len(fp), dtype=np.int64)
    for ax in range(3):
        lo, hi = bounds[ax]
        tol = 1e-9 * max(1.0, abs(hi - lo))
        markers[np.all(np.abs(fp[:, :, ax] - lo) < tol, axis=1)] = 1 + 2 * ax
        markers[np.all(np.abs(fp[:, :, ax] - hi) < tol, axis=1)] = 2 + 2 * ax
    return TetMesh(mesh.vertices, mesh.tets, mesh.boundary_faces, markers)


def box(size=(1.0, 1.0, 1.0), shape=(10, 10, 10), origin=(0.0, 0.0, 0.0)) -> TetMesh:
    size = np.asarray(size, float)
    origin = np.asarray(origin, float)
    return structured_tet_mesh(shape, bounds=tuple((o, o + s) for o, s in zip(origin, size)))


def l_shape(size=(4.0, 1.0, 4.0), arm=1.0, shape=(16, 4, 16)) -> TetMesh:
    """L-shaped solid in the xz-plane: foot along x, upright along z."""
    sx, sy, sz = size

    def keep(c):
        return (c[:, 0] <= arm) | (c[:, 2] <= arm)

    return structured_tet_mesh(shape, keep=keep, bounds=((0, sx), (0, sy), (0, sz)))


def curved_bracket(length=40.0, width=6.0, thickness=2.0, rise=6.0, shape=(80, 13, 8)) -> TetMesh:
    """Arched strip along x: centreline ``z = rise * (1 - cos(2 pi x / length)) / 2``.

    Parametric ``w`` runs through the thickness along the centreline normal, so
    marker 5 is the curved underside and markers 1/2 are the two end faces.
    """
    k = 2 * np.pi / length

    def mapping(p):
        x, y, t = p[:, 0], p[:, 1], p[:, 2]
        z = rise * (1 - np.cos(k * x)) / 2
        dz = rise * k * np.sin(k * x) / 2
        nrm = np.sqrt(1 + dz**2)
        return np.column_stack([x - t * dz / nrm, y, z + t / nrm])

    return structured_tet_mesh(shape, mapping=mapping,
                               bounds=((0, length), (0, width), (0, thickness)))


def cylinder_shell(inner=10.0, outer=12.0, length=10.0, angle=np.pi / 2, shape=(24, 10, 4)) -> TetMesh:
    """Sector of a thick cylindrical shell; parametric (theta, z, r)."""

    def mapping(p):
        th, z, r = p[:, 0], p[:, 1], p[:, 2]
        return np.column_stack([r * np.cos(th), r * np.sin(th), z])

    return structured_tet_mesh(shape, mapping=mapping,
                               bounds=((0, angle), (0, length), (inner, outer)))


def ball(radius=1.0, n=12) -> TetMesh:
    """Ball meshed by radially projecting a cube grid (max-norm to 2-norm)."""

    def mapping(p):
        inf = np.abs(p).max(axis=1)
        two = np.linalg.norm(p, axis=1)
        s = np.where(two > 0, inf / np.where(two > 0, two, 1.0), 0.0)
        return radius * p * s[:, None]

    return structured_tet_mesh((n, n, n), mapping=mapping, bounds=((-1, 1),) * 3)


# ---------------------------------------------------------------------------
# Surfaces
# ---------------------------------------------------------------------------

def grid_surface(shape, mapping=None, bounds=((0, 1), (0, 1)), jitter=0.0, seed=0) -> TriMesh:
    """Triangulated parametric rectangle (alternating diagonals), optionally mapped.

    ``jitter`` moves interior parameter points by up to that fraction of a cell.
    """
    nu, nv = (int(s) for s in shape)
    u = np.linspace(*bounds[0], nu + 1)
    v = np.linspace(*bounds[1], nv + 1)
    U, V = np.meshgrid(u, v, indexing="ij")
    p = np.column_stack([U.ravel(), V.ravel()])
    if jitter:
        rng = np.random.default_rng(seed)
        du, dv = np.diff(u).min(), np.diff(v).min()
        interior = ((U > u[0]) & (U < u[-1]) & (V > v[0]) & (V < v[-1])).ravel()
        p[interior] += rng.uniform(-jitter, jitter, (interior.sum(), 2)) * [du, dv]
    I, J = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    I, J = I.ravel(), J.ravel()
    a = I * (nv + 1) + J
    b, c, d = a + (nv + 1), a + (nv + 1) + 1, a + 1
    flip = (I + J) % 2 == 1
    t1 = np.where(flip[:, None], np.column_stack([a, b, d]), np.column_stack([a, b, c]))
    t2 = np.where(flip[:, None], np.column_stack([b, c, d]), np.column_stack([a, c, d]))
    faces = np.vstack([t1, t2])
    xyz = np.column_stack([p, np.zeros(len(p))]) if mapping is None else np.asarray(mapping(p), float)
    return TriMesh(xyz, faces)


def square(size=1.0, n=20, jitter=0.0, seed=0) -> TriMesh:
    return grid_surface((n, n), bounds=((0, size), (0, size)), jitter=jitter, seed=seed)


def disk(radius=1.0, n=24, jitter=0.0, seed=0) -> TriMesh:
    """Disk from a square grid pushed through the max-norm radial map."""

    def mapping(p):
        inf = np.abs(p).max(axis=1)
        two = np.linalg.norm(p, axis=1)
        s = np.where(two > 0, inf / np.where(two > 0, two, 1.0), 0.0)
        q = radius * p * s[:, None]
        return np.column_stack([q, np.zeros(len(q))])

    return grid_surface((n, n), mapping=mapping, bounds=((-1, 1), (-1, 1)), jitter=jitter, seed=seed)


def annulus(inner=0.5, outer=1.0, n_theta=48, n_r=8) -> TriMesh:
    def mapping(p):
        th, r = p[:, 0], p[:, 1]
        return np.column_stack([r * np.cos(th), r * np.sin(th), np.zeros(len(p))])

    mesh = grid_surface((n_theta, n_r), mapping=mapping, bounds=((0, 2 * np.pi), (inner, outer)))
    # weld the seam at theta = 2 pi
    v = mesh.vertices
    seam = n_theta * (n_r + 1)
    remap = np.arange(len(v))
    remap[seam : seam + n_r + 1] = np.arange(n_r + 1)
    faces = remap[mesh.faces]
    used = np.unique(faces)
    idx = -np.ones(len(v), dtype=np.int64)
    idx[used] = np.arange(len(used))
    return TriMesh(v[used], idx[faces])


def cylinder_patch(radius=10.0, length=10.0, angle=np.pi / 2, shape=(40, 25), jitter=0.0, seed=0) -> TriMesh:
    """Outward-facing sector of a cylinder surface; parametric (theta, z)."""

    def mapping(p):
        th, z = p[:, 0], p[:, 1]
        return np.column_stack([radius * np.cos(th), radius * np.sin(th), z])

    return grid_surface(shape, mapping=mapping, bounds=((0, angle), (0, length)), jitter=jitter, seed=seed)


def uv_sphere(radius=1.0, n_theta=48, n_phi=24) -> TriMesh:
    """Closed UV sphere with single pole vertices."""
    verts = [[0, 0, radius]]
    for i in range(1, n_phi):
        ph = np.pi * i / n_phi
        for j in range(n_theta):
            th = 2 * np.pi * j / n_theta
            verts.append([radius * np.sin(ph) * np.cos(th), radius * np.sin(ph) * np.sin(th), radius * np.cos(ph)])
    verts.append([0, 0, -radius])
    faces = []
    ring = lambda i, j: 1 + (i - 1) * n_theta + (j % n_theta)  # noqa: E731
    for j in range(n_theta):
        faces.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, n_phi - 1):
        for j in range(n_theta):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    last = len(verts) - 1
    for j in range(n_theta):
        faces.append([last, ring(n_phi - 1, j + 1), ring(n_phi - 1, j)])
    return TriMesh(np.array(verts), np.array(faces))
