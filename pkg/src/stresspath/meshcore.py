"""Triangle and tetrahedral meshes, file I/O and discrete differential operators.

All lengths are millimetres. Operators are returned as ``scipy.sparse`` CSR
matrices; meshes are treated as immutable once built.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12
STL_WELD_TOL = 1e-6


class MeshError(ValueError):
    """Raised for malformed mesh data or unreadable mesh files."""


def _as_points(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or v.shape[1] not in (2, 3):
        raise MeshError(f"vertices must have shape (n, 3), got {v.shape}")
    if v.shape[1] == 2:
        v = np.column_stack([v, np.zeros(len(v))])
    if not np.all(np.isfinite(v)):
        raise MeshError("vertices contain non-finite coordinates")
    return v


def _as_cells(c, width: int, n_vertices: int, what: str) -> np.ndarray:
    c = np.asarray(c, dtype=np.int64)
    if c.size == 0:
        return c.reshape(0, width)
    if c.ndim != 2 or c.shape[1] != width:
        raise MeshError(f"{what} must have shape (m, {width}), got {c.shape}")
    bad = np.flatnonzero((c < 0).any(axis=1) | (c >= n_vertices).any(axis=1))
    if bad.size:
        raise MeshError(
            f"{what} {bad[0]} references vertex index out of range "
            f"(mesh has {n_vertices} vertices)"
        )
    return c


def triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def triangle_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unit face normals (right-hand rule on the face winding)."""
    p = vertices[faces]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    ln = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.where(ln > 0, ln, 1.0)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangulated surface.

    Parameters
    ----------
    vertices : (n, 3) array_like
        Vertex positions in mm.
    faces : (m, 3) array_like
        Vertex indices per triangle, consistently wound.
    normals : (n, 3) array_like, optional
        Unit per-vertex normals. Computed on demand by :func:`vertex_normals`
        when not given.
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = _as_points(self.vertices)
        f = _as_cells(self.faces, 3, len(v), "face")
        if len(f):
            area = triangle_areas(v, f)
            bad = np.flatnonzero(~(area > DEGENERATE_AREA))
            if bad.size:
                raise MeshError(f"face {bad[0]} is degenerate (area {area[bad[0]]:.3g} mm^2)")
            directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
            _, counts = np.unique(directed, axis=0, return_counts=True)
            if np.any(counts > 1):
                raise MeshError("faces are not consistently wound (or an edge is non-manifold)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=float)
            if n.shape != v.shape:
                raise MeshError("normals must match vertices in shape")
            object.__setattr__(self, "normals", n)
        for a in (self.vertices, self.faces, self.normals):
            if a is not None:
                a.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.faces)

    def face_normals(self) -> np.ndarray:
        return triangle_normals(self.vertices, self.faces)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (i, j) pairs."""
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)

    def adjacency(self) -> sparse.csr_matrix:
        e = self.edges()
        n = self.n_vertices
        a = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
        return (a + a.T).tocsr()

    def boundary_edges(self) -> np.ndarray:
        """Directed boundary edges, oriented as in their single incident face."""
        d = self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        key = np.sort(d, axis=1)
        _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        return d[counts[inv.ravel()] == 1]

    def boundary_loops(self) -> list[np.ndarray]:
        """Boundary vertex loops, each ordered along the face winding."""
        be = self.boundary_edges()
        nxt: dict[int, list[int]] = {}
        for a, b in be:
            nxt.setdefault(int(a), []).append(int(b))
        loops = []
        while nxt:
            start = next(iter(nxt))
            loop = [start]
            cur = start
            while True:
                succ = nxt.get(cur)
                if not succ:
                    break
                b = succ.pop()
                if not succ:
                    del nxt[cur]
                if b == start:
                    break
                loop.append(b)
                cur = b
            if len(loop) >= 3:
                loops.append(np.array(loop, dtype=np.int64))
        return loops


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Tetrahedral volume mesh.

    Tets are stored with positive signed volume; inverted input tets are
    reoriented by swapping their last two vertices. ``boundary_faces`` are
    oriented outward. ``face_markers`` optionally carries one integer group id
    per boundary face (from a TetGen ``.face`` file).
    """

    vertices: np.ndarray
    tets: np.ndarray
    boundary_faces: np.ndarray = field(default=None)
    face_markers: np.ndarray | None = None

    def __post_init__(self):
        v = _as_points(self.vertices)
        t = _as_cells(self.tets, 4, len(v), "tet").copy()
        if len(t) == 0:
            raise MeshError("tet mesh has no elements")
        vol = signed_tet_volumes(v, t)
        scale = max(np.ptp(v, axis=0).max(), 1e-300) ** 3
        flat = np.flatnonzero(np.abs(vol) <= 1e-14 * scale)
        if flat.size:
            raise MeshError(f"tet {flat[0]} is degenerate (zero volume), cannot be reoriented")
        neg = vol < 0
        if neg.any():
            t[neg] = t[neg][:, [0, 1, 3, 2]]
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "tets", t)
        if self.boundary_faces is None:
            object.__setattr__(self, "boundary_faces", _tet_boundary(t))
        else:
            object.__setattr__(
                self, "boundary_faces", _as_cells(self.boundary_faces, 3, len(v), "boundary face")
            )
        if self.face_markers is not None:
            fm = np.asarray(self.face_markers, dtype=np.int64)
            if fm.shape != (len(self.boundary_faces),):
                raise MeshError("face_markers must have one entry per boundary face")
            object.__setattr__(self, "face_markers", fm)
        for a in (self.vertices, self.tets, self.boundary_faces, self.face_markers):
            if a is not None:
                a.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def volumes(self) -> np.ndarray:
        return signed_tet_volumes(self.vertices, self.tets)

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_faces)

    def edges(self) -> np.ndarray:
        e = self.tets[:, [0, 1, 0, 2, 0, 3, 1, 2, 1, 3, 2, 3]].reshape(-1, 2)
        return np.unique(np.sort(e, axis=1), axis=0)

    def mean_edge_length(self) -> float:
        e = self.edges()
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def surface(self) -> TriMesh:
        return TriMesh(self.vertices, self.boundary_faces)

    def translated(self, offset) -> "TetMesh":
        return TetMesh(self.vertices + np.asarray(offset, float), self.tets,
                       self.boundary_faces, self.face_markers)

    def transformed(self, rotation, offset=(0.0, 0.0, 0.0)) -> "TetMesh":
        r = np.asarray(rotation, float)
        return TetMesh(self.vertices @ r.T + np.asarray(offset, float), self.tets,
                       self.boundary_faces, self.face_markers)


def signed_tet_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    a, b, c = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


# faces of a positively oriented tet (0,1,2,3), wound outward
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


def _tet_boundary(tets: np.ndarray, return_owner: bool = False):
    f = tets[:, _TET_FACES].reshape(-1, 3)
    key = np.sort(f, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    once = counts[inv.ravel()] == 1
    if np.any(counts > 2):
        raise MeshError("tet mesh has a face shared by more than two tets")
    if return_owner:
        owner = np.repeat(np.arange(len(tets)), 4)[once]
        local = np.tile(np.arange(4), len(tets))[once]
        return f[once], owner, local
    return f[once]


def boundary_face_owners(mesh: TetMesh) -> tuple[np.ndarray, np.ndarray]:
    """Owning tet and its opposite local vertex for every boundary face.

    The returned arrays are aligned with ``mesh.boundary_faces`` by sorted
    vertex triple.
    """
    f, owner, local = _tet_boundary(mesh.tets, return_owner=True)
    ka = np.sort(f, axis=1)
    kb = np.sort(mesh.boundary_faces, axis=1)
    order_a = np.lexsort(ka.T[::-1])
    order_b = np.lexsort(kb.T[::-1])
    if len(order_a) != len(order_b) or not np.array_equal(ka[order_a], kb[order_b]):
        raise MeshError("boundary faces do not match the tet boundary")
    out_owner = np.empty(len(kb), dtype=np.int64)
    out_local = np.empty(len(kb), dtype=np.int64)
    out_owner[order_b] = owner[order_a]
    out_local[order_b] = local[order_a]
    return out_owner, out_local


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def _data_lines(path):
    if not os.path.exists(path):
        raise MeshError(f"cannot read {path}: no such file")
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if line:
                yield line.split()


def load_tet_mesh(node_path, ele_path, face_path=None) -> TetMesh:
    """Read a TetGen-style ``.node``/``.ele`` pair (and optional ``.face``).

    Index base (0 or 1) is taken from the first node record after the header.
    """
    rows = list(_data_lines(node_path))
    if not rows:
        raise MeshError(f"{node_path} is empty")
    try:
        n_nodes = int(rows[0][0])
        node_rows = rows[1 : 1 + n_nodes]
        if len(node_rows) != n_nodes:
            raise MeshError(f"{node_path}: header declares {n_nodes} nodes, found {len(node_rows)}")
        ids = np.array([int(r[0]) for r in node_rows], dtype=np.int64)
        xyz = np.array([[float(x) for x in r[1:4]] for r in node_rows])
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{node_path}: malformed node record ({exc})") from exc
    if n_nodes == 0:
        raise MeshError(f"{node_path} has no nodes")
    base = int(ids.min())
    if base not in (0, 1) or not np.array_equal(np.sort(ids), np.arange(base, base + n_nodes)):
        raise MeshError(f"{node_path}: node indices must be contiguous from 0 or 1")
    vertices = np.empty((n_nodes, 3))
    vertices[ids - base] = xyz

    rows = list(_data_lines(ele_path))
    if not rows:
        raise MeshError(f"{ele_path} is empty")
    try:
        n_tets = int(rows[0][0])
        tet_rows = rows[1 : 1 + n_tets]
        if len(tet_rows) != n_tets:
            raise MeshError(f"{ele_path}: header declares {n_tets} tets, found {len(tet_rows)}")
        tets = np.array([[int(x) for x in r[1:5]] for r in tet_rows], dtype=np.int64) - base
    except (ValueError, IndexError) as exc:
        raise MeshError(f"{ele_path}: malformed element record ({exc})") from exc
    if tets.size == 0:
        raise MeshError(f"{ele_path} has no elements")
    bad = np.flatnonzero((tets < 0).any(axis=1) | (tets >= n_nodes).any(axis=1))
    if bad.size:
        raise MeshError(
            f"{ele_path}: element {bad[0]} references vertex "
            f"{tets[bad[0]].max() + base} out of range (index base {base}, {n_nodes} nodes)"
        )
    mesh = TetMesh(vertices, tets)
    if face_path is None:
        return mesh

    rows = list(_data_lines(face_path))
    if not rows:
        raise MeshError(f"{face_path} is empty")
    n_faces = int(rows[0][0])
    recs = rows[1 : 1 + n_faces]
    tri = np.array([[int(x) for x in r[1:4]] for r in recs], dtype=np.int64) - base
    marks = np.array([int(r[4]) if len(r) > 4 else 0 for r in recs], dtype=np.int64)
    lookup = {tuple(sorted(f)): m for f, m in zip(tri.tolist(), marks.tolist())}
    markers = np.array(
        [lookup.get(tuple(sorted(f)), 0) for f in mesh.boundary_faces.tolist()], dtype=np.int64
    )
    return TetMesh(mesh.vertices, mesh.tets, mesh.boundary_faces, markers)


def save_tet_mesh(mesh: TetMesh, stem) -> tuple[str, str, str | None]:
    """Write ``stem.node``, ``stem.ele`` (and ``stem.face`` if markers exist), 0-based."""
    stem = os.fspath(stem)
    node_path, ele_path = stem + ".node", stem + ".ele"
    with open(node_path, "w", newline="\n") as fh:
        fh.write(f"{mesh.n_vertices} 3 0 0\n")
        for i, (x, y, z) in enumerate(mesh.vertices.tolist()):
            fh.write(f"{i} {x:.17g} {y:.17g} {z:.17g}\n")
    with open(ele_path, "w", newline="\n") as fh:
        fh.write(f"{mesh.n_tets} 4 0\n")
        for i, t in enumerate(mesh.tets.tolist()):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")
    face_path = None
    if mesh.face_markers is not None:
        face_path = stem + ".face"
        with open(face_path, "w", newline="\n") as fh:
            fh.write(f"{len(mesh.boundary_faces)} 1\n")
            for i, (f, m) in enumerate(zip(mesh.boundary_faces.tolist(), mesh.face_markers.tolist())):
                fh.write(f"{i} {f[0]} {f[1]} {f[2]} {m}\n")
    return node_path, ele_path, face_path


def _parse_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split("#", 1)[0].split()
            if not parts:
                continue
            if parts[0] == "v":
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError as exc:
                    raise MeshError(f"{path}:{lineno}: bad vertex record") from exc
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    try:
                        k = int(tok.split("/")[0])
                    except ValueError as exc:
                        raise MeshError(f"{path}:{lineno}: bad face record") from exc
                    k = k - 1 if k > 0 else len(verts) + k
                    if k < 0 or k >= len(verts):
                        raise MeshError(f"{path}:{lineno}: face references missing vertex {tok}")
                    idx.append(k)
                if len(idx) < 3:
                    raise MeshError(f"{path}:{lineno}: face with fewer than 3 vertices")
                for j in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[j], idx[j + 1]])
    if not verts:
        raise MeshError(f"{path}: no vertices")
    return np.array(verts, float), np.array(faces, np.int64).reshape(-1, 3)


def _parse_stl(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) >= 84:
        (count,) = struct.unpack("<I", data[80:84])
        if len(data) == 84 + 50 * count:
            rec = np.frombuffer(data, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]),
                                count=count, offset=84)
            return rec["v"].astype(float)
    text = data.decode("ascii", errors="replace")
    if text.lstrip().startswith("solid") and "facet" in text:
        pts = [[float(x) for x in line.split()[1:4]] for line in text.splitlines()
               if line.strip().startswith("vertex")]
        if len(pts) % 3 == 0 and pts:
            return np.array(pts, float).reshape(-1, 3, 3)
    raise MeshError(f"{path}: unreadable STL")


def weld(points: np.ndarray, tol: float = STL_WELD_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Merge points closer than ``tol``; returns (unique points, index map)."""
    tree = cKDTree(points)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    n = len(points)
    g = sparse.coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n)) if len(pairs) else sparse.coo_matrix((n, n))
    _, label = connected_components(g, directed=False)
    # keep first-seen order of representatives
    first = np.full(label.max() + 1, n)
    np.minimum.at(first, label, np.arange(n))
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return points[first[order]], remap[label]


def orient_faces(faces: np.ndarray) -> np.ndarray:
    """Make the winding consistent per connected component (BFS flips)."""
    faces = np.array(faces, dtype=np.int64)
    m = len(faces)
    d = faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    key = np.sort(d, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if np.any(counts > 2):
        e = uniq[np.argmax(counts)]
        raise MeshError(f"non-manifold edge ({e[0]}, {e[1]}) shared by {counts.max()} faces")
    owners: dict[int, list[int]] = {}
    for h, e in enumerate(inv.tolist()):
        owners.setdefault(e, []).append(h)
    flip = np.zeros(m, dtype=bool)
    seen = np.zeros(m, dtype=bool)
    for seed in range(m):
        if seen[seed]:
            continue
        seen[seed] = True
        stack = [seed]
        while stack:
            f = stack.pop()
            for k in range(3):
                h = 3 * f + k
                for h2 in owners[int(inv[h])]:
                    g = h2 // 3
                    if g == f:
                        continue
                    same_dir = d[h][0] == d[h2][0]
                    want_flip = flip[f] ^ bool(same_dir)
                    if not seen[g]:
                        seen[g] = True
                        flip[g] = want_flip
                        stack.append(g)
                    elif flip[g] != want_flip:
                        raise MeshError("surface is not orientable")
    faces[flip] = faces[flip][:, ::-1]
    return faces


def load_tri_mesh(path) -> TriMesh:
    """Read an OBJ or STL surface, welding STL corners and fixing winding."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise MeshError(f"cannot read {path}: no such file")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".obj":
        v, f = _parse_obj(path)
    elif ext == ".stl":
        tri = _parse_stl(path)
        v, idx = weld(tri.reshape(-1, 3))
        f = idx.reshape(-1, 3)
        f = f[(f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])]
    else:
        raise MeshError(f"{path}: unsupported surface format {ext!r}")
    if len(f):
        # the first face of each component keeps its input winding
        f = orient_faces(f)
    return TriMesh(v, f)


def save_obj(mesh: TriMesh, path) -> None:
    with open(path, "w", newline="\n") as fh:
        for x, y, z in mesh.vertices.tolist():
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in (mesh.faces + 1).tolist():
            fh.write(f"f {a} {b} {c}\n")


def save_stl(mesh: TriMesh, path) -> None:
    """Binary STL (float32), one facet per face."""
    n = mesh.face_normals().astype("<f4")
    p = mesh.vertices[mesh.faces].astype("<f4")
    rec = np.zeros(mesh.n_faces, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]))
    rec["n"], rec["v"] = n, p
    with open(path, "wb") as fh:
        fh.write(b"binary stl".ljust(80, b" "))
        fh.write(struct.pack("<I", mesh.n_faces))
        fh.write(rec.tobytes())


# ---------------------------------------------------------------------------
# Discrete operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FaceGradientOperator:
    """Sparse map from per-vertex scalars to per-cell gradient vectors.

    ``matrix`` has shape (3 * n_cells, n_vertices); rows ``3c..3c+2`` hold the
    gradient of cell ``c``. ``weights`` are the cell measures (area or volume).
    """

    matrix: sparse.csr_matrix
    weights: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.weights)

    def apply(self, values) -> np.ndarray:
        """Per-cell gradients, shape (n_cells, 3) (or (n_cells, 3, k) for k fields)."""
        g = self.matrix @ np.asarray(values, float)
        return g.reshape(self.n_cells, 3, *g.shape[1:])


@dataclass(frozen=True, eq=False)
class DiscreteOperators:
    """Cotangent (stiffness) Laplacian ``L`` (PSD sign) and lumped mass ``M``."""

    laplacian: sparse.csr_matrix
    mass: sparse.dia_matrix

    @property
    def mass_diagonal(self) -> np.ndarray:
        return self.mass.diagonal()


def _check_faces(vertices, faces) -> np.ndarray:
    areas = triangle_areas(vertices, faces)
    bad = np.flatnonzero(~(areas > DEGENERATE_AREA))
    if bad.size:
        raise MeshError(f"face {bad[0]} is degenerate (area {areas[bad[0]]:.3e} mm^2)")
    return areas


def triangle_gradients(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hat-function gradients per face corner, shape (m, 3, 3), and face areas."""
    p = vertices[faces]
    e0 = p[:, 2] - p[:, 1]  # opposite corner 0
    e1 = p[:, 0] - p[:, 2]
    e2 = p[:, 1] - p[:, 0]
    nrm = np.cross(e2, -e1)
    dbl = np.linalg.norm(nrm, axis=1)
    n = nrm / dbl[:, None]
    grads = np.stack([np.cross(n, e0), np.cross(n, e1), np.cross(n, e2)], axis=1) / dbl[:, None, None]
    return grads, 0.5 * dbl


def tet_gradients(vertices: np.ndarray, tets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric-coordinate gradients per tet corner, shape (T, 4, 3), and volumes."""
    p = vertices[tets]
    d = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)
    inv = np.linalg.inv(d)  # rows of inv^T are grads of lambda_1..3
    g123 = np.transpose(inv, (0, 2, 1))
    g0 = -g123.sum(axis=1, keepdims=True)
    vol = np.linalg.det(d) / 6.0
    return np.concatenate([g0, g123], axis=1), vol


def _gradient_matrix(cells: np.ndarray, grads: np.ndarray, n: int) -> sparse.csr_matrix:
    m, k = cells.shape
    rows = (3 * np.arange(m)[:, None, None] + np.arange(3)[None, None, :]).repeat(k, axis=1)
    cols = np.broadcast_to(cells[:, :, None], (m, k, 3))
    return sparse.csr_matrix((grads.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * m, n))


def _stiffness(cells: np.ndarray, grads: np.ndarray, weights: np.ndarray, n: int) -> sparse.csr_matrix:
    m, k = cells.shape
    local = np.einsum("cid,cjd->cij", grads, grads) * weights[:, None, None]
    rows = np.broadcast_to(cells[:, :, None], (m, k, k)).ravel()
    cols = np.broadcast_to(cells[:, None, :], (m, k, k)).ravel()
    off = rows != cols
    a = sparse.csr_matrix((local.ravel()[off], (rows[off], cols[off])), shape=(n, n))
    a = 0.5 * (a + a.T)
    # diagonal as negative off-diagonal row sum keeps L @ 1 == 0
    return (a - sparse.diags(np.asarray(a.sum(axis=1)).ravel())).tocsr()


def build_operators(mesh: TriMesh) -> tuple[FaceGradientOperator, DiscreteOperators]:
    """Face gradient ``G``, cotangent Laplacian ``L`` and lumped mass ``M``."""
    areas = _check_faces(mesh.vertices, mesh.faces)
    grads, _ = triangle_gradients(mesh.vertices, mesh.faces)
    n = mesh.n_vertices
    G = _gradient_matrix(mesh.faces, grads, n)
    L = _stiffness(mesh.faces, grads, areas, n)
    m = np.bincount(mesh.faces.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=n)
    return FaceGradientOperator(G, areas), DiscreteOperators(L, sparse.diags(m))


def build_tet_operators(mesh: TetMesh) -> tuple[FaceGradientOperator, DiscreteOperators]:
    """Volumetric analogue: per-tet gradient, linear FEM Laplacian, lumped mass."""
    grads, vol = tet_gradients(mesh.vertices, mesh.tets)
    n = mesh.n_vertices
    G = _gradient_matrix(mesh.tets, grads, n)
    L = _stiffness(mesh.tets, grads, vol, n)
    m = np.bincount(mesh.tets.ravel(), weights=np.repeat(vol / 4.0, 4), minlength=n)
    return FaceGradientOperator(G, vol), DiscreteOperators(L, sparse.diags(m))


def vertex_normals(mesh: TriMesh) -> np.ndarray:
    """Angle-weighted average of incident face normals, normalized."""
    v, f = mesh.vertices, mesh.faces
    used = np.zeros(len(v), bool)
    used[f.ravel()] = True
    if not used.all():
        raise MeshError(f"vertex {np.flatnonzero(~used)[0]} is isolated (no incident face)")
    p = v[f]
    fn = triangle_normals(v, f)
    acc = np.zeros_like(v)
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", a, b) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) + 1e-300
        )
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(acc, f[:, k], fn * ang[:, None])
    ln = np.linalg.norm(acc, axis=1)
    if np.any(ln == 0):
        raise MeshError(f"vertex {np.flatnonzero(ln == 0)[0]} has a vanishing normal")
    return acc / ln[:, None]


class TetLocator:
    """Point location in a tet mesh via a KD-tree over tet centroids."""

    def __init__(self, mesh: TetMesh, candidates: int = 24):
        self.mesh = mesh
        p = mesh.vertices[mesh.tets]
        self._tree = cKDTree(p.mean(axis=1))
        self._origin = p[:, 0]
        self._inv = np.linalg.inv(np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2))
        self._k = min(candidates, mesh.n_tets)

    def locate(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Containing tet and barycentric weights for each point.

        Points outside the mesh get the candidate tet whose smallest
        barycentric weight is largest, with weights clipped and renormalized.
        """
        pts = np.atleast_2d(np.asarray(points, float))
        _, cand = self._tree.query(pts, k=self._k)
        cand = cand.reshape(len(pts), -1)
        rel = pts[:, None, :] - self._origin[cand]
        lam123 = np.einsum("nkij,nkj->nki", self._inv[cand], rel)
        lam = np.concatenate([1.0 - lam123.sum(axis=2, keepdims=True), lam123], axis=2)
        best = np.argmax(lam.min(axis=2), axis=1)
        rows = np.arange(len(pts))
        tet = cand[rows, best]
        w = np.clip(lam[rows, best], 0.0, None)
        w /= w.sum(axis=1, keepdims=True)
        return tet, w
