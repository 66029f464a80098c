"""Linear-elastic tet4 FEA and principal stress decomposition.

Unit system is mm / N / MPa: with lengths in mm and forces in N, stresses
come out in N/mm^2 and the Young's modulus must be given in the same unit.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .meshcore import TetMesh, tet_gradients
from .numerics import SolverError, solve_spd

logger = logging.getLogger(__name__)

STRESS_CSV_HEADER = ["node", "sxx", "syy", "szz", "sxy", "sxz", "syz"]
_AXES = {"x": 0, "y": 1, "z": 2}


class BoundaryConditionError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    young_modulus: float = 1.0
    poisson_ratio: float = 0.3

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise ValueError(f"young_modulus must be > 0, got {self.young_modulus}")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError(f"poisson_ratio must lie in (-1, 0.5), got {self.poisson_ratio}")

    def elasticity_matrix(self, unit_modulus: bool = False) -> np.ndarray:
        """Isotropic 6x6 matrix in Voigt order xx, yy, zz, yz, xz, xy (engineering shear)."""
        E = 1.0 if unit_modulus else self.young_modulus
        nu = self.poisson_ratio
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        D = np.zeros((6, 6))
        D[:3, :3] = lam
        D[np.arange(3), np.arange(3)] += 2 * mu
        D[np.arange(3, 6), np.arange(3, 6)] = mu
        return D


@dataclass
class BoundaryConditions:
    """Constrained degrees of freedom and nodal point loads.

    ``fixed`` holds ``(node, axes)`` pairs where ``axes`` is a string such as
    ``"xyz"``; ``displacements`` optionally maps ``(node, axis_index)`` to a
    prescribed value (default zero). ``loads`` holds ``(node, force_vector)``.
    """

    fixed: list = field(default_factory=list)
    loads: list = field(default_factory=list)
    displacements: dict = field(default_factory=dict)

    def constrained_dofs(self) -> tuple[np.ndarray, np.ndarray]:
        dofs = {}
        for node, axes in self.fixed:
            for a in axes:
                if a not in _AXES:
                    raise BoundaryConditionError(f"unknown axis {a!r} in fixed constraint")
                k = (int(node), _AXES[a])
                dofs[k] = float(self.displacements.get(k, 0.0))
        for k, val in self.displacements.items():
            dofs[(int(k[0]), int(k[1]))] = float(val)
        keys = sorted(dofs)
        idx = np.array([3 * n + a for n, a in keys], dtype=np.int64)
        vals = np.array([dofs[k] for k in keys])
        return idx, vals

    def load_vector(self, n_nodes: int) -> np.ndarray:
        f = np.zeros(3 * n_nodes)
        for node, force in self.loads:
            node = int(node)
            if not 0 <= node < n_nodes:
                raise BoundaryConditionError(f"loaded node {node} does not exist")
            f[3 * node : 3 * node + 3] += np.asarray(force, float)
        return f

    def validate(self, mesh: TetMesh) -> None:
        idx, _ = self.constrained_dofs()
        n = mesh.n_vertices
        if idx.size and (idx.min() < 0 or idx.max() >= 3 * n):
            raise BoundaryConditionError("constrained node does not exist")
        self.load_vector(n)
        # every rigid-body mode must move at least one constrained dof
        nodes, axes = idx // 3, idx % 3
        x = mesh.vertices[nodes] - mesh.vertices.mean(axis=0)
        modes = np.zeros((len(idx), 6))
        modes[np.arange(len(idx)), axes] = 1.0
        for k, w in enumerate(np.eye(3)):
            modes[:, 3 + k] = np.cross(w, x)[np.arange(len(idx)), axes]
        if len(idx) < 6 or np.linalg.matrix_rank(modes, tol=1e-9 * max(1.0, np.abs(x).max())) < 6:
            raise BoundaryConditionError(
                "constraints do not remove all rigid-body modes "
                "(fix at least three non-collinear nodes)"
            )


@dataclass(frozen=True, eq=False)
class StressTensorField:
    """Per-node symmetric Cauchy tensors stored as (sxx, syy, szz, sxy, sxz, syz)."""

    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, float)
        if c.ndim != 2 or c.shape[1] != 6:
            raise ValueError("stress components must have shape (n, 6)")
        if not np.all(np.isfinite(c)):
            raise ValueError("stress field has non-finite entries")
        object.__setattr__(self, "components", c)

    def __len__(self):
        return len(self.components)

    def matrices(self) -> np.ndarray:
        return components_to_matrices(self.components)

    @classmethod
    def from_matrices(cls, m) -> "StressTensorField":
        m = np.asarray(m, float)
        return cls(np.stack([m[:, 0, 0], m[:, 1, 1], m[:, 2, 2],
                             m[:, 0, 1], m[:, 0, 2], m[:, 1, 2]], axis=1))

    def scaled(self, factor: float) -> "StressTensorField":
        return StressTensorField(self.components * factor)


def components_to_matrices(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, float)
    m = np.empty((len(c), 3, 3))
    m[:, 0, 0], m[:, 1, 1], m[:, 2, 2] = c[:, 0], c[:, 1], c[:, 2]
    m[:, 0, 1] = m[:, 1, 0] = c[:, 3]
    m[:, 0, 2] = m[:, 2, 0] = c[:, 4]
    m[:, 1, 2] = m[:, 2, 1] = c[:, 5]
    return m


@dataclass(frozen=True, eq=False)
class PrincipalStressField:
    """Principal values ordered by descending magnitude, with unit directions.

    ``values[:, i]`` is sigma_(i+1); ``directions[:, i]`` is its unit vector.
    """

    values: np.ndarray
    directions: np.ndarray

    def __len__(self):
        return len(self.values)

    @property
    def max_direction(self) -> np.ndarray:
        return self.directions[:, 0]

    @property
    def sigma1(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def sigma3(self) -> np.ndarray:
        return self.values[:, 2]

    def tensors(self) -> StressTensorField:
        d = self.directions
        m = np.einsum("ni,nia,nib->nab", self.values, d, d)
        return StressTensorField.from_matrices(m)

    def subset(self, idx) -> "PrincipalStressField":
        return PrincipalStressField(self.values[idx], self.directions[idx])


def principal_decomposition(field: StressTensorField | np.ndarray) -> PrincipalStressField:
    """Eigen-decompose each tensor; order by |sigma| descending.

    Each direction is signed so that its largest-magnitude component is
    positive (first such component on ties).
    """
    comps = field.components if isinstance(field, StressTensorField) else np.asarray(field, float)
    m = components_to_matrices(comps)
    w, v = np.linalg.eigh(m)
    order = np.argsort(-np.abs(w), axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    d = np.take_along_axis(v, order[:, None, :], axis=2).transpose(0, 2, 1).copy()
    lead = np.argmax(np.abs(d), axis=2)
    sign = np.sign(np.take_along_axis(d, lead[..., None], axis=2))
    sign[sign == 0] = 1.0
    d *= sign
    return PrincipalStressField(w, d)


def _b_matrices(grads: np.ndarray) -> np.ndarray:
    """Strain-displacement matrices, shape (T, 6, 12), Voigt xx yy zz yz xz xy."""
    T = len(grads)
    B = np.zeros((T, 6, 12))
    gx, gy, gz = grads[:, :, 0], grads[:, :, 1], grads[:, :, 2]
    c = 3 * np.arange(4)
    B[:, 0, c] = gx
    B[:, 1, c + 1] = gy
    B[:, 2, c + 2] = gz
    B[:, 3, c + 1] = gz
    B[:, 3, c + 2] = gy
    B[:, 4, c] = gz
    B[:, 4, c + 2] = gx
    B[:, 5, c] = gy
    B[:, 5, c + 1] = gx
    return B


def _voigt_to_components(s: np.ndarray) -> np.ndarray:
    # (xx, yy, zz, yz, xz, xy) -> (xx, yy, zz, xy, xz, yz)
    return s[:, [0, 1, 2, 5, 4, 3]]


@dataclass(frozen=True, eq=False)
class ElasticSolution:
    displacements: np.ndarray
    stress: StressTensorField
    element_stress: np.ndarray
    reactions: np.ndarray


def solve_elasticity(mesh: TetMesh, mat: Material, bc: BoundaryConditions,
                     method: str = "direct", tol: float = 1e-10) -> tuple[np.ndarray, StressTensorField]:
    """Displacements (n, 3) and nodal Cauchy stress for a linear tet4 model.

    The system is assembled with unit modulus and displacements scaled by
    ``1/E`` afterwards, so with homogeneous Dirichlet data the stress field is
    bit-for-bit independent of the Young's modulus.
    """
    sol = solve_elasticity_full(mesh, mat, bc, method=method, tol=tol)
    return sol.displacements, sol.stress


def solve_elasticity_full(mesh: TetMesh, mat: Material, bc: BoundaryConditions,
                          method: str = "direct", tol: float = 1e-10) -> ElasticSolution:
    bc.validate(mesh)
    n = mesh.n_vertices
    grads, vol = tet_gradients(mesh.vertices, mesh.tets)
    B = _b_matrices(grads)
    D1 = mat.elasticity_matrix(unit_modulus=True)
    Ke = np.einsum("tki,kl,tlj->tij", B, D1, B) * vol[:, None, None]
    dof = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(-1, 12)
    rows = np.broadcast_to(dof[:, :, None], Ke.shape).ravel()
    cols = np.broadcast_to(dof[:, None, :], Ke.shape).ravel()
    K = sparse.csr_matrix((Ke.ravel(), (rows, cols)), shape=(3 * n, 3 * n))
    K = (0.5 * (K + K.T)).tocsr()

    f = bc.load_vector(n)
    cidx, cval = bc.constrained_dofs()
    free = np.ones(3 * n, bool)
    free[cidx] = False
    w = np.zeros(3 * n)
    w[cidx] = cval * mat.young_modulus
    Kff = K[free][:, free]
    rhs = f[free] - K[free][:, ~free] @ w[~free]
    try:
        w[free] = solve_spd(Kff, rhs, tol=tol, method=method)
    except SolverError as exc:
        raise SolverError(f"elasticity solve failed: {exc}", exc.residual) from exc

    reactions = K @ w - f
    applied = f.reshape(-1, 3).sum(axis=0)
    react = reactions.reshape(-1, 3)[np.unique(cidx // 3)].sum(axis=0)
    scale = max(np.abs(applied).max(), np.abs(react).max(), 1e-300)
    if np.abs(react + applied).max() > 1e-6 * scale and np.abs(applied).max() > 0:
        raise SolverError("global equilibrium violated: reactions do not balance applied loads")

    strain = np.einsum("tij,tj->ti", B, w[dof])
    elem = strain @ D1.T
    weights = np.repeat(vol, 4)
    acc = np.zeros((n, 6))
    for k in range(6):
        acc[:, k] = np.bincount(mesh.tets.ravel(), weights=np.repeat(elem[:, k], 4) * weights, minlength=n)
    wsum = np.bincount(mesh.tets.ravel(), weights=weights, minlength=n)
    nodal = acc / np.where(wsum > 0, wsum, 1.0)[:, None]
    return ElasticSolution(
        displacements=(w / mat.young_modulus).reshape(-1, 3),
        stress=StressTensorField(_voigt_to_components(nodal)),
        element_stress=_voigt_to_components(elem),
        reactions=reactions.reshape(-1, 3),
    )


def face_load(mesh: TetMesh, faces: np.ndarray, total_force) -> list:
    """Distribute a total force over boundary faces as area-consistent nodal loads."""
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        raise BoundaryConditionError("load face selection is empty")
    p = mesh.vertices[faces]
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    share = np.bincount(faces.ravel(), weights=np.repeat(area / 3.0, 3), minlength=mesh.n_vertices)
    share /= area.sum()
    total = np.asarray(total_force, float)
    return [(int(i), share[i] * total) for i in np.flatnonzero(share)]


def write_stress_csv(field: StressTensorField, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(STRESS_CSV_HEADER)
        for i, row in enumerate(field.components.tolist()):
            wr.writerow([i] + [repr(float(x)) for x in row])


def read_stress_csv(path, n_nodes: int | None = None) -> StressTensorField:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = [h.strip() for h in next(rd, [])]
        if header != STRESS_CSV_HEADER:
            raise ValueError(f"{path}: expected header {','.join(STRESS_CSV_HEADER)}")
        rows = [r for r in rd if r]
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    vals = np.array([[float(x) for x in r[1:7]] for r in rows])
    n = n_nodes if n_nodes is not None else len(rows)
    if len(ids) != n or not np.array_equal(np.sort(ids), np.arange(n)):
        raise ValueError(f"{path}: node column must list every node 0..{n - 1} exactly once")
    out = np.empty((n, 6))
    out[ids] = vals
    return StressTensorField(out)
