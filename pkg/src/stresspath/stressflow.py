"""Per-slice stress-flow preprocessing.

Pipeline on one slice: project the maximum principal direction onto the
tangent plane and turn it by 90 degrees about the normal, give the field a
consistent orientation along its dominant axis, mark the critical vertices,
then replace every uncritical vector by a harmonic extension of the critical
boundary data.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse.csgraph import connected_components

from .meshcore import build_operators
from .numerics import solve_spd
from .slicing import Slice

logger = logging.getLogger(__name__)

STAGES = ("projected_orthogonal", "rectified", "preprocessed")


class FlowError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TangentFlow:
    vectors: np.ndarray
    stage: str
    valid: np.ndarray
    axis: np.ndarray | None = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown flow stage {self.stage!r}")

    def __len__(self):
        return len(self.vectors)

    def negated(self) -> "TangentFlow":
        return replace(self, vectors=-self.vectors)


@dataclass(frozen=True, eq=False)
class CriticalMask:
    mask: np.ndarray
    theta_a: float
    theta_s: float

    def __len__(self):
        return len(self.mask)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def _tangent(v: np.ndarray, n: np.ndarray) -> np.ndarray:
    return v - np.einsum("ij,ij->i", v, n)[:, None] * n


def project_vectors(f: np.ndarray, n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tangential projection followed by a quarter turn about ``n``.

    Returns unit vectors ``(u x n) / |u x n|`` and the validity mask; vertices
    whose tangential part vanishes (``|u| <= 1e-8 |f|``) are invalid and zero.
    """
    f = np.asarray(f, float)
    n = np.asarray(n, float)
    nn = np.einsum("ij,ij->i", n, n)
    u = f - (np.einsum("ij,ij->i", f, n) / nn)[:, None] * n
    c = np.cross(u, n)
    cn = np.linalg.norm(c, axis=1)
    valid = (np.linalg.norm(u, axis=1) > 1e-8 * np.linalg.norm(f, axis=1)) & (cn > 0)
    out = np.zeros_like(f)
    out[valid] = c[valid] / cn[valid, None]
    return out, valid


def project_orthogonal(slc: Slice) -> TangentFlow:
    vec, valid = project_vectors(slc.stress.max_direction, slc.normals)
    return TangentFlow(vec, "projected_orthogonal", valid)


def axis_scores(vectors: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Aggregate alignment per Cartesian axis: sum over vertices of |f . e_i|."""
    v = vectors if valid is None else vectors[valid]
    return np.abs(v).sum(axis=0)


def _pca_axis(v: np.ndarray) -> np.ndarray:
    w, e = np.linalg.eigh(v.T @ v)
    a = e[:, -1]
    return a * (1.0 if a[np.argmax(np.abs(a))] > 0 else -1.0)


def rectify(flow: TangentFlow, axis: str = "global") -> TangentFlow:
    """Flip vectors so all point to the non-negative side of the dominant axis.

    ``axis="global"`` picks the Cartesian axis with the largest
    :func:`axis_scores` (smallest index on ties); ``axis="pca"`` uses the
    dominant eigenvector of the vector scatter instead. Vectors exactly
    perpendicular to the axis are oriented by the next axes in turn, which
    keeps the result invariant under vertex-wise negation.
    """
    if flow.stage != "projected_orthogonal":
        if flow.stage == "rectified":
            return flow
        raise FlowError(f"cannot rectify a flow in stage {flow.stage!r}")
    valid = flow.valid
    if not valid.any():
        raise FlowError("all flow vectors are invalid; nothing to rectify")
    v = flow.vectors
    scores = axis_scores(v, valid)
    order = np.argsort(-scores, kind="stable")
    top = scores[order]
    if top[0] > 0 and (top[0] - top[1]) < 0.1 * top[0]:
        logger.info("dominant flow axis is ambiguous (scores %s); consider axis='pca'", np.round(scores, 3))
    if axis == "global":
        frame = np.eye(3)[order]
    elif axis == "pca":
        a = _pca_axis(v[valid])
        b = np.eye(3)[np.argmin(np.abs(a))]
        b = b - (b @ a) * a
        b /= np.linalg.norm(b)
        frame = np.stack([a, b, np.cross(a, b)])
    else:
        raise ValueError(f"unknown rectification axis mode {axis!r}")
    proj = v @ frame.T
    sign = np.ones(len(v))
    undecided = np.ones(len(v), bool)
    for k in range(3):
        s = np.sign(proj[:, k])
        hit = undecided & (s != 0)
        sign[hit] = s[hit]
        undecided &= s == 0
    out = v * sign[:, None]
    return TangentFlow(out, "rectified", valid.copy(), frame[0].copy())


def classify_critical(slc: Slice, theta_a: float = 3.0, theta_s: float = 0.1,
                      global_max: float | None = None) -> CriticalMask:
    """Critical where ``|s1|/|s3| > theta_a`` and ``|s1|/max|s1| > theta_s``.

    ``global_max`` should be the largest ``|s1|`` over the whole part; the
    slice maximum is used when it is omitted.
    """
    if not theta_a > 1:
        raise ValueError(f"theta_a must be > 1, got {theta_a}")
    if not 0 < theta_s < 1:
        raise ValueError(f"theta_s must lie in (0, 1), got {theta_s}")
    return CriticalMask(critical_from_values(slc.stress.values, theta_a, theta_s, global_max),
                        theta_a, theta_s)


def critical_from_values(values: np.ndarray, theta_a: float, theta_s: float,
                         global_max: float | None = None) -> np.ndarray:
    s1 = np.abs(values[:, 0])
    s3 = np.abs(values[:, 2])
    if global_max is None:
        global_max = float(s1.max()) if s1.size else 0.0
    if global_max <= 0:
        return np.zeros(len(values), bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        aniso = np.where(s3 > 0, s1 / np.where(s3 > 0, s3, 1.0), np.inf)
    return (s1 > 0) & (aniso > theta_a) & (s1 / global_max > theta_s)


def critical_components(slc: Slice, mask) -> int:
    """Number of connected critical regions (simple connectivity diagnostic)."""
    mask = np.asarray(mask.mask if isinstance(mask, CriticalMask) else mask, bool)
    if not mask.any():
        return 0
    adj = slc.surface.adjacency()[mask][:, mask]
    n, _ = connected_components(adj, directed=False)
    return int(n)


def dirichlet_energy(slc: Slice, vectors, laplacian=None) -> float:
    if laplacian is None:
        laplacian = build_operators(slc.surface)[1].laplacian
    v = np.asarray(vectors, float)
    return float(np.einsum("ik,ik->", v, laplacian @ v))


def extrapolate_uncritical(slc: Slice, flow: TangentFlow, mask, laplacian=None,
                           method: str = "cg", tol: float = 1e-10) -> TangentFlow:
    """Harmonic extension of the critical flow into the uncritical vertices.

    Each Cartesian component is solved as a Laplace problem on the uncritical
    vertices with the critical vectors as Dirichlet data; results are then
    projected onto the tangent plane and normalized. Invalid vertices are
    always treated as unknowns. Uncritical regions with no critical neighbour
    receive the slice's mean rectified vector.
    """
    if flow.stage not in ("rectified", "preprocessed"):
        raise FlowError(f"extrapolation needs a rectified flow, got stage {flow.stage!r}")
    mask = np.asarray(mask.mask if isinstance(mask, CriticalMask) else mask, bool)
    n = slc.surface.normals
    fixed = mask & flow.valid
    unknown = ~fixed
    out = flow.vectors.copy()
    if not unknown.any():
        return TangentFlow(out, "preprocessed", np.ones(len(out), bool), flow.axis)

    if laplacian is None:
        laplacian = build_operators(slc.surface)[1].laplacian
    L = laplacian.tocsr()
    uidx = np.flatnonzero(unknown)
    Luu = L[uidx][:, uidx]
    Luc = L[uidx][:, fixed]
    ncomp, label = connected_components(abs(Luu) > 0, directed=False)
    touches = np.asarray(abs(Luc).sum(axis=1)).ravel() > 0
    anchored = np.zeros(ncomp, bool)
    anchored[np.unique(label[touches])] = True

    solve_rows = anchored[label]
    if solve_rows.any():
        ridx = np.flatnonzero(solve_rows)
        A = Luu[ridx][:, ridx].tocsr()
        rhs = -(Luc[ridx] @ flow.vectors[fixed])
        sol = solve_spd(A, rhs, tol=tol, method=method)
        out[uidx[ridx]] = sol

    if not anchored.all():
        logger.warning("slice %d: %d uncritical region(s) have no critical boundary; filling with the mean flow",
                       slc.index, int((~anchored).sum()))
        mean = flow.vectors[flow.valid].mean(axis=0) if flow.valid.any() else np.zeros(3)
        if not np.linalg.norm(mean) > 0:
            if flow.axis is None:
                raise FlowError(f"slice {slc.index}: no usable flow to extrapolate from")
            mean = flow.axis
        out[uidx[~solve_rows]] = mean

    t = _tangent(out[uidx], n[uidx])
    tn = np.linalg.norm(t, axis=1)
    weak = ~(tn > 1e-12)
    if weak.any():
        fallback = flow.axis if flow.axis is not None else np.array([1.0, 0.0, 0.0])
        alt = _tangent(np.broadcast_to(fallback, (int(weak.sum()), 3)).copy(), n[uidx][weak])
        if np.any(np.linalg.norm(alt, axis=1) == 0):
            alt = np.cross(n[uidx][weak], np.eye(3)[np.argmin(np.abs(n[uidx][weak]), axis=1)])
        t[weak] = alt
        tn = np.linalg.norm(t, axis=1)
    out[uidx] = t / tn[:, None]
    return TangentFlow(out, "preprocessed", np.ones(len(out), bool), flow.axis)


@dataclass(frozen=True, eq=False)
class SliceFlow:
    projected: TangentFlow
    rectified: TangentFlow
    preprocessed: TangentFlow
    critical: CriticalMask
    components: int


def preprocess_slice(slc: Slice, theta_a: float = 3.0, theta_s: float = 0.1,
                     global_max: float | None = None, axis: str = "global",
                     method: str = "cg", tol: float = 1e-10, laplacian=None) -> SliceFlow:
    """Run projection, rectification, classification and extrapolation on one slice."""
    fperp = project_orthogonal(slc)
    frect = rectify(fperp, axis=axis)
    crit = classify_critical(slc, theta_a, theta_s, global_max)
    fp = extrapolate_uncritical(slc, frect, crit, laplacian=laplacian, method=method, tol=tol)
    return SliceFlow(fperp, frect, fp, crit, critical_components(slc, crit))


def write_flow_csv(flow: SliceFlow, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["vertex", "fperp_x", "fperp_y", "fperp_z", "fr_x", "fr_y", "fr_z",
                     "fp_x", "fp_y", "fp_z", "valid", "critical"])
        a, b, c = flow.projected.vectors, flow.rectified.vectors, flow.preprocessed.vectors
        for i in range(len(a)):
            wr.writerow([i, *(f"{x:.9g}" for x in a[i]), *(f"{x:.9g}" for x in b[i]),
                         *(f"{x:.9g}" for x in c[i]), int(flow.projected.valid[i]), int(flow.critical.mask[i])])


def flow_on_surface(slc: Slice, vectors, stage: str = "projected_orthogonal") -> TangentFlow:
    """Wrap an externally supplied per-vertex field (tests, diagnostics)."""
    v = np.asarray(vectors, float)
    valid = np.linalg.norm(v, axis=1) > 0
    return TangentFlow(v, stage, valid)

