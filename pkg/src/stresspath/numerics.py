"""Sparse symmetric positive (semi-)definite solves and regularized least squares."""

from __future__ import annotations

import logging

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_EPS_SCALE = 1e-8


class SolverError(RuntimeError):
    """Iterative solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


def as_sparse(A, symmetric: bool = False) -> sparse.csr_matrix:
    """Convert to CSR, checking finiteness and (optionally) symmetry."""
    A = sparse.csr_matrix(A, dtype=float)
    if not np.all(np.isfinite(A.data)):
        raise ValueError("matrix has non-finite entries")
    if symmetric:
        scale = abs(A).max() if A.nnz else 0.0
        asym = abs(A - A.T).max() if A.nnz else 0.0
        if asym > 1e-10 * scale:
            raise ValueError(f"matrix flagged symmetric but |A - A^T|_inf = {asym:.3e}")
    return A


def pcg(A, b, tol=DEFAULT_TOL, maxiter=None, x0=None):
    """Conjugate gradient with Jacobi preconditioning.

    Returns ``(x, iterations, relative_residual)``. The residual is
    recomputed from scratch at exit so the reported value is the true one.
    """
    n = len(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    d = A.diagonal()
    inv_d = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)
    maxiter = maxiter or max(10 * n, 1000)
    x = np.zeros(n) if x0 is None else np.array(x0, float)
    r = b - A @ x
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    it = 0
    target = tol * bnorm
    while it < maxiter:
        if np.linalg.norm(r) <= target:
            # guard against drift of the recursive residual
            r = b - A @ x
            if np.linalg.norm(r) <= target:
                break
            z = inv_d * r
            p = z.copy()
            rz = r @ z
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    res = np.linalg.norm(b - A @ x) / bnorm
    return x, it, res


def solve_spd(A, b, tol: float = DEFAULT_TOL, method: str = "cg", maxiter=None):
    """Solve ``A x = b`` for symmetric positive (semi-)definite ``A``.

    Parameters
    ----------
    A : sparse matrix or array_like
        System matrix.
    b : array_like
        Right-hand side, shape (n,) or (n, k).
    tol : float
        Required relative residual ``|Ax - b| / |b|``.
    method : {"cg", "direct"}
        Jacobi-preconditioned CG, or a sparse LU factorization.

    Raises
    ------
    SolverError
        If the residual contract is not met; ``residual`` holds the value reached.
    """
    A = as_sparse(A)
    b = np.asarray(b, float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: A is {A.shape}, b has {b.shape[0]} rows")
    if b.ndim == 2:
        if method == "direct":
            return _direct(A, b, tol)
        return np.column_stack([solve_spd(A, b[:, j], tol, method, maxiter) for j in range(b.shape[1])])
    if method == "direct":
        return _direct(A, b, tol)
    if method != "cg":
        raise ValueError(f"unknown solver method {method!r}")
    x, it, res = pcg(A, b, tol, maxiter)
    if not res <= tol:
        raise SolverError(f"CG did not converge: relative residual {res:.3e} after {it} iterations", res)
    logger.debug("CG converged in %d iterations (residual %.2e)", it, res)
    return x


def _direct(A, b, tol):
    if not np.any(b):
        return np.zeros_like(b)
    try:
        lu = spla.splu(A.tocsc())
        x = lu.solve(b)
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    bn = np.linalg.norm(b, axis=0)
    res = np.linalg.norm(A @ x - b, axis=0) / np.where(bn > 0, bn, 1.0)
    res = float(np.max(res))
    if not np.all(np.isfinite(x)) or not res <= max(tol, 1e-8):
        raise SolverError(f"direct solve inaccurate: relative residual {res:.3e}", res)
    return x


def _rank_deficient(N) -> bool:
    try:
        u = np.abs(spla.splu(N.tocsc()).U.diagonal())
    except RuntimeError:
        return True
    return bool(u.size == 0 or u.min() <= 1e-12 * u.max())


def default_eps(G) -> float:
    """``1e-8`` times the largest diagonal entry of ``G^T G``."""
    G = sparse.csr_matrix(G)
    diag = np.asarray(G.multiply(G).sum(axis=0)).ravel()
    return DEFAULT_EPS_SCALE * float(diag.max()) if diag.size else 0.0


def solve_regularized_ls(G, target, eps: float | None = None, tol: float = DEFAULT_TOL,
                         method: str = "cg"):
    """Minimize ``|G phi - target|^2 + eps |phi|^2`` via the normal equations.

    Solves ``(G^T G + eps I) phi = G^T target`` with :func:`solve_spd`.
    ``eps=None`` selects :func:`default_eps`.
    """
    G = as_sparse(G)
    t = np.asarray(target, float)
    if t.shape[0] != G.shape[0]:
        raise ValueError(f"target has {t.shape[0]} rows, G has {G.shape[0]}")
    if eps is None:
        eps = default_eps(G)
    if eps < 0:
        raise ValueError("eps must be non-negative")
    N = (G.T @ G + eps * sparse.identity(G.shape[1], format="csr")).tocsr()
    rhs = G.T @ t
    if eps == 0 and _rank_deficient(N):
        raise SolverError("normal matrix G^T G is singular; use eps > 0")
    return solve_spd(N, rhs, tol=tol, method=method)
