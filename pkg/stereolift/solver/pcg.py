import logging
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from numba import njit
from pydantic import BaseModel, ConfigDict

logger = logging.getLogger("Stereolift.Solver.PCG")

Operator = Union[sp.spmatrix, np.ndarray]


@njit(cache=False)
def _ic0_factor(indptr, indices, data):
    """Zero-fill Cholesky on a lower-triangular CSR pattern (sorted, diagonal last)."""
    n = indptr.size - 1
    lower = data.copy()
    diag_pos = np.empty(n, dtype=np.int64)
    for i in range(n):
        start = indptr[i]
        end = indptr[i + 1]
        if end == start or indices[end - 1] != i:
            return lower, False
        diag_pos[i] = end - 1
        for kk in range(start, end - 1):
            k = indices[kk]
            s = 0.0
            p = start
            q = indptr[k]
            qend = diag_pos[k]
            while p < kk and q < qend:
                cp = indices[p]
                cq = indices[q]
                if cp == cq:
                    s += lower[p] * lower[q]
                    p += 1
                    q += 1
                elif cp < cq:
                    p += 1
                else:
                    q += 1
            lower[kk] = (lower[kk] - s) / lower[diag_pos[k]]
        s = 0.0
        for kk in range(start, end - 1):
            s += lower[kk] * lower[kk]
        pivot = lower[end - 1] - s
        if not (pivot > 0.0) or not np.isfinite(pivot):
            return lower, False
        lower[end - 1] = np.sqrt(pivot)
    return lower, True


@njit(cache=False)
def _ic0_solve(indptr, indices, lower, r):
    """z = L⁻ᵀ L⁻¹ r."""
    n = r.size
    z = np.empty(n)
    for i in range(n):
        end = indptr[i + 1] - 1
        s = r[i]
        for kk in range(indptr[i], end):
            s -= lower[kk] * z[indices[kk]]
        z[i] = s / lower[end]
    for i in range(n - 1, -1, -1):
        end = indptr[i + 1] - 1
        z[i] = z[i] / lower[end]
        zi = z[i]
        for kk in range(indptr[i], end):
            z[indices[kk]] -= lower[kk] * zi
    return z


class Preconditioner:
    """Callable M⁻¹ approximation; ``kind`` is 'ic0', 'jacobi' or 'identity'."""

    def __init__(self, kind: str, apply: Callable[[np.ndarray], np.ndarray]):
        self.kind = kind
        self._apply = apply

    def __call__(self, r: np.ndarray) -> np.ndarray:
        return self._apply(r)

    @classmethod
    def identity(cls) -> "Preconditioner":
        return cls("identity", lambda r: r.copy())

    @classmethod
    def jacobi(cls, a: Operator) -> "Preconditioner":
        d = np.asarray(a.diagonal(), dtype=np.float64)
        inv = np.where(d > 0, 1.0 / np.where(d > 0, d, 1.0), 1.0)
        return cls("jacobi", lambda r: inv * r)


def incomplete_cholesky(a: Operator) -> Preconditioner:
    """
    IC(0) on the lower-triangular pattern of ``a``. A non-positive pivot
    falls back to the Jacobi preconditioner.
    """
    lower = sp.tril(sp.csr_matrix(a), format="csr")
    lower.sum_duplicates()
    lower.sort_indices()
    indptr = np.ascontiguousarray(lower.indptr, dtype=np.int64)
    indices = np.ascontiguousarray(lower.indices, dtype=np.int64)
    data = np.ascontiguousarray(lower.data, dtype=np.float64)

    factor, ok = _ic0_factor(indptr, indices, data)
    if not ok:
        logger.warning("⚠️ IC(0) pivot breakdown; falling back to Jacobi preconditioner")
        return Preconditioner.jacobi(a)
    return Preconditioner("ic0", lambda r: _ic0_solve(indptr, indices, factor, np.ascontiguousarray(r, dtype=np.float64)))


class PcgResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def pcg_solve(
    a: Operator,
    b: np.ndarray,
    precond: Optional[Preconditioner] = None,
    tol: float = 1e-6,
    max_iters: int = 2000,
    x0: Optional[np.ndarray] = None,
) -> PcgResult:
    """Preconditioned conjugate gradient; stops at ‖Ax−b‖/‖b‖ ≤ tol."""
    b = np.asarray(b, dtype=np.float64)
    precond = precond or Preconditioner.identity()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return PcgResult(x=np.zeros_like(b), iterations=0, residual=0.0, converged=True)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - a @ x
    res = float(np.linalg.norm(r)) / b_norm
    if res <= tol:
        return PcgResult(x=x, iterations=0, residual=res, converged=True)

    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    for k in range(1, max_iters + 1):
        ap = a @ p
        pap = float(p @ ap)
        if not pap > 0.0:
            logger.warning(f"PCG stopped at iteration {k}: operator not positive definite along search direction")
            return PcgResult(x=x, iterations=k, residual=res, converged=False)
        step = rz / pap
        x += step * p
        r -= step * ap
        res = float(np.linalg.norm(r)) / b_norm
        if res <= tol:
            return PcgResult(x=x, iterations=k, residual=res, converged=True)
        z = precond(r)
        rz_next = float(r @ z)
        p = z + (rz_next / rz) * p
        rz = rz_next

    logger.warning(f"PCG did not reach tol {tol:g} in {max_iters} iterations (residual {res:.3e})")
    return PcgResult(x=x, iterations=max_iters, residual=res, converged=False)
