import csv
import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict

from ..engine.errors import SolverError
from ..models import SolverConfig
from .pcg import PcgResult, Preconditioner, incomplete_cholesky, pcg_solve
from .terms import TermStack, normal_equations, objective_value

logger = logging.getLogger("Stereolift.Solver.IRLS")

# objective increases smaller than this (relative) count as round-off
_ROUNDOFF = 1e-12


class IrlsResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    solution: np.ndarray
    trace: List[float]
    pcg_iterations: List[int]
    iterations: int
    converged: bool
    regularized: bool = False


def _needs_tikhonov(lhs: sp.csr_matrix) -> bool:
    diag = lhs.diagonal()
    if np.any(diag <= 0):
        return True
    # pure difference operators annihilate constants: nothing anchors the solution
    anchor = lhs @ np.ones(lhs.shape[0])
    return not np.any(anchor > 1e-12 * max(1.0, float(diag.max())))


def _regularize(lhs: sp.csr_matrix, rhs: np.ndarray, x: np.ndarray, tau: float) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Proximal Tikhonov: minimizes surrogate + τ/2·‖x − x_t‖², so descent is kept."""
    return sp.csr_matrix(lhs + tau * sp.identity(lhs.shape[0])), rhs + tau * x


def _inner_solve(lhs, rhs, x0, cfg: SolverConfig) -> PcgResult:
    precond = incomplete_cholesky(lhs) if cfg.ic_fill == "zero" else Preconditioner.jacobi(lhs)
    return pcg_solve(lhs, rhs, precond, tol=cfg.pcg_tol, max_iters=cfg.pcg_max_iters, x0=x0)


class _ConvergenceLog:
    def __init__(self, path: Optional[str]):
        self.path = Path(path) if path else None
        self.rows: List[Tuple[int, float, int, float]] = []

    def add(self, it: int, objective: float, pcg_iters: int, residual: float):
        self.rows.append((it, objective, pcg_iters, residual))

    def flush(self):
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["iter", "objective", "pcg_iters", "residual"])
            writer.writerows(self.rows)


def irls_minimize(stack: TermStack, init: Optional[np.ndarray] = None, cfg: Optional[SolverConfig] = None) -> IrlsResult:
    """
    Majorize-minimize IRLS. Each outer step reweights robust rows by
    1/(2φ(r)), sums the normal equations over all terms and solves them
    with IC(0)-preconditioned CG warm-started at the current iterate.
    """
    cfg = cfg or SolverConfig()
    if not stack.active_terms():
        raise SolverError("term stack has no active terms")
    if init is None:
        init = stack.init if stack.init is not None else np.zeros(stack.n)
    x = np.array(init, dtype=np.float64).ravel()
    if x.size != stack.n:
        raise SolverError(f"initialization has {x.size} entries, stack has {stack.n} unknowns")

    eps = cfg.epsilon
    f = objective_value(stack, x, eps)
    trace = [f]
    pcg_iters: List[int] = []
    all_converged = True
    regularized = False
    log = _ConvergenceLog(cfg.convergence_log)
    log.add(0, f, 0, 0.0)

    iterations = 0
    for it in range(1, cfg.irls_iters + 1):
        lhs, rhs = normal_equations(stack, x, eps)
        if _needs_tikhonov(lhs):
            if not regularized:
                logger.warning(f"⚠️ Normal equations singular; adding Tikhonov {cfg.tikhonov:g}")
            regularized = True
        if regularized:
            lhs, rhs = _regularize(lhs, rhs, x, cfg.tikhonov)

        result = _inner_solve(lhs, rhs, x, cfg)
        pcg_iters.append(result.iterations)
        all_converged &= result.converged
        f_new = objective_value(stack, result.x, eps)

        if f_new > f + _ROUNDOFF * max(abs(f), 1.0):
            logger.warning(f"IRLS step {it} raised the objective ({f:.6e} -> {f_new:.6e}); keeping previous iterate")
            break

        iterations = it
        decrease = f - f_new
        x, f = result.x, f_new
        trace.append(f)
        log.add(it, f, result.iterations, result.residual)
        logger.debug(f"IRLS {it}: objective {f:.6e}, pcg {result.iterations} iters")

        if decrease <= cfg.early_exit_tol * max(abs(trace[-2]), 1e-300):
            break

    log.flush()
    return IrlsResult(
        solution=x,
        trace=trace,
        pcg_iterations=pcg_iters,
        iterations=iterations,
        converged=all_converged,
        regularized=regularized,
    )


def solve_quadratic(stack: TermStack, cfg: Optional[SolverConfig] = None, x0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, PcgResult]:
    """Exact minimum of a purely quadratic stack: one assembly, one PCG solve."""
    cfg = cfg or SolverConfig()
    if not stack.is_quadratic:
        raise SolverError("solve_quadratic needs a stack of quadratic terms")
    if not stack.active_terms():
        raise SolverError("term stack has no active terms")
    x = np.zeros(stack.n) if x0 is None else np.array(x0, dtype=np.float64).ravel()
    lhs, rhs = normal_equations(stack, x, cfg.epsilon)
    if _needs_tikhonov(lhs):
        logger.warning(f"⚠️ Normal equations singular; adding Tikhonov {cfg.tikhonov:g}")
        lhs, rhs = _regularize(lhs, rhs, x, cfg.tikhonov)
    result = _inner_solve(lhs, rhs, x, cfg)
    return result.x, result
