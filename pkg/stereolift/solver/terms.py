import logging
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..engine.errors import DimensionMismatchError
from ..models import PenaltyKind
from .operators import LinearOperator

logger = logging.getLogger("Stereolift.Solver.Terms")


def robust_phi(x, eps: float = 1e-4):
    """φ(x) = √(x² + ε), a smooth L1 surrogate."""
    if eps <= 0:
        raise ValueError("epsilon must be > 0")
    return np.sqrt(np.square(x) + eps)


class RobustTerm(BaseModel):
    """multiplier · Σ_rows weight · penalty(op·x − target)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    name: str
    op: LinearOperator
    target: np.ndarray
    weight: np.ndarray
    penalty: PenaltyKind = PenaltyKind.ROBUST
    multiplier: float = Field(1.0, ge=0.0)

    @field_validator("target", "weight", mode="before")
    @classmethod
    def coerce(cls, v):
        return np.asarray(v, dtype=np.float64).ravel()

    @model_validator(mode="after")
    def check_dims(self) -> "RobustTerm":
        rows = self.op.n_rows
        if self.target.size != rows or self.weight.size != rows:
            raise DimensionMismatchError(
                f"term '{self.name}': op has {rows} rows, target {self.target.size}, weight {self.weight.size}"
            )
        if np.any(self.weight < 0) or not np.all(np.isfinite(self.weight)):
            raise ValueError(f"term '{self.name}': weights must be finite and nonnegative")
        if not np.all(np.isfinite(self.target)):
            raise ValueError(f"term '{self.name}': targets must be finite")
        return self

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.op.apply(x) - self.target

    def value(self, x: np.ndarray, eps: float) -> float:
        r = self.residual(x)
        if self.penalty == PenaltyKind.ROBUST:
            return self.multiplier * float(np.dot(self.weight, robust_phi(r, eps)))
        return self.multiplier * float(np.dot(self.weight, r * r))

    def gradient(self, x: np.ndarray, eps: float) -> np.ndarray:
        r = self.residual(x)
        if self.penalty == PenaltyKind.ROBUST:
            return self.multiplier * self.op.adjoint(self.weight * r / robust_phi(r, eps))
        return 2.0 * self.multiplier * self.op.adjoint(self.weight * r)

    def majorizer_weights(self, x: np.ndarray, eps: float) -> np.ndarray:
        """Per-row c such that Σ c·r² (+const) majorizes the term at x."""
        if self.penalty == PenaltyKind.ROBUST:
            return self.multiplier * self.weight / (2.0 * robust_phi(self.residual(x), eps))
        return self.multiplier * self.weight


class TermStack(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    terms: List[RobustTerm]
    n: int = Field(ge=1)
    init: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def check_shared_size(self) -> "TermStack":
        for term in self.terms:
            if term.op.n_cols != self.n:
                raise DimensionMismatchError(f"term '{term.name}' acts on {term.op.n_cols} unknowns, stack has {self.n}")
        if self.init is not None and np.asarray(self.init).size != self.n:
            raise DimensionMismatchError("initialization size does not match unknowns")
        return self

    def active_terms(self) -> List[RobustTerm]:
        return [t for t in self.terms if t.multiplier > 0 and t.op.n_rows > 0]

    def names(self) -> List[str]:
        return [t.name for t in self.terms]

    @property
    def is_quadratic(self) -> bool:
        return all(t.penalty == PenaltyKind.QUADRATIC for t in self.active_terms())


def objective_value(stack: TermStack, x: np.ndarray, eps: float = 1e-4) -> float:
    return float(sum(t.value(x, eps) for t in stack.active_terms()))


def objective_gradient(stack: TermStack, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    g = np.zeros(stack.n)
    for t in stack.active_terms():
        g += t.gradient(x, eps)
    return g


def normal_equations(stack: TermStack, x: np.ndarray, eps: float = 1e-4) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Σ Aᵀ C A and Σ Aᵀ C b with C the majorizer weights at x."""
    lhs = sp.csr_matrix((stack.n, stack.n))
    rhs = np.zeros(stack.n)
    for t in stack.active_terms():
        c = t.majorizer_weights(x, eps)
        a = t.op.matrix
        lhs = lhs + (a.T @ sp.diags(c) @ a)
        rhs += a.T @ (c * t.target)
    return sp.csr_matrix(lhs), rhs
