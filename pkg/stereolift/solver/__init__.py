from .operators import (
    LinearOperator,
    OperatorKind,
    identity,
    grad_x,
    grad_y,
    flow_difference,
    selection,
    frame_block,
    compose,
)
from .terms import RobustTerm, TermStack, robust_phi, objective_value, objective_gradient, normal_equations
from .pcg import Preconditioner, PcgResult, incomplete_cholesky, pcg_solve
from .irls import IrlsResult, irls_minimize, solve_quadratic

__all__ = [
    "LinearOperator",
    "OperatorKind",
    "identity",
    "grad_x",
    "grad_y",
    "flow_difference",
    "selection",
    "frame_block",
    "compose",
    "RobustTerm",
    "TermStack",
    "robust_phi",
    "objective_value",
    "objective_gradient",
    "normal_equations",
    "Preconditioner",
    "PcgResult",
    "incomplete_cholesky",
    "pcg_solve",
    "IrlsResult",
    "irls_minimize",
    "solve_quadratic",
]
