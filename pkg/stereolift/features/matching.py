import numpy as np

from ..engine.errors import DimensionMismatchError
from .flow import FlowBlockFeatures
from .gist import GistDescriptor


def matching_score(
    g1: GistDescriptor,
    f1: FlowBlockFeatures,
    g2: GistDescriptor,
    f2: FlowBlockFeatures,
    omega: float = 0.5,
) -> float:
    """(1-ω)·‖G1-G2‖ + ω·‖F1-F2‖; lower is a better match."""
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must lie in [0, 1], got {omega}")
    if g1.dim != g2.dim:
        raise DimensionMismatchError(f"GIST dims differ: {g1.dim} vs {g2.dim}")
    if f1.values.size != f2.values.size:
        raise DimensionMismatchError(f"flow feature dims differ: {f1.values.size} vs {f2.values.size}")
    gist_term = float(np.linalg.norm(g1.values - g2.values))
    flow_term = float(np.linalg.norm(f1.values - f2.values))
    return (1.0 - omega) * gist_term + omega * flow_term
