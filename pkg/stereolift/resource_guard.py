import logging
from typing import Any, Dict

import psutil

from .engine.errors import ResourceLimitError

# sparse CSR entry: float64 value + int64 column index
_CSR_ENTRY_BYTES = 16
# working vectors held by IRLS/PCG at once (x, r, z, p, Ap, rhs, targets, weights, ...)
_VECTOR_COPIES = 12
# lhs, IC(0) factor and per-term matrices alive at peak
_MATRIX_COPIES = 3


class SolveMemoryGuard:
    """
    Refuses sparse solves whose estimated footprint exceeds a fraction of
    the memory currently available.
    """
    def __init__(self, memory_fraction: float = 0.6):
        if not 0.0 < memory_fraction <= 1.0:
            raise ValueError("memory_fraction must lie in (0, 1]")
        self.memory_fraction = memory_fraction
        self.logger = logging.getLogger("Stereolift.ResourceGuard")

    @staticmethod
    def estimate_solve_bytes(n_unknowns: int, n_terms: int = 10, nnz_per_row: int = 2) -> int:
        """Rough peak bytes of one IRLS solve over ``n_unknowns``."""
        term_entries = n_unknowns * n_terms * nnz_per_row
        # normal equations: 5-point stencil per frame plus the coherence/motion couplings
        lhs_entries = n_unknowns * 9
        matrices = (term_entries + _MATRIX_COPIES * lhs_entries) * _CSR_ENTRY_BYTES
        vectors = _VECTOR_COPIES * n_unknowns * 8
        return int(matrices + vectors)

    def available_bytes(self) -> int:
        return int(psutil.virtual_memory().available)

    def budget_bytes(self) -> int:
        return int(self.available_bytes() * self.memory_fraction)

    def check(self, n_unknowns: int, n_terms: int = 10, label: str = "solve") -> int:
        needed = self.estimate_solve_bytes(n_unknowns, n_terms)
        budget = self.budget_bytes()
        if needed > budget:
            self.logger.warning(f"🚨 {label}: needs ~{needed / 2**20:.1f} MiB, budget {budget / 2**20:.1f} MiB")
            raise ResourceLimitError(
                f"{label} needs ~{needed / 2**20:.1f} MiB but only {budget / 2**20:.1f} MiB may be used; "
                "lower the working resolution or split the clip"
            )
        self.logger.info(f"Memory check passed for {label}: ~{needed / 2**20:.1f} of {budget / 2**20:.1f} MiB")
        return needed

    def headroom(self, n_terms: int = 10) -> Dict[str, Any]:
        vm = psutil.virtual_memory()
        per_unknown = max(1, self.estimate_solve_bytes(1, n_terms))
        return {
            "total_mib": round(vm.total / 2**20, 1),
            "available_mib": round(vm.available / 2**20, 1),
            "memory_fraction": self.memory_fraction,
            "max_unknowns": int(self.budget_bytes() // per_unknown),
        }
