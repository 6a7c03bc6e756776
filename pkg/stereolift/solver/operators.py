"""
Sparse linear operators over a stacked unknown vector.

Unknown layout for a clip of T frames at H×W: index = t·H·W + y·W + x.
Every operator keeps its assembled CSR matrix so the normal equations
can be formed directly; ``apply`` / ``adjoint`` are thin wrappers.
"""
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from ..engine.errors import DimensionMismatchError
from ..imaging.raster import FlowField


class OperatorKind(str, Enum):
    IDENTITY = "identity"
    GRAD_X = "grad_x"
    GRAD_Y = "grad_y"
    FLOW_DIFFERENCE = "flow_difference"
    SELECTION = "selection"
    COMPOSITION = "composition"


class LinearOperator:
    def __init__(
        self,
        kind: OperatorKind,
        matrix: sp.spmatrix,
        row_pixels: Optional[np.ndarray] = None,
        parts: Tuple["LinearOperator", ...] = (),
    ):
        self.kind = kind
        self.matrix = sp.csr_matrix(matrix)
        # unknown index each row is attached to (for per-pixel weights)
        self.row_pixels = row_pixels if row_pixels is not None else np.arange(self.matrix.shape[0])
        self.parts = parts

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.matrix.T @ y

    def __repr__(self) -> str:
        return f"LinearOperator({self.kind.value}, shape={self.shape})"


def identity(n: int) -> LinearOperator:
    return LinearOperator(OperatorKind.IDENTITY, sp.identity(n, format="csr"))


def _difference(h: int, w: int, frames: int, axis: int) -> sp.csr_matrix:
    n = h * w * frames
    idx = np.arange(n)
    x = idx % w
    y = (idx // w) % h
    if axis == 1:
        rows = np.flatnonzero(x < w - 1)
        step = 1
    else:
        rows = np.flatnonzero(y < h - 1)
        step = w
    # boundary rows stay empty: forward difference with replicated edge is 0
    r = np.concatenate([rows, rows])
    c = np.concatenate([rows, rows + step])
    v = np.concatenate([-np.ones(rows.size), np.ones(rows.size)])
    return sp.csr_matrix((v, (r, c)), shape=(n, n))


def grad_x(h: int, w: int, frames: int = 1) -> LinearOperator:
    return LinearOperator(OperatorKind.GRAD_X, _difference(h, w, frames, axis=1))


def grad_y(h: int, w: int, frames: int = 1) -> LinearOperator:
    return LinearOperator(OperatorKind.GRAD_Y, _difference(h, w, frames, axis=0))


def flow_difference(h: int, w: int, flows: Sequence[FlowField]) -> LinearOperator:
    """
    Row (t, p) = D_{t+1}[p + round(flow_t(p))] - D_t[p] for t < T-1.
    Rows whose target leaves the frame are dropped.
    """
    npix = h * w
    frames = len(flows) + 1
    n = npix * frames
    yy, xx = np.mgrid[0:h, 0:w]
    src_all, dst_all = [], []
    for t, flow in enumerate(flows):
        if flow.shape != (h, w):
            raise DimensionMismatchError(f"flow {t} has shape {flow.shape}, expected {(h, w)}")
        tx = xx + np.rint(flow.u).astype(np.intp)
        ty = yy + np.rint(flow.v).astype(np.intp)
        inside = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
        src = t * npix + (yy * w + xx)[inside]
        dst = (t + 1) * npix + (ty * w + tx)[inside]
        src_all.append(src)
        dst_all.append(dst)

    src = np.concatenate(src_all) if src_all else np.zeros(0, dtype=np.intp)
    dst = np.concatenate(dst_all) if dst_all else np.zeros(0, dtype=np.intp)
    m = src.size
    rows = np.arange(m)
    matrix = sp.csr_matrix(
        (np.concatenate([-np.ones(m), np.ones(m)]), (np.concatenate([rows, rows]), np.concatenate([src, dst]))),
        shape=(m, n),
    )
    return LinearOperator(OperatorKind.FLOW_DIFFERENCE, matrix, row_pixels=src)


def selection(mask: np.ndarray) -> LinearOperator:
    """Rows pick the unknowns where ``mask`` is true."""
    mask = np.asarray(mask, dtype=bool).ravel()
    picked = np.flatnonzero(mask)
    matrix = sp.csr_matrix((np.ones(picked.size), (np.arange(picked.size), picked)), shape=(picked.size, mask.size))
    return LinearOperator(OperatorKind.SELECTION, matrix, row_pixels=picked)


def frame_block(t: int, frames: int, npix: int) -> LinearOperator:
    mask = np.zeros(frames * npix, dtype=bool)
    mask[t * npix:(t + 1) * npix] = True
    return selection(mask)


def compose(outer: LinearOperator, inner: LinearOperator) -> LinearOperator:
    """outer ∘ inner."""
    if outer.n_cols != inner.n_rows:
        raise DimensionMismatchError(f"cannot compose {outer.shape} with {inner.shape}")
    row_pixels = inner.row_pixels[outer.row_pixels] if inner.row_pixels.size else outer.row_pixels
    return LinearOperator(
        OperatorKind.COMPOSITION,
        outer.matrix @ inner.matrix,
        row_pixels=row_pixels,
        parts=(outer, inner),
    )
