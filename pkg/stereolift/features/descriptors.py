import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy import ndimage

from ..engine.errors import DataError
from ..imaging.raster import Raster, luma_array

logger = logging.getLogger("Stereolift.Features.Descriptors")

N_BINS = 8
CELLS = 4
CELL_SIZE = 4
DESCRIPTOR_DIM = N_BINS * CELLS * CELLS
CLAMP = 0.2
ZERO_GUARD = 1e-8
GRADIENT_SIGMA = 1.0


class DenseDescriptorField(BaseModel):
    """H×W×d_s unit-normalized gradient-orientation histograms."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def coerce(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 3:
            raise ValueError("descriptor field must be H×W×d")
        return arr

    @property
    def shape(self):
        return self.data.shape[:2]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


def _shifted(arr: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """out[y, x] = arr[y+dy, x+dx] with edge replication."""
    h, w = arr.shape
    pad = max(abs(dy), abs(dx))
    padded = np.pad(arr, pad, mode="edge")
    return padded[pad + dy:pad + dy + h, pad + dx:pad + dx + w]


def _normalize(desc: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(desc, axis=2, keepdims=True)
    out = np.where(norm > ZERO_GUARD, desc / np.maximum(norm, ZERO_GUARD), 0.0)
    out = np.minimum(out, CLAMP)
    norm = np.linalg.norm(out, axis=2, keepdims=True)
    return np.where(norm > ZERO_GUARD, out / np.maximum(norm, ZERO_GUARD), 0.0)


def compute_dense_descriptors(img: Raster) -> DenseDescriptorField:
    """
    Stride-1 SIFT-like descriptors with a 16px support: 4×4 cells of
    4×4 pixels, 8 orientation bins with linear bin interpolation.
    """
    support = CELLS * CELL_SIZE
    if img.height < support or img.width < support:
        raise DataError(f"image {img.width}x{img.height} smaller than descriptor support {support}px")

    luma = ndimage.gaussian_filter(luma_array(img), GRADIENT_SIGMA, mode="nearest")
    gy, gx = np.gradient(luma)
    magnitude = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), 2 * np.pi) * (N_BINS / (2 * np.pi))
    lower = np.floor(angle).astype(np.intp) % N_BINS
    upper = (lower + 1) % N_BINS
    frac = angle - np.floor(angle)

    # per-bin magnitude maps, then 4×4 box sums covering [x-2, x+1]
    cell_maps = np.empty((N_BINS,) + luma.shape)
    for k in range(N_BINS):
        m = magnitude * ((lower == k) * (1.0 - frac) + (upper == k) * frac)
        cell_maps[k] = ndimage.uniform_filter(m, size=CELL_SIZE, mode="nearest") * (CELL_SIZE * CELL_SIZE)

    offsets = [CELL_SIZE * i - (support - CELL_SIZE) // 2 for i in range(CELLS)]  # -6,-2,2,6
    desc = np.empty(luma.shape + (DESCRIPTOR_DIM,))
    idx = 0
    for oy in offsets:
        for ox in offsets:
            for k in range(N_BINS):
                desc[:, :, idx] = _shifted(cell_maps[k], oy, ox)
                idx += 1
    return DenseDescriptorField(data=_normalize(desc))
