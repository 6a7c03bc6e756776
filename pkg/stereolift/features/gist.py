import logging
from functools import lru_cache
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.signal import fftconvolve
from skimage.filters import gabor_kernel

from ..engine.errors import DataError
from ..imaging.raster import Raster, luma_array, resize_array_bilinear

logger = logging.getLogger("Stereolift.Features.Gist")

N_SCALES = 4
N_ORIENTATIONS = 8
GRID = 4
BASE_FREQUENCY = 0.3
MIN_IMAGE_SIDE = 8


class GistDescriptor(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def coerce(cls, v):
        arr = np.asarray(v, dtype=np.float64).ravel()
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("GIST entries must be finite and nonnegative")
        return arr

    @property
    def dim(self) -> int:
        return self.values.size


@lru_cache(maxsize=8)
def gabor_bank(n_scales: int = N_SCALES, n_orientations: int = N_ORIENTATIONS) -> Tuple[np.ndarray, ...]:
    kernels: List[np.ndarray] = []
    for s in range(n_scales):
        frequency = BASE_FREQUENCY / (2 ** s)
        for o in range(n_orientations):
            theta = np.pi * o / n_orientations
            kernels.append(np.asarray(gabor_kernel(frequency, theta=theta), dtype=np.complex128))
    return tuple(kernels)


def _cell_means(energy: np.ndarray, grid: int) -> np.ndarray:
    rows = np.array_split(np.arange(energy.shape[0]), grid)
    cols = np.array_split(np.arange(energy.shape[1]), grid)
    return np.array([energy[np.ix_(r, c)].mean() for r in rows for c in cols])


def compute_gist(img: Raster, size: int = 128, grid: int = GRID) -> GistDescriptor:
    """
    Oriented Gabor energy pooled over a grid, computed on luma.
    Layout: scale-major, then orientation, then grid cell (row-major).
    """
    if min(img.height, img.width) < MIN_IMAGE_SIDE:
        raise DataError(f"image {img.width}x{img.height} too small for GIST")

    luma = resize_array_bilinear(luma_array(img), size, size)
    luma = luma - luma.mean()
    luma = luma / (luma.std() + 1e-6)

    features = []
    for kernel in gabor_bank():
        pad = min(max(kernel.shape) // 2, size - 1)
        padded = np.pad(luma, pad, mode="reflect")
        response = fftconvolve(padded, kernel, mode="same")[pad:pad + size, pad:pad + size]
        features.append(_cell_means(np.abs(response), grid))
    return GistDescriptor(values=np.concatenate(features))
