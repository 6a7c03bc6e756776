"""
Coarse-to-fine variational optical flow and the block statistics used as
the motion half of the retrieval feature.

Flow convention: a pixel x in frame ``a`` moves to x + (u, v) in frame ``b``.
"""
import logging
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import ndimage

from ..engine.errors import DataError, DimensionMismatchError
from ..imaging.raster import FlowField, Raster, luma_array, resize_array_bilinear

logger = logging.getLogger("Stereolift.Features.Flow")

PYRAMID_LEVELS = 3
WARP_ITERS = 5
JACOBI_ITERS = 60
SMOOTHNESS = 2e-3  # squared regularization weight for unit-range intensities
PRESMOOTH_SIGMA = 1.0

_AVG_KERNEL = np.array([
    [1 / 12, 1 / 6, 1 / 12],
    [1 / 6, 0.0, 1 / 6],
    [1 / 12, 1 / 6, 1 / 12],
])


class FlowBlockFeatures(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    b: int

    @field_validator("values", mode="before")
    @classmethod
    def coerce(cls, v):
        return np.asarray(v, dtype=np.float64).ravel()

    @model_validator(mode="after")
    def check_length(self) -> "FlowBlockFeatures":
        if self.values.size != 8 * self.b * self.b:
            raise ValueError(f"expected {8 * self.b * self.b} flow features, got {self.values.size}")
        if np.any(self.values.reshape(-1, 8)[:, 1::2] < 0):
            raise ValueError("std entries must be nonnegative")
        return self


def _sample(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    h, w = img.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return ndimage.map_coordinates(img, [yy + v, xx + u], order=1, mode="nearest")


def _refine_level(a: np.ndarray, b: np.ndarray, u: np.ndarray, v: np.ndarray) -> tuple:
    ay, ax = np.gradient(a)
    for _ in range(WARP_ITERS):
        bw = _sample(b, u, v)
        by, bx = np.gradient(bw)
        ix = 0.5 * (ax + bx)
        iy = 0.5 * (ay + by)
        it = bw - a
        denom = SMOOTHNESS + ix * ix + iy * iy
        u0, v0 = u.copy(), v.copy()
        for _ in range(JACOBI_ITERS):
            ua = ndimage.correlate(u, _AVG_KERNEL, mode="nearest")
            va = ndimage.correlate(v, _AVG_KERNEL, mode="nearest")
            r = (ix * (ua - u0) + iy * (va - v0) + it) / denom
            u = ua - ix * r
            v = va - iy * r
    return u, v


def _pyramid(img: np.ndarray, levels: int) -> List[np.ndarray]:
    pyr = [img]
    for _ in range(levels - 1):
        prev = ndimage.gaussian_filter(pyr[-1], 1.0, mode="nearest")
        h, w = prev.shape
        pyr.append(resize_array_bilinear(prev, max(1, w // 2), max(1, h // 2)))
    return pyr


def flow_arrays(a: np.ndarray, b: np.ndarray) -> tuple:
    """Flow between two 2-D intensity arrays."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"flow inputs differ: {a.shape} vs {b.shape}")
    if np.array_equal(a, b):
        return np.zeros_like(a, dtype=np.float64), np.zeros_like(a, dtype=np.float64)

    a = ndimage.gaussian_filter(a.astype(np.float64), PRESMOOTH_SIGMA, mode="nearest")
    b = ndimage.gaussian_filter(b.astype(np.float64), PRESMOOTH_SIGMA, mode="nearest")
    levels = int(np.clip(np.floor(np.log2(min(a.shape) / 8.0)) + 1, 1, PYRAMID_LEVELS))
    pa, pb = _pyramid(a, levels), _pyramid(b, levels)

    u = np.zeros_like(pa[-1])
    v = np.zeros_like(pa[-1])
    for level in range(levels - 1, -1, -1):
        la, lb = pa[level], pb[level]
        if u.shape != la.shape:
            sy = la.shape[0] / u.shape[0]
            sx = la.shape[1] / u.shape[1]
            u = resize_array_bilinear(u, la.shape[1], la.shape[0]) * sx
            v = resize_array_bilinear(v, la.shape[1], la.shape[0]) * sy
        u, v = _refine_level(la, lb, u, v)
    return u, v


def compute_optical_flow(a: Raster, b: Raster) -> FlowField:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"flow inputs differ: {a.shape} vs {b.shape}")
    u, v = flow_arrays(luma_array(a), luma_array(b))
    return FlowField(u=u, v=v)


def clip_flows(frames: Sequence[Raster]) -> List[FlowField]:
    """Flow t→t+1 for every frame; the last frame gets the identity warp."""
    if not frames:
        return []
    flows = [compute_optical_flow(frames[t], frames[t + 1]) for t in range(len(frames) - 1)]
    h, w = frames[-1].shape
    flows.append(FlowField.zeros(h, w))
    return flows


def compute_flow_features(f: FlowField, b: int = 4) -> FlowBlockFeatures:
    if b < 1:
        raise ValueError("block grid must be >= 1")
    h, w = f.shape
    if h < b or w < b:
        raise DataError(f"flow field {w}x{h} smaller than {b}x{b} block grid")

    rows = np.array_split(np.arange(h), b)
    cols = np.array_split(np.arange(w), b)
    values = []
    for r in rows:
        for c in cols:
            bu = f.u[np.ix_(r, c)]
            bv = f.v[np.ix_(r, c)]
            for q in (bu, bv, bu * bu, bv * bv):
                values.extend((q.mean(), q.std()))
    return FlowBlockFeatures(values=np.array(values), b=b)


def clip_flow_features(frames: Sequence[Raster], b: int = 4) -> List[FlowBlockFeatures]:
    return [compute_flow_features(f, b) for f in clip_flows(frames)]
