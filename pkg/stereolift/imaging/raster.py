"""
Raster containers and the small set of pixel operations every other
module builds on: resampling, luma, forward-difference gradients and
depth-hole filling.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import ndimage

from ..engine.errors import DataError, DimensionMismatchError

logger = logging.getLogger("Stereolift.Imaging")

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class Raster(BaseModel):
    """H×W×C float64 grid stored row-major."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def coerce_data(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"raster must be 2-D or 3-D, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0 or arr.shape[2] == 0:
            raise ValueError("zero-sized raster")
        if not np.all(np.isfinite(arr)):
            raise ValueError("raster samples must be finite")
        return arr

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Raster":
        return cls(data=arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape[0], self.data.shape[1]

    def plane(self, c: int = 0) -> np.ndarray:
        return self.data[:, :, c]


class DepthMap(BaseModel):
    """Metric depth (1 channel) plus a validity mask; invalid samples hold 0."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    raster: Raster
    valid: np.ndarray

    @field_validator("valid", mode="before")
    @classmethod
    def coerce_valid(cls, v):
        return np.asarray(v, dtype=bool)

    @model_validator(mode="after")
    def check_depth(self) -> "DepthMap":
        if self.raster.channels != 1:
            raise ValueError("depth raster must have one channel")
        if self.valid.shape != self.raster.shape:
            raise ValueError(f"validity mask {self.valid.shape} does not match depth {self.raster.shape}")
        if np.any(self.raster.plane()[self.valid] <= 0):
            raise ValueError("valid depth pixels must be > 0")
        return self

    @classmethod
    def from_array(cls, values: np.ndarray, valid: Optional[np.ndarray] = None) -> "DepthMap":
        values = np.asarray(values, dtype=np.float64)
        finite = np.isfinite(values)
        mask = finite & (values > 0)
        if valid is not None:
            mask &= np.asarray(valid, dtype=bool)
        clean = np.where(mask, values, 0.0)
        return cls(raster=Raster(data=clean), valid=mask)

    @property
    def values(self) -> np.ndarray:
        return self.raster.plane()

    @property
    def shape(self) -> Tuple[int, int]:
        return self.raster.shape


class FlowField(BaseModel):
    """Per-pixel displacement (u right, v down) from one frame into the next."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    u: np.ndarray
    v: np.ndarray

    @field_validator("u", "v", mode="before")
    @classmethod
    def coerce_component(cls, comp):
        arr = np.asarray(comp, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("flow components must be 2-D")
        if not np.all(np.isfinite(arr)):
            raise ValueError("flow must be finite")
        return arr

    @model_validator(mode="after")
    def check_shapes(self) -> "FlowField":
        if self.u.shape != self.v.shape:
            raise ValueError("flow components differ in shape")
        return self

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(u=np.zeros((height, width)), v=np.zeros((height, width)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.u.shape

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)


# --- Resampling ---

def _axis_samples(n_in: int, n_out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = n_in / n_out
    pos = (np.arange(n_out) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize_array_bilinear(arr: np.ndarray, w: int, h: int) -> np.ndarray:
    """Bilinear resize of an H×W(×C) array with pixel-center alignment."""
    if w < 1 or h < 1:
        raise ValueError("target size must be at least 1×1")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("zero-sized input")
    if arr.shape[0] == h and arr.shape[1] == w:
        return arr.copy()

    y0, y1, ty = _axis_samples(arr.shape[0], h)
    x0, x1, tx = _axis_samples(arr.shape[1], w)
    extra = (None,) * (arr.ndim - 2)
    tx = tx[(None, slice(None)) + extra]
    ty = ty[(slice(None), None) + extra]

    # a + t*(b-a) keeps constant inputs exact
    top = arr[y0][:, x0] + tx * (arr[y0][:, x1] - arr[y0][:, x0])
    bottom = arr[y1][:, x0] + tx * (arr[y1][:, x1] - arr[y1][:, x0])
    return top + ty * (bottom - top)


def resize_bilinear(r: Raster, w: int, h: int, anti_alias: bool = False) -> Raster:
    data = r.data
    if anti_alias and (w < r.width or h < r.height):
        sigma_y = max(0.0, (r.height / h - 1.0) / 2.0)
        sigma_x = max(0.0, (r.width / w - 1.0) / 2.0)
        data = ndimage.gaussian_filter(data, sigma=(sigma_y, sigma_x, 0), mode="nearest")
    return Raster(data=resize_array_bilinear(data, w, h))


def resize_nearest_array(arr: np.ndarray, w: int, h: int) -> np.ndarray:
    if w < 1 or h < 1:
        raise ValueError("target size must be at least 1×1")
    rows = np.minimum(((np.arange(h) + 0.5) * arr.shape[0] / h).astype(np.intp), arr.shape[0] - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * arr.shape[1] / w).astype(np.intp), arr.shape[1] - 1)
    return arr[rows][:, cols]


def resize_nearest(r: Raster, w: int, h: int) -> Raster:
    return Raster(data=resize_nearest_array(r.data, w, h))


def resize_depth(d: DepthMap, w: int, h: int) -> DepthMap:
    """Nearest-neighbour resize so holes never blend into valid depth."""
    return DepthMap.from_array(
        resize_nearest_array(d.values, w, h),
        resize_nearest_array(d.valid, w, h),
    )


# --- Color and gradients ---

def rgb_to_luma(r: Raster) -> Raster:
    if r.channels != 3:
        raise DimensionMismatchError(f"rgb_to_luma needs 3 channels, got {r.channels}")
    return Raster(data=np.clip(r.data @ LUMA_WEIGHTS, 0.0, 1.0))


def luma_array(r: Raster) -> np.ndarray:
    """2-D luma plane of an RGB or single-channel raster."""
    if r.channels == 1:
        return r.plane()
    return rgb_to_luma(r).plane()


def forward_gradients(f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    gx = np.zeros_like(f, dtype=np.float64)
    gy = np.zeros_like(f, dtype=np.float64)
    gx[:, :-1] = f[:, 1:] - f[:, :-1]
    gy[:-1, :] = f[1:, :] - f[:-1, :]
    return gx, gy


def spatial_gradients(r: Raster) -> Tuple[Raster, Raster]:
    if r.channels != 1:
        raise DimensionMismatchError(f"spatial_gradients needs 1 channel, got {r.channels}")
    gx, gy = forward_gradients(r.plane())
    return Raster(data=gx), Raster(data=gy)


# --- Hole filling ---

def _fill_rows(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    h, w = values.shape
    cols = np.broadcast_to(np.arange(w), (h, w))

    # left-to-right: carry the last valid sample
    last = np.where(valid, cols, -1)
    np.maximum.accumulate(last, axis=1, out=last)

    # right-to-left for leading holes: first valid sample of the row
    first = np.where(valid, cols, w)
    first = np.minimum.accumulate(first[:, ::-1], axis=1)[:, ::-1]

    src = np.where(last >= 0, last, first)
    src = np.clip(src, 0, w - 1)
    return np.take_along_axis(values, src, axis=1)


def fill_depth_holes(d: DepthMap) -> DepthMap:
    values, valid = d.values, d.valid
    if not valid.any():
        raise DataError("cannot fill a fully invalid depth map")
    if valid.all():
        return d

    filled = _fill_rows(values, valid)
    row_ok = valid.any(axis=1)
    if not row_ok.all():
        good = np.flatnonzero(row_ok)
        for r in np.flatnonzero(~row_ok):
            # nearest valid row; ties resolve upward
            nearest = good[np.argmin(np.abs(good - r) * 2 + (good > r))]
            filled[r] = filled[nearest]
    return DepthMap.from_array(filled, np.ones_like(valid))
