"""
Dense descriptor alignment between a query frame and a retrieved
candidate, warping of candidate depth / depth gradients into the query
frame, and per-pixel confidence of each warp.

A WarpField is a backward map: query pixel (y, x) samples the candidate
at (src_y[y, x], src_x[y, x]).
"""
import logging
import struct
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.special import expit

from .engine.errors import DataError, DimensionMismatchError
from .features.descriptors import DenseDescriptorField
from .imaging.raster import DepthMap, Raster, forward_gradients
from .models import AlignmentConfig, WarpMode

logger = logging.getLogger("Stereolift.Correspondence")

WARP_DUMP_MAGIC = b"SLWD"
CONFIDENCE_FLOOR = 1e-12


class WarpField(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    src_x: np.ndarray
    src_y: np.ndarray
    valid: np.ndarray

    @field_validator("src_x", "src_y", mode="before")
    @classmethod
    def coerce_coords(cls, v):
        return np.asarray(v, dtype=np.intp)

    @field_validator("valid", mode="before")
    @classmethod
    def coerce_valid(cls, v):
        return np.asarray(v, dtype=bool)

    @model_validator(mode="after")
    def check_shapes(self) -> "WarpField":
        if not (self.src_x.shape == self.src_y.shape == self.valid.shape):
            raise ValueError("warp components differ in shape")
        return self

    @classmethod
    def identity(cls, height: int, width: int) -> "WarpField":
        yy, xx = np.mgrid[0:height, 0:width]
        return cls(src_x=xx, src_y=yy, valid=np.ones((height, width), dtype=bool))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.src_x.shape

    def offsets(self) -> Tuple[np.ndarray, np.ndarray]:
        h, w = self.shape
        yy, xx = np.mgrid[0:h, 0:w]
        return self.src_x - xx, self.src_y - yy


class ConfidenceMap(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    weights: np.ndarray

    @field_validator("weights", mode="before")
    @classmethod
    def coerce(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if np.any(arr <= 0) or np.any(arr >= 1):
            raise ValueError("confidence weights must lie in (0, 1)")
        return arr


class WarpedSample(BaseModel):
    """Warped raster plus per-channel validity (H×W×C)."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: Raster
    valid: np.ndarray


# --- Alignment ---

def _displacements(radius: int) -> np.ndarray:
    """All (dy, dx) in the window, ordered so ties prefer small moves."""
    d = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    d.sort(key=lambda p: (abs(p[0]) + abs(p[1]), p[0], p[1]))
    return np.array(d, dtype=np.intp)


def _downsample(desc: np.ndarray) -> np.ndarray:
    h, w = desc.shape[:2]
    h2, w2 = max(1, h // 2), max(1, w // 2)
    trimmed = desc[: h2 * 2, : w2 * 2]
    if h < 2 or w < 2:
        return desc.copy()
    return trimmed.reshape(h2, 2, w2, 2, -1).mean(axis=(1, 3))


def _truncated_l1(fy, fx, ny, nx, truncation):
    return np.minimum(np.abs(fy - ny) + np.abs(fx - nx), truncation)


def _neighbour_flow(f: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """(values, present) for the 4-neighbours of every pixel."""
    h, w = f.shape
    out = []
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        vals = np.zeros_like(f)
        present = np.zeros((h, w), dtype=bool)
        ys = slice(max(0, -dy), h - max(0, dy))
        yd = slice(max(0, dy), h - max(0, -dy))
        xs = slice(max(0, -dx), w - max(0, dx))
        xd = slice(max(0, dx), w - max(0, -dx))
        vals[ys, xs] = f[yd, xd]
        present[ys, xs] = True
        out.append((vals, present))
    return out


def _align_level(q: np.ndarray, c: np.ndarray, init_fy: np.ndarray, init_fx: np.ndarray, cfg: AlignmentConfig) -> Tuple[np.ndarray, np.ndarray]:
    h, w = q.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    disps = _displacements(cfg.radius)
    n_labels = len(disps)

    cand_fy = init_fy[None] + disps[:, 0, None, None]
    cand_fx = init_fx[None] + disps[:, 1, None, None]
    ty = yy[None] + cand_fy
    tx = xx[None] + cand_fx
    inside = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)

    data = np.full((n_labels, h, w), np.inf)
    for k in range(n_labels):
        ok = inside[k]
        sy = np.clip(ty[k], 0, h - 1)
        sx = np.clip(tx[k], 0, w - 1)
        cost = np.abs(q - c[sy, sx]).sum(axis=2)
        data[k] = np.where(ok, cost, np.inf)

    # the zero-offset label of init is always a fallback
    fallback = ~np.isfinite(data).any(axis=0)
    if fallback.any():
        data[0][fallback] = 0.0

    label = np.argmin(data, axis=0)
    lam = cfg.smoothness_scale * q.shape[2]
    parity = (yy + xx) % 2
    for _ in range(cfg.sweeps):
        for colour in (0, 1):
            fy = np.take_along_axis(cand_fy, label[None], axis=0)[0]
            fx = np.take_along_axis(cand_fx, label[None], axis=0)[0]
            neigh_y = _neighbour_flow(fy)
            neigh_x = _neighbour_flow(fx)
            total = data.copy()
            for (ny, present), (nx, _) in zip(neigh_y, neigh_x):
                total += lam * present[None] * _truncated_l1(cand_fy, cand_fx, ny[None], nx[None], cfg.truncation)
            best = np.argmin(total, axis=0)
            update = parity == colour
            label = np.where(update, best, label)

    fy = np.take_along_axis(cand_fy, label[None], axis=0)[0]
    fx = np.take_along_axis(cand_fx, label[None], axis=0)[0]
    return fy, fx


def align_dense(query: DenseDescriptorField, cand: DenseDescriptorField, cfg: AlignmentConfig = None) -> WarpField:
    """
    Coarse-to-fine discrete alignment minimising descriptor L1 cost plus a
    truncated-L1 displacement regulariser (ICM sweeps, checkerboard order).
    """
    cfg = cfg or AlignmentConfig()
    if query.shape != cand.shape or query.dim != cand.dim:
        raise DimensionMismatchError(f"descriptor fields differ: {query.data.shape} vs {cand.data.shape}")

    pyr_q = [query.data]
    pyr_c = [cand.data]
    for _ in range(cfg.levels - 1):
        if min(pyr_q[-1].shape[:2]) < 8:
            break
        pyr_q.append(_downsample(pyr_q[-1]))
        pyr_c.append(_downsample(pyr_c[-1]))

    fy = np.zeros(pyr_q[-1].shape[:2], dtype=np.intp)
    fx = np.zeros_like(fy)
    for level in range(len(pyr_q) - 1, -1, -1):
        q, c = pyr_q[level], pyr_c[level]
        h, w = q.shape[:2]
        if fy.shape != (h, w):
            rows = np.minimum(np.arange(h) // 2, fy.shape[0] - 1)
            cols = np.minimum(np.arange(w) // 2, fy.shape[1] - 1)
            fy = fy[rows][:, cols] * 2
            fx = fx[rows][:, cols] * 2
        fy, fx = _align_level(q, c, fy, fx, cfg)

    h, w = query.shape
    yy, xx = np.mgrid[0:h, 0:w]
    src_y = yy + fy
    src_x = xx + fx
    valid = (src_y >= 0) & (src_y < h) & (src_x >= 0) & (src_x < w)
    return WarpField(src_x=np.clip(src_x, 0, w - 1), src_y=np.clip(src_y, 0, h - 1), valid=valid)


# --- Warping ---

def apply_warp(w: WarpField, c: DepthMap, mode: WarpMode = WarpMode.VALUE, transform=None) -> WarpedSample:
    """
    Sample the candidate at the warp's source pixels (nearest neighbour).
    Gradient mode differentiates the candidate first, then samples.
    ``transform`` maps depth into the optimisation domain before either step.
    """
    if w.shape != c.shape:
        raise DimensionMismatchError(f"warp {w.shape} and candidate {c.shape} differ")
    values = np.where(c.valid, c.values, 1.0)
    if transform is not None:
        values = transform(values)
    valid = c.valid
    sy, sx = w.src_y, w.src_x

    if mode == WarpMode.VALUE:
        out = np.where(c.valid, values, 0.0)[sy, sx]
        ok = w.valid & valid[sy, sx]
        return WarpedSample(values=Raster(data=np.where(ok, out, 0.0)), valid=ok[:, :, None])

    gx, gy = forward_gradients(values)
    ok_x = valid.copy()
    ok_x[:, :-1] &= valid[:, 1:]
    ok_y = valid.copy()
    ok_y[:-1, :] &= valid[1:, :]
    sgx = np.where(ok_x, gx, 0.0)[sy, sx]
    sgy = np.where(ok_y, gy, 0.0)[sy, sx]
    vx = w.valid & ok_x[sy, sx]
    vy = w.valid & ok_y[sy, sx]
    data = np.stack([np.where(vx, sgx, 0.0), np.where(vy, sgy, 0.0)], axis=2)
    return WarpedSample(values=Raster(data=data), valid=np.stack([vx, vy], axis=2))


def warp_descriptors(cand: DenseDescriptorField, w: WarpField) -> np.ndarray:
    return cand.data[w.src_y, w.src_x]


def confidence_from_distance(distance: np.ndarray, mu_s: float = 0.5, sigma_s: float = 0.01) -> np.ndarray:
    """w = 1 / (1 + exp((d − μ_s)/σ_s)), kept strictly inside (0, 1)."""
    w = expit(-(np.asarray(distance, dtype=np.float64) - mu_s) / sigma_s)
    return np.clip(w, CONFIDENCE_FLOOR, 1.0 - CONFIDENCE_FLOOR)


def warp_confidence(
    query: DenseDescriptorField,
    cand: DenseDescriptorField,
    w: WarpField,
    mu_s: float = 0.5,
    sigma_s: float = 0.01,
) -> ConfidenceMap:
    if query.shape != w.shape or cand.shape != w.shape:
        raise DimensionMismatchError("descriptor fields and warp differ in shape")
    warped = warp_descriptors(cand, w)
    distance = np.linalg.norm(query.data - warped, axis=2)
    weights = confidence_from_distance(distance, mu_s, sigma_s)
    weights = np.where(w.valid, weights, CONFIDENCE_FLOOR)
    return ConfidenceMap(weights=weights)


# --- Warp dump ---

def write_warp_dump(path: Union[str, Path], w: WarpField) -> Path:
    """magic, u32 width, u32 height, int16 dx[], int16 dy[], packed validity bits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h, wd = w.shape
    dx, dy = w.offsets()
    with open(path, "wb") as f:
        f.write(WARP_DUMP_MAGIC)
        f.write(struct.pack("<II", wd, h))
        f.write(dx.astype("<i2").tobytes())
        f.write(dy.astype("<i2").tobytes())
        f.write(np.packbits(w.valid.ravel()).tobytes())
    return path


def read_warp_dump(path: Union[str, Path]) -> WarpField:
    raw = Path(path).read_bytes()
    if raw[:4] != WARP_DUMP_MAGIC:
        raise DataError(f"not a warp dump: {path}")
    wd, h = struct.unpack("<II", raw[4:12])
    n = wd * h
    offset = 12
    dx = np.frombuffer(raw, dtype="<i2", count=n, offset=offset).reshape(h, wd)
    offset += 2 * n
    dy = np.frombuffer(raw, dtype="<i2", count=n, offset=offset).reshape(h, wd)
    offset += 2 * n
    valid = np.unpackbits(np.frombuffer(raw, dtype=np.uint8, offset=offset))[:n].reshape(h, wd).astype(bool)
    yy, xx = np.mgrid[0:h, 0:wd]
    return WarpField(src_x=xx + dx, src_y=yy + dy, valid=valid)
