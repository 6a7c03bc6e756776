"""
Depth-image-based stereo rendering: depth to disparity, saliency-aware
disparity smoothing, half-disparity splatting of left/right views and
the usual stereo encodings.
"""
import logging
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.ndimage import distance_transform_edt
from scipy.special import expit

from .engine.errors import DataError, DimensionMismatchError
from .imaging.raster import DepthMap, FlowField, Raster, forward_gradients, luma_array
from .inference.depth import flow_confidence, smoothness_weights
from .models import PenaltyKind, SolverConfig, StereoConfig
from .solver import RobustTerm, TermStack, flow_difference, grad_x, grad_y, identity, solve_quadratic

logger = logging.getLogger("Stereolift.Stereo")

REFERENCE_WIDTH = 640
REFERENCE_WMAX = 25.0
SALIENCY_MU = 0.01
SALIENCY_SIGMA = 0.002
SPLAT_SIGMA_MIN = 0.5


class DisparityField(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def coerce(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("disparity must be 2-D")
        if not np.all(np.isfinite(arr)):
            raise ValueError("disparity must be finite")
        return arr

    @property
    def shape(self):
        return self.values.shape


class SaliencyWeights(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def coerce(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if np.any(arr <= 0):
            raise ValueError("saliency weights must be positive")
        return arr


class StereoPair(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    left: Raster
    right: Raster
    shift: float = 0.0

    @model_validator(mode="after")
    def check_dims(self) -> "StereoPair":
        if self.left.data.shape != self.right.data.shape:
            raise ValueError("stereo views differ in size")
        return self


def default_wmax(width: int) -> float:
    return REFERENCE_WMAX * width / REFERENCE_WIDTH


def depth_to_disparity(depth: DepthMap, wmax: float, epsilon: float = 0.01) -> DisparityField:
    """W₀ = W_max / (D + ε). Holes must be filled beforehand."""
    if wmax <= 0:
        raise ValueError("wmax must be > 0")
    if not depth.valid.all():
        raise DataError("depth has holes; fill them before computing disparity")
    return DisparityField(values=wmax / (depth.values + epsilon))


def saliency_weights(image: Raster, w0: DisparityField, wmax: float) -> SaliencyWeights:
    """l = W₀/W_max + sigmoid((|∇L| − 0.01)/0.002)."""
    lum = luma_array(image)
    if lum.shape != w0.shape:
        raise DimensionMismatchError(f"image {lum.shape} and disparity {w0.shape} differ")
    gx, gy = forward_gradients(lum)
    grad = np.hypot(gx, gy)
    return SaliencyWeights(values=w0.values / wmax + expit((grad - SALIENCY_MU) / SALIENCY_SIGMA))


def optimize_disparity(
    w0: Sequence[DisparityField],
    saliency: Sequence[SaliencyWeights],
    frames: Sequence[Raster],
    lam: float = 10.0,
    mu: float = 10.0,
    flows: Optional[Sequence[FlowField]] = None,
    mu_l: float = 0.05,
    sigma_l: float = 0.01,
    solver: Optional[SolverConfig] = None,
) -> List[DisparityField]:
    """
    Minimise Σ l(W−W₀)² + λ(s_x|∇_xW|² + s_y|∇_yW|²) + μ·s_t|∇_flow W|²
    over the whole clip in one quadratic solve.
    """
    if not (len(w0) == len(saliency) == len(frames)) or not w0:
        raise DimensionMismatchError("disparity, saliency and frame counts differ")
    h, w = w0[0].shape
    t_count = len(w0)
    n = h * w * t_count

    target = np.concatenate([d.values.ravel() for d in w0])
    smooth = [smoothness_weights(f, mu_l, sigma_l) for f in frames]
    sx = np.concatenate([s.s_x.ravel() for s in smooth])
    sy = np.concatenate([s.s_y.ravel() for s in smooth])
    quad = PenaltyKind.QUADRATIC
    terms = [
        RobustTerm(name="data", op=identity(n), target=target,
                   weight=np.concatenate([s.values.ravel() for s in saliency]), penalty=quad),
        RobustTerm(name="smooth_x", op=grad_x(h, w, t_count), target=np.zeros(n), weight=sx, multiplier=lam, penalty=quad),
        RobustTerm(name="smooth_y", op=grad_y(h, w, t_count), target=np.zeros(n), weight=sy, multiplier=lam, penalty=quad),
    ]
    if t_count > 1 and mu > 0:
        if flows is None or len(flows) < t_count - 1:
            raise DimensionMismatchError(f"{t_count} frames need {t_count - 1} flows")
        flows = list(flows[: t_count - 1])
        s_t = np.concatenate([s.ravel() for s in flow_confidence(list(frames), flows, mu_l, sigma_l)])
        op = flow_difference(h, w, flows)
        terms.append(RobustTerm(name="temporal", op=op, target=np.zeros(op.n_rows),
                                weight=s_t[op.row_pixels], multiplier=mu, penalty=quad))

    x, result = solve_quadratic(TermStack(terms=terms, n=n), solver, x0=target)
    if not result.converged:
        logger.warning(f"⚠️ Disparity solve stopped at residual {result.residual:.3e}")
    return [DisparityField(values=v.reshape(h, w)) for v in np.split(x, t_count)]


# --- Rendering ---

def _splat(data: np.ndarray, displacement: np.ndarray, sigma_x: np.ndarray, priority: np.ndarray) -> np.ndarray:
    """Row-wise Gaussian splatting of every source pixel to x + displacement.

    σ_y = 0.5 truncated at 2σ leaves every blob inside its own row. A
    contribution is scaled by exp(priority − the largest priority reaching
    the same target pixel), so nearer pixels win without underflow.
    """
    h, w, c = data.shape
    tx = np.arange(w)[None, :] + displacement
    base = np.floor(tx).astype(np.int64)
    reach = int(np.ceil(2.0 * sigma_x.max())) + 1
    rows = np.broadcast_to(np.arange(h)[:, None], (h, w))

    def footprint(k: int):
        j = base + k
        dist = j - tx
        ok = (np.abs(dist) < 2.0 * sigma_x) & (j >= 0) & (j < w)
        return (rows * w + j)[ok], dist[ok], ok

    top = np.full(h * w, -np.inf)
    for k in range(-reach, reach + 1):
        idx, _, ok = footprint(k)
        np.maximum.at(top, idx, priority[ok])

    acc = np.zeros((h * w, c))
    wsum = np.zeros(h * w)
    for k in range(-reach, reach + 1):
        idx, dist, ok = footprint(k)
        if not idx.size:
            continue
        g = np.exp(-np.square(dist) / (2.0 * np.square(sigma_x[ok])) + priority[ok] - top[idx])
        wsum += np.bincount(idx, weights=g, minlength=h * w)
        for ch in range(c):
            acc[:, ch] += np.bincount(idx, weights=g * data[:, :, ch][ok], minlength=h * w)

    filled = wsum > 0
    out = np.zeros((h * w, c))
    out[filled] = acc[filled] / wsum[filled, None]
    out = out.reshape(h, w, c)
    filled = filled.reshape(h, w)
    if not filled.all() and filled.any():
        _, (iy, ix) = distance_transform_edt(~filled, return_indices=True)
        out = out[iy, ix]
    return out


def render_stereo(frame: Raster, disparity: DisparityField, window_shift: bool = True, z_order: float = 4.0) -> StereoPair:
    """
    Render left/right views at ±W/2. With the window shift both views move
    so the nearest pixel (max W) lands at zero displacement.
    """
    if frame.shape != disparity.shape:
        raise DimensionMismatchError(f"frame {frame.shape} and disparity {disparity.shape} differ")
    wd = disparity.values
    half = wd / 2.0
    w_near = float(wd.max())
    shift = w_near / 2.0 if window_shift else 0.0
    left_disp = half - shift
    right_disp = shift - half

    grad = np.abs(np.gradient(half, axis=1)) if wd.shape[1] > 1 else np.zeros_like(half)
    sigma_x = np.maximum(SPLAT_SIGMA_MIN, grad)
    priority = z_order * wd

    left = _splat(frame.data, left_disp, sigma_x, priority)
    right = _splat(frame.data, right_disp, sigma_x, priority)
    return StereoPair(left=Raster(data=left), right=Raster(data=right), shift=shift)


def _rgb(r: Raster) -> np.ndarray:
    return np.repeat(r.data, 3, axis=2) if r.channels == 1 else r.data


def compose_anaglyph(pair: StereoPair) -> Raster:
    """Red from the left view, green and blue from the right."""
    left, right = _rgb(pair.left), _rgb(pair.right)
    out = right.copy()
    out[:, :, 0] = left[:, :, 0]
    return Raster(data=out)


def compose_side_by_side(pair: StereoPair) -> Raster:
    return Raster(data=np.concatenate([pair.left.data, pair.right.data], axis=1))


def compose_interlaced(pair: StereoPair) -> Raster:
    """Even rows from the left view, odd rows from the right."""
    out = pair.left.data.copy()
    out[1::2] = pair.right.data[1::2]
    return Raster(data=out)
