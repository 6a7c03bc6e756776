import logging
from typing import Optional, Tuple

import numpy as np

from ..engine.errors import DataError, DimensionMismatchError
from ..imaging.raster import DepthMap, Raster
from ..models import ErrorReport

logger = logging.getLogger("Stereolift.Harness.Metrics")

PSNR_CAP = 99.0
DELTA_BASE = 1.25


def depth_errors(pred: DepthMap, truth: DepthMap) -> ErrorReport:
    """
    rel, log10 and RMS (metres) plus δ-threshold accuracies, over pixels
    where the truth is valid and the prediction positive.
    """
    if pred.shape != truth.shape:
        raise DimensionMismatchError(f"prediction {pred.shape} and truth {truth.shape} differ")
    mask = truth.valid & pred.valid
    n = int(mask.sum())
    if n == 0:
        raise DataError("no valid pixels to evaluate")
    d = pred.values[mask]
    g = truth.values[mask]

    ratio = np.maximum(d / g, g / d)
    return ErrorReport(
        rel=float(np.mean(np.abs(d - g) / g)),
        log10=float(np.mean(np.abs(np.log10(d) - np.log10(g)))),
        rms=float(np.sqrt(np.mean(np.square(d - g)))),
        pixel_count=n,
        delta1=float(np.mean(ratio < DELTA_BASE)),
        delta2=float(np.mean(ratio < DELTA_BASE ** 2)),
        delta3=float(np.mean(ratio < DELTA_BASE ** 3)),
    )


def rescale_array(values: np.ndarray, valid: np.ndarray, lo: float = 1.0, hi: float = 81.0) -> Tuple[np.ndarray, bool]:
    """Affine map of [min, max] over valid pixels onto [lo, hi]; constant input maps to lo (flagged)."""
    if not hi > lo > 0:
        raise ValueError(f"rescale range needs hi > lo > 0, got {lo}..{hi}")
    values = np.asarray(values, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise DataError("cannot rescale a map with no valid pixels")
    vmin, vmax = values[valid].min(), values[valid].max()
    if vmax - vmin <= 0:
        return np.where(valid, lo, 0.0), True
    out = (values - vmin) / (vmax - vmin) * (hi - lo) + lo
    return np.where(valid, out, 0.0), False


def rescale_depth_range(d: DepthMap, lo: float = 1.0, hi: float = 81.0) -> Tuple[DepthMap, bool]:
    values, flagged = rescale_array(d.values, d.valid, lo, hi)
    if flagged:
        logger.warning(f"Constant depth map rescaled to {lo}")
    return DepthMap.from_array(values, d.valid), flagged


def psnr(a: Raster, b: Raster) -> float:
    """10·log10(1/MSE) for images in [0, 1], capped for identical inputs."""
    if a.data.shape != b.data.shape:
        raise DimensionMismatchError(f"images differ: {a.data.shape} vs {b.data.shape}")
    mse = float(np.mean(np.square(a.data - b.data)))
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def evaluate(pred: DepthMap, truth: DepthMap, rescale: Optional[Tuple[float, float]] = None) -> ErrorReport:
    """depth_errors, optionally after rescaling both maps to a common range."""
    flagged = False
    if rescale is not None:
        lo, hi = rescale
        pred, f_pred = rescale_depth_range(pred, lo, hi)
        truth, f_truth = rescale_depth_range(truth, lo, hi)
        flagged = f_pred or f_truth
    report = depth_errors(pred, truth)
    return report.model_copy(update={"rescaled_constant": flagged})


def mean_report(reports) -> ErrorReport:
    """Pixel-unweighted average of per-image reports."""
    reports = list(reports)
    if not reports:
        raise DataError("no reports to average")
    fields = ("rel", "log10", "rms", "delta1", "delta2", "delta3")
    avg = {f: float(np.mean([getattr(r, f) for r in reports])) for f in fields}
    return ErrorReport(
        **avg,
        pixel_count=sum(r.pixel_count for r in reports),
        rescaled_constant=any(r.rescaled_constant for r in reports),
    )
