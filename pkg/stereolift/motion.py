"""
Moving-object segmentation for clips without camera translation, and the
floor-contact depth used by the motion term of video inference.
"""
import csv
import logging
import warnings
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import ndimage
from skimage.exposure import match_histograms
from skimage.feature import corner_harris, corner_peaks, match_descriptors
from skimage.measure import label, ransac, regionprops
from skimage.morphology import disk
from skimage.transform import ProjectiveTransform, warp

from .engine.errors import DataError, DimensionMismatchError
from .features.descriptors import compute_dense_descriptors
from .features.flow import compute_optical_flow
from .imaging.raster import DepthMap, FlowField, Raster, luma_array
from .models import MotionConfig

logger = logging.getLogger("Stereolift.Motion")

BACKGROUND_FLOOR = 1e-3
MAX_CORNERS = 500
CORNER_THRESHOLD_REL = 1e-4


class Homography(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    matrix: np.ndarray

    @field_validator("matrix", mode="before")
    @classmethod
    def normalize(cls, v):
        m = np.asarray(v, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography is singular")
        return m

    @classmethod
    def identity(cls) -> "Homography":
        return cls(matrix=np.eye(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map N×2 (x, y) points."""
        return ProjectiveTransform(matrix=self.matrix)(np.asarray(points, dtype=np.float64))

    def inverse(self) -> "Homography":
        return Homography(matrix=np.linalg.inv(self.matrix))


class HomographyEstimate(BaseModel):
    homography: Homography
    confident: bool = True
    inliers: int = 0


class ContactDepthMap(BaseModel):
    """Depth where mask components meet the floor; 0 outside the mask."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    mask: np.ndarray

    @model_validator(mode="after")
    def check_positive(self) -> "ContactDepthMap":
        if self.values.shape != self.mask.shape:
            raise ValueError("contact depth and mask differ in shape")
        if np.any(self.values[self.mask] <= 0):
            raise ValueError("contact depth must be positive on the mask")
        return self


class SegmentationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    masks: List[np.ndarray]
    homographies: List[HomographyEstimate]
    background: Raster
    background_valid: np.ndarray
    reference: int


# --- Exposure ---

def equalize_to_darkest(frames: Sequence[Raster]) -> List[Raster]:
    """Histogram-match every frame to the one with the lowest mean luma."""
    if not frames:
        return []
    ref_idx = int(np.argmin([luma_array(f).mean() for f in frames]))
    ref = frames[ref_idx]
    out = []
    for i, f in enumerate(frames):
        if i == ref_idx or np.array_equal(f.data, ref.data):
            out.append(f)
            continue
        matched = match_histograms(f.data, ref.data, channel_axis=-1)
        out.append(Raster(data=np.clip(matched, 0.0, 1.0)))
    return out


# --- Homographies ---

def fit_homography_ransac(src: np.ndarray, dst: np.ndarray, cfg: Optional[MotionConfig] = None) -> HomographyEstimate:
    """
    RANSAC over 4-point projective fits, then a least-squares refit on the
    inliers. ``src``/``dst`` are N×2 (x, y).
    """
    cfg = cfg or MotionConfig()
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape:
        raise DimensionMismatchError(f"correspondence arrays differ: {src.shape} vs {dst.shape}")
    if len(src) < 4:
        return HomographyEstimate(homography=Homography.identity(), confident=False)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model, inliers = ransac(
            (src, dst),
            ProjectiveTransform,
            min_samples=4,
            residual_threshold=cfg.ransac_threshold,
            max_trials=cfg.ransac_trials,
            rng=cfg.seed,
        )
    if model is None or inliers is None or inliers.sum() < 4:
        return HomographyEstimate(homography=Homography.identity(), confident=False)

    refit = ProjectiveTransform()
    if not refit.estimate(src[inliers], dst[inliers]):
        refit = model
    try:
        h = Homography(matrix=refit.params)
    except ValueError:
        return HomographyEstimate(homography=Homography.identity(), confident=False)
    return HomographyEstimate(homography=h, confident=True, inliers=int(inliers.sum()))


def _corners(lum: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Harris peaks as integer (row, col) plus (x, y) positions refined to
    subpixel by a parabola through the response on each axis. The peak
    threshold is a tiny fraction of the strongest response; ``num_peaks``
    keeps the strongest ones.
    """
    response = corner_harris(lum, sigma=1)
    peaks = corner_peaks(response, min_distance=3, threshold_rel=CORNER_THRESHOLD_REL, exclude_border=8, num_peaks=MAX_CORNERS)
    peaks = peaks.reshape(-1, 2)
    r, c = peaks[:, 0], peaks[:, 1]
    mid = response[r, c]
    offsets = []
    for lo, hi in ((response[r, c - 1], response[r, c + 1]), (response[r - 1, c], response[r + 1, c])):
        curvature = lo - 2.0 * mid + hi
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(curvature < 0, 0.5 * (lo - hi) / curvature, 0.0)
        offsets.append(np.clip(np.nan_to_num(step), -0.5, 0.5))
    points = np.stack([c + offsets[0], r + offsets[1]], axis=1).astype(np.float64)
    return peaks, points


def reference_index(n_frames: int) -> int:
    return n_frames // 2


def estimate_homographies(frames: Sequence[Raster], cfg: Optional[MotionConfig] = None) -> List[HomographyEstimate]:
    """Per-frame homography into the middle frame's coordinates."""
    cfg = cfg or MotionConfig()
    if not frames:
        return []
    ref_idx = reference_index(len(frames))
    ref = frames[ref_idx]
    ref_peaks, ref_points = _corners(luma_array(ref))
    ref_desc = compute_dense_descriptors(ref).data[ref_peaks[:, 0], ref_peaks[:, 1]]

    estimates = []
    for i, frame in enumerate(frames):
        if i == ref_idx or np.array_equal(frame.data, ref.data):
            estimates.append(HomographyEstimate(homography=Homography.identity(), inliers=len(ref_peaks)))
            continue
        peaks, points = _corners(luma_array(frame))
        matches = np.zeros((0, 2), dtype=np.intp)
        if len(peaks) and len(ref_peaks):
            desc = compute_dense_descriptors(frame).data[peaks[:, 0], peaks[:, 1]]
            matches = match_descriptors(desc, ref_desc, cross_check=True)
        if len(matches) < cfg.min_matches:
            logger.warning(f"⚠️ Frame {i}: {len(matches)} matches < {cfg.min_matches}; using identity homography")
            estimates.append(HomographyEstimate(homography=Homography.identity(), confident=False))
            continue
        est = fit_homography_ransac(points[matches[:, 0]], ref_points[matches[:, 1]], cfg)
        if not est.confident:
            logger.warning(f"⚠️ Frame {i}: RANSAC found no consensus; using identity homography")
        else:
            logger.debug(f"🔍 Frame {i}: {est.inliers}/{len(matches)} inlier matches")
        estimates.append(est)
    return estimates


def stabilize(frames: Sequence[Raster], homographies: Sequence[Homography]) -> Tuple[List[Raster], List[np.ndarray]]:
    """Warp frames into reference coordinates; also returns per-frame coverage."""
    if len(frames) != len(homographies):
        raise DimensionMismatchError(f"{len(frames)} frames but {len(homographies)} homographies")
    out, coverage = [], []
    for f, h in zip(frames, homographies):
        inverse = ProjectiveTransform(matrix=h.matrix).inverse
        out.append(Raster(data=warp(f.data, inverse, order=1, mode="constant", cval=0.0, preserve_range=True)))
        cov = warp(np.ones(f.shape), inverse, order=0, mode="constant", cval=0.0, preserve_range=True)
        coverage.append(cov > 0.5)
    return out, coverage


def unwarp_mask(mask: np.ndarray, h: Homography) -> np.ndarray:
    """Bring a reference-frame mask back into the frame's own coordinates."""
    return unwarp_plane(mask.astype(np.float64), h, order=0) > 0.5


def unwarp_plane(plane: np.ndarray, h: Homography, order: int = 1) -> np.ndarray:
    """Sample a reference-frame plane at each frame pixel's reference position; 0 outside."""
    return warp(plane, ProjectiveTransform(matrix=h.matrix), order=order, mode="constant", cval=0.0, preserve_range=True)


# --- Background and masks ---

def median_background(frames: Sequence[Raster], coverage: Optional[Sequence[np.ndarray]] = None) -> Tuple[Raster, np.ndarray]:
    """Temporal median over the frames covering each pixel (mean of the middle two for even counts)."""
    if not frames:
        raise DataError("median background needs at least one frame")
    stack = np.stack([f.data for f in frames])
    if coverage is not None:
        cov = np.stack(coverage)[..., None]
        stack = np.where(cov, stack, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        bg = np.nanmedian(stack, axis=0)
    valid = np.all(np.isfinite(bg), axis=2)
    return Raster(data=np.nan_to_num(bg, nan=0.0)), valid


def relative_difference(frame_luma: np.ndarray, background_luma: np.ndarray, flow_magnitude: np.ndarray) -> np.ndarray:
    return flow_magnitude * np.square(frame_luma - background_luma) / np.maximum(background_luma, BACKGROUND_FLOOR)


def motion_statistic(frame: Raster, background: Raster, flow_magnitude: np.ndarray) -> np.ndarray:
    """|flow| · (W − B)² / B on luma."""
    return relative_difference(luma_array(frame), luma_array(background), flow_magnitude)


def motion_masks(
    stabilized: Sequence[Raster],
    background: Raster,
    flows: Sequence[FlowField],
    homographies: Optional[Sequence[Homography]] = None,
    background_valid: Optional[np.ndarray] = None,
    coverage: Optional[Sequence[np.ndarray]] = None,
    cfg: Optional[MotionConfig] = None,
    frames: Optional[Sequence[Raster]] = None,
) -> List[np.ndarray]:
    """
    Threshold the relative-difference statistic at τ in each frame's own
    coordinates and open the mask to drop speckle. ``flows[t]`` is the
    stabilized flow used for frame t.

    With ``homographies`` the reference-frame quantities are unwarped to
    the frame: background, flow magnitude and background validity are
    sampled at each pixel's reference position and compared with the
    unresampled frame from ``frames`` (or the thresholded reference-frame
    mask is unwarped when ``frames`` is not given).
    """
    cfg = cfg or MotionConfig()
    if len(flows) != len(stabilized):
        raise DimensionMismatchError(f"{len(stabilized)} frames but {len(flows)} flows")
    if frames is not None and (homographies is None or len(frames) != len(stabilized)):
        raise DimensionMismatchError("unwarped evaluation needs one original frame and homography per stabilized frame")
    valid = background_valid if background_valid is not None else np.ones(background.shape, dtype=bool)
    footprint = disk(cfg.open_radius) if cfg.open_radius > 0 else None
    bg_luma = luma_array(background)

    masks = []
    for t, (frame, flow) in enumerate(zip(stabilized, flows)):
        if frames is not None:
            h = homographies[t]
            stat = relative_difference(
                luma_array(frames[t]),
                unwarp_plane(bg_luma, h),
                unwarp_plane(flow.magnitude(), h),
            )
            m = (stat > cfg.tau) & unwarp_mask(valid, h)
        else:
            m = (relative_difference(luma_array(frame), bg_luma, flow.magnitude()) > cfg.tau) & valid
            if coverage is not None:
                m &= coverage[t]
            if homographies is not None:
                m = unwarp_mask(m, homographies[t])
        if footprint is not None:
            m = ndimage.binary_opening(m, structure=footprint)
        masks.append(m)
    return masks


def segment_clip(frames: Sequence[Raster], cfg: Optional[MotionConfig] = None) -> SegmentationResult:
    cfg = cfg or MotionConfig()
    if not frames:
        raise DataError("cannot segment an empty clip")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise DimensionMismatchError("clip frames differ in size")
    if len(frames) == 1:
        return SegmentationResult(
            masks=[np.zeros(shape, dtype=bool)],
            homographies=[HomographyEstimate(homography=Homography.identity())],
            background=frames[0],
            background_valid=np.ones(shape, dtype=bool),
            reference=0,
        )

    equalized = equalize_to_darkest(frames)
    estimates = estimate_homographies(equalized, cfg)
    hs = [e.homography for e in estimates]
    stabilized, coverage = stabilize(equalized, hs)
    background, bg_valid = median_background(stabilized, coverage)

    flows = [compute_optical_flow(stabilized[t], stabilized[t + 1]) for t in range(len(frames) - 1)]
    flows.append(compute_optical_flow(stabilized[-1], stabilized[-2]))
    masks = motion_masks(stabilized, background, flows, hs, bg_valid, coverage, cfg, frames=equalized)

    density = float(np.mean([m.mean() for m in masks]))
    logger.info(f"✅ Segmented {len(frames)} frames; mean mask density {density:.4f}")
    return SegmentationResult(
        masks=masks,
        homographies=estimates,
        background=background,
        background_valid=bg_valid,
        reference=reference_index(len(frames)),
    )


# --- Floor contact ---

def _component_contact(component: np.ndarray, depth: DepthMap, band: int) -> Optional[float]:
    h = component.shape[0]
    rows, cols = np.nonzero(component)
    bottom = rows.max()
    if bottom == h - 1:
        sel = (rows == bottom)
        sample_r, sample_c = rows[sel], cols[sel]
    else:
        r0, r1 = bottom + 1, min(bottom + band, h - 1)
        c0, c1 = cols.min(), cols.max()
        rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
        sample_r, sample_c = rr.ravel(), cc.ravel()
    ok = depth.valid[sample_r, sample_c]
    if not ok.any():
        return None
    return float(np.median(depth.values[sample_r[ok], sample_c[ok]]))


def contact_depth(masks: Sequence[np.ndarray], init_depths: Sequence[DepthMap], cfg: Optional[MotionConfig] = None) -> List[ContactDepthMap]:
    """
    Per 8-connected component (area >= min_component_area): median of the
    initial depth in the band just below its bottom row, assigned to the
    whole component. Components on the bottom edge use their own bottom row.
    """
    cfg = cfg or MotionConfig()
    if len(masks) != len(init_depths):
        raise DimensionMismatchError(f"{len(masks)} masks but {len(init_depths)} depth maps")
    out = []
    for mask, depth in zip(masks, init_depths):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != depth.shape:
            raise DimensionMismatchError(f"mask {mask.shape} and depth {depth.shape} differ")
        values = np.zeros(mask.shape)
        assigned = np.zeros(mask.shape, dtype=bool)
        labels = label(mask, connectivity=2)
        for region in regionprops(labels):
            if region.area < cfg.min_component_area:
                continue
            component = labels == region.label
            d = _component_contact(component, depth, cfg.contact_band)
            if d is None or d <= 0:
                continue
            values[component] = d
            assigned |= component
        out.append(ContactDepthMap(values=values, mask=assigned))
    return out


def write_homographies_csv(path: Union[str, Path], estimates: Sequence[HomographyEstimate]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["frame"] + [f"h{r}{c}" for r in range(1, 4) for c in range(1, 4)] + ["confident"])
        for i, est in enumerate(estimates):
            writer.writerow([i] + [f"{v:.10g}" for v in est.homography.matrix.ravel()] + [int(est.confident)])
    return path
