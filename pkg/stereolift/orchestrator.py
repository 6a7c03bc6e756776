import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict

from .config import Settings
from .correspondence import WarpField, align_dense, warp_confidence
from .database.index import CandidateSet, DatabaseIndex, RgbdRecord, load_index, select_candidates
from .engine.errors import DataError, NonConvergenceError
from .engine.executor import FrameExecutor
from .features.descriptors import DenseDescriptorField, compute_dense_descriptors
from .features.flow import FlowBlockFeatures, clip_flows, compute_flow_features
from .features.gist import compute_gist
from .harness import baselines
from .imaging.raster import DepthMap, FlowField, Raster, fill_depth_holes, resize_bilinear
from .inference.depth import CandidateBundle, InferenceProblem, InferenceResult, infer, initialize_depth
from .models import BaselineKind, InitScheme
from .motion import SegmentationResult, contact_depth, segment_clip
from .resource_guard import SolveMemoryGuard
from .stereo import (
    StereoPair,
    default_wmax,
    depth_to_disparity,
    optimize_disparity,
    render_stereo,
    saliency_weights,
)


class FrameCandidates(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    candidates: CandidateSet
    bundles: List[CandidateBundle]
    warps: List[WarpField]


class ClipInference(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    depths: List[DepthMap]
    result: InferenceResult
    problem: InferenceProblem
    per_frame: List[FrameCandidates]
    segmentation: Optional[SegmentationResult] = None


class DepthPipeline:
    """
    Drives retrieval, alignment, inference, segmentation and stereo
    rendering over a loaded database index.
    """
    def __init__(self, settings: Settings, index: Optional[DatabaseIndex] = None):
        self.settings = settings
        self.logger = logging.getLogger("Stereolift.Pipeline")
        self.index = index
        self.executor = FrameExecutor(max_concurrent=settings.JOBS)
        self.guard = SolveMemoryGuard(settings.MEMORY_FRACTION)
        self._descriptor_cache = {}

    @classmethod
    def from_index_dir(cls, settings: Settings, index_dir: Union[str, Path]) -> "DepthPipeline":
        index = load_index(index_dir)
        w, h = index.working_resolution
        if (w, h) != (settings.WORKING_WIDTH, settings.WORKING_HEIGHT):
            settings = settings.model_copy(update={"WORKING_WIDTH": w, "WORKING_HEIGHT": h})
        return cls(settings, index)

    def _require_index(self) -> DatabaseIndex:
        if self.index is None:
            raise DataError("no database index loaded")
        return self.index

    def prepare(self, frame: Raster) -> Raster:
        w, h = self.settings.WORKING_WIDTH, self.settings.WORKING_HEIGHT
        if frame.shape == (h, w):
            return frame
        return resize_bilinear(frame, w, h, anti_alias=True)

    # --- Retrieval and alignment ---

    def retrieve(self, frame: Raster, flowfeat: FlowBlockFeatures, k: Optional[int] = None, exclude_clip: Optional[str] = None) -> CandidateSet:
        gist = compute_gist(frame, size=self.settings.GIST_SIZE)
        return select_candidates(
            self._require_index(), gist, flowfeat, k or self.settings.K, self.settings.OMEGA, exclude_clip
        )

    def _record_descriptors(self, record: RgbdRecord) -> DenseDescriptorField:
        key = record.content_hash or id(record)
        if key not in self._descriptor_cache:
            self._descriptor_cache[key] = compute_dense_descriptors(record.image)
        return self._descriptor_cache[key]

    def align(self, frame: Raster, candidates: CandidateSet) -> FrameCandidates:
        """Align all K candidates to the frame in parallel and warp their depth."""
        query = compute_dense_descriptors(frame)
        cfg = self.settings.alignment_config()
        domain = self.settings.DOMAIN

        def job(record: RgbdRecord):
            cand = self._record_descriptors(record)
            warp = align_dense(query, cand, cfg)
            conf = warp_confidence(query, cand, warp, cfg.mu_s, cfg.sigma_s)
            return CandidateBundle.from_warp(warp, record.depth, conf, domain), warp

        out = self.executor.map(job, candidates.records, label="align")
        return FrameCandidates(candidates=candidates, bundles=[b for b, _ in out], warps=[w for _, w in out])

    # --- Inference ---

    def _base_problem(self, frames: List[Raster], per_frame: List[FrameCandidates], init: Optional[InitScheme] = None) -> InferenceProblem:
        return InferenceProblem(
            frames=frames,
            bundles=[fc.bundles for fc in per_frame],
            prior=self._require_index().prior,
            weights=self.settings.objective_weights(),
            domain=self.settings.DOMAIN,
            init=init or self.settings.INIT,
            seed=self.settings.RANSAC_SEED,
        )

    def infer_clip(
        self,
        frames: Sequence[Raster],
        k: Optional[int] = None,
        exclude_clip: Optional[str] = None,
        init: Optional[InitScheme] = None,
    ) -> ClipInference:
        frames = [self.prepare(f) for f in frames]
        if not frames:
            raise DataError("no frames to infer")
        flows = clip_flows(frames)
        per_frame = []
        for t, frame in enumerate(frames):
            feats = compute_flow_features(flows[t], self.settings.FLOW_BLOCKS)
            per_frame.append(self.align(frame, self.retrieve(frame, feats, k, exclude_clip)))

        problem = self._base_problem(frames, per_frame, init)
        segmentation = None
        if len(frames) > 1:
            problem = problem.with_flows(flows[:-1], self.settings.RISING_FLOW_WEIGHT)
            if problem.weights.eta > 0 and not self.settings.PARALLAX:
                segmentation = segment_clip(frames, self.settings.motion_config())
                seeds = [initialize_depth(fc.bundles, problem.prior, InitScheme.MEDIAN) for fc in per_frame]
                contacts = contact_depth(segmentation.masks, seeds, self.settings.motion_config())
                problem = problem.model_copy(update={
                    "motion_mask": [c.mask for c in contacts],
                    "contact_depth": [c.values for c in contacts],
                })
            elif self.settings.PARALLAX:
                problem = problem.model_copy(update={"weights": problem.weights.model_copy(update={"eta": 0.0})})

        n_terms = 3 * len(per_frame[0].bundles) + 5
        self.guard.check(problem.n_frames * problem.npix, n_terms, label=f"{problem.n_frames}-frame solve")
        result = infer(problem, self.settings.solver_config())
        if not result.converged:
            if self.settings.STRICT:
                raise NonConvergenceError("inner PCG solves did not converge")
            self.logger.warning("⚠️ Solve finished without full PCG convergence")
        return ClipInference(
            depths=result.depths,
            result=result,
            problem=problem,
            per_frame=per_frame,
            segmentation=segmentation,
        )

    def infer_frame(self, frame: Raster, k: Optional[int] = None, exclude_clip: Optional[str] = None, init: Optional[InitScheme] = None) -> ClipInference:
        return self.infer_clip([frame], k, exclude_clip, init)

    def baseline(self, kind: BaselineKind, frame: Raster, k: Optional[int] = None, exclude_clip: Optional[str] = None) -> DepthMap:
        index = self._require_index()
        if kind == BaselineKind.DATASET_MEAN:
            return baselines.dataset_mean(index)
        if kind == BaselineKind.DATASET_PRIOR:
            return baselines.dataset_prior(index)
        frame = self.prepare(frame)
        h, w = frame.shape
        feats = compute_flow_features(FlowField.zeros(h, w), self.settings.FLOW_BLOCKS)
        cands = self.retrieve(frame, feats, k, exclude_clip)
        if kind == BaselineKind.MEDIAN_FUSION_UNWARPED:
            return baselines.median_fusion_unwarped([r.depth for r in cands.records], index.prior)
        return baselines.median_fusion(self.align(frame, cands).bundles, index.prior)

    # --- Stereo ---

    def synthesize(self, frames: Sequence[Raster], depths: Sequence[DepthMap], flows: Optional[List[FlowField]] = None) -> List[StereoPair]:
        """One clip-wide disparity solve, then per-frame splatting on the executor."""
        cfg = self.settings.stereo_config()
        frames = list(frames)
        if len(frames) != len(depths):
            raise DataError(f"{len(frames)} frames but {len(depths)} depth maps")
        depths = [d if d.valid.all() else fill_depth_holes(d) for d in depths]
        wmax = cfg.wmax or default_wmax(frames[0].width)
        w0 = [depth_to_disparity(d, wmax, cfg.epsilon) for d in depths]
        sal = [saliency_weights(f, w, wmax) for f, w in zip(frames, w0)]
        if len(frames) > 1 and flows is None and cfg.mu > 0:
            flows = clip_flows(frames)[:-1]
        disparity = optimize_disparity(
            w0, sal, frames, cfg.lam, cfg.mu, flows,
            self.settings.MU_L, self.settings.SIGMA_L, self.settings.solver_config(),
        )
        pairs = self.executor.map(
            lambda fw: render_stereo(fw[0], fw[1], cfg.window_shift, cfg.z_order),
            list(zip(frames, disparity)),
            label="render",
        )
        self.logger.info(f"✅ Rendered {len(pairs)} stereo pair(s), wmax {wmax:.2f}px")
        return pairs
