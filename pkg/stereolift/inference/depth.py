"""
Depth inference objective: per-frame data, gradient-data, smoothness and
prior terms, plus temporal coherence and motion terms for video.

All targets live in the optimisation domain (log10 metres by default);
``infer`` transforms in, runs IRLS and transforms the solution back.
"""
import logging
import warnings
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.ndimage import map_coordinates
from scipy.special import expit

from ..correspondence import ConfidenceMap, WarpField, apply_warp
from ..engine.errors import DataError, DimensionMismatchError
from ..imaging.raster import DepthMap, FlowField, Raster, forward_gradients, luma_array
from ..models import DepthDomain, InitScheme, ObjectiveWeights, SolverConfig, WarpMode
from ..solver import (
    RobustTerm,
    TermStack,
    compose,
    flow_difference,
    frame_block,
    grad_x,
    grad_y,
    identity,
    irls_minimize,
    objective_value,
    selection,
)

logger = logging.getLogger("Stereolift.Inference")

WEIGHT_FLOOR = 1e-12


def to_domain(values: np.ndarray, domain: DepthDomain) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if domain == DepthDomain.LOG:
        return np.log10(values)
    return values


def from_domain(values: np.ndarray, domain: DepthDomain) -> np.ndarray:
    if domain == DepthDomain.LOG:
        return np.power(10.0, values)
    return np.asarray(values, dtype=np.float64)


def _sigmoid_weights(magnitude: np.ndarray, mu: float, sigma: float, increasing: bool = False) -> np.ndarray:
    z = (magnitude - mu) / sigma
    s = expit(z) if increasing else expit(-z)
    return np.clip(s, WEIGHT_FLOOR, 1.0 - WEIGHT_FLOOR)


class SmoothnessWeights(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    s_x: np.ndarray
    s_y: np.ndarray

    @field_validator("s_x", "s_y", mode="before")
    @classmethod
    def coerce(cls, v):
        arr = np.asarray(v, dtype=np.float64)
        if np.any(arr <= 0) or np.any(arr >= 1):
            raise ValueError("smoothness weights must lie in (0, 1)")
        return arr


def smoothness_weights(image: Raster, mu_l: float = 0.05, sigma_l: float = 0.01) -> SmoothnessWeights:
    """Soft edge stops: s = 1/(1 + exp((|∇L| − μ_L)/σ_L)) per axis."""
    gx, gy = forward_gradients(luma_array(image))
    return SmoothnessWeights(
        s_x=_sigmoid_weights(np.abs(gx), mu_l, sigma_l),
        s_y=_sigmoid_weights(np.abs(gy), mu_l, sigma_l),
    )


def reprojection_error(a: Raster, b: Raster, flow: FlowField) -> np.ndarray:
    """|L_b(p + flow(p)) − L_a(p)|, bilinear sampling, edges clamped."""
    la, lb = luma_array(a), luma_array(b)
    if la.shape != flow.shape or lb.shape != flow.shape:
        raise DimensionMismatchError("frames and flow differ in shape")
    yy, xx = np.mgrid[0:la.shape[0], 0:la.shape[1]].astype(np.float64)
    warped = map_coordinates(lb, [yy + flow.v, xx + flow.u], order=1, mode="nearest")
    return np.abs(warped - la)


def flow_confidence(
    frames: List[Raster],
    flows: List[FlowField],
    mu_l: float = 0.05,
    sigma_l: float = 0.01,
    rising_weight: bool = False,
) -> List[np.ndarray]:
    """
    One map per consecutive pair. Confidence falls with reprojection
    error; ``rising_weight`` flips the sigmoid to rise with it instead.
    """
    if len(flows) < len(frames) - 1:
        raise DimensionMismatchError(f"{len(frames)} frames need {len(frames) - 1} flows, got {len(flows)}")
    return [
        _sigmoid_weights(reprojection_error(frames[t], frames[t + 1], flows[t]), mu_l, sigma_l, increasing=rising_weight)
        for t in range(len(frames) - 1)
    ]


# --- Problem ---

class CandidateBundle(BaseModel):
    """One retrieved candidate warped into the query frame."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    depth: np.ndarray       # metres, 0 where invalid
    valid: np.ndarray
    grad: np.ndarray        # H×W×2 domain gradients (x, y)
    grad_valid: np.ndarray  # H×W×2
    confidence: np.ndarray
    domain: DepthDomain = DepthDomain.LOG

    @model_validator(mode="after")
    def check_shapes(self) -> "CandidateBundle":
        shape = self.depth.shape
        if self.valid.shape != shape or self.confidence.shape != shape:
            raise DimensionMismatchError("candidate bundle rasters differ in shape")
        if self.grad.shape != shape + (2,) or self.grad_valid.shape != shape + (2,):
            raise DimensionMismatchError("candidate gradient must be H×W×2")
        if np.any(self.depth[self.valid] <= 0):
            raise ValueError("valid candidate depth must be > 0")
        return self

    @property
    def shape(self):
        return self.depth.shape

    @classmethod
    def from_warp(
        cls,
        warp: WarpField,
        depth: DepthMap,
        confidence: Optional[ConfidenceMap] = None,
        domain: DepthDomain = DepthDomain.LOG,
    ) -> "CandidateBundle":
        value = apply_warp(warp, depth, WarpMode.VALUE)
        grads = apply_warp(warp, depth, WarpMode.GRADIENT, transform=lambda v: to_domain(v, domain))
        conf = confidence.weights if confidence is not None else np.full(warp.shape, 1.0 - WEIGHT_FLOOR)
        return cls(
            depth=value.values.plane(0),
            valid=value.valid[:, :, 0],
            grad=grads.values.data,
            grad_valid=grads.valid,
            confidence=conf,
            domain=domain,
        )

    @classmethod
    def from_depth(cls, depth: DepthMap, confidence: Optional[np.ndarray] = None, domain: DepthDomain = DepthDomain.LOG) -> "CandidateBundle":
        """Candidate taken as-is (identity warp)."""
        h, w = depth.shape
        conf = None if confidence is None else ConfidenceMap(weights=np.clip(confidence, WEIGHT_FLOOR, 1.0 - WEIGHT_FLOOR))
        return cls.from_warp(WarpField.identity(h, w), depth, conf, domain)


class InferenceProblem(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    frames: List[Raster] = Field(min_length=1)
    bundles: List[List[CandidateBundle]]
    prior: DepthMap
    flows: List[FlowField] = []
    flow_confidence: List[np.ndarray] = []
    motion_mask: Optional[List[np.ndarray]] = None
    contact_depth: Optional[List[np.ndarray]] = None
    weights: ObjectiveWeights = ObjectiveWeights()
    domain: DepthDomain = DepthDomain.LOG
    init: InitScheme = InitScheme.MEDIAN
    seed: int = 0

    @model_validator(mode="after")
    def check_shapes(self) -> "InferenceProblem":
        shape = self.frames[0].shape
        if any(f.shape != shape for f in self.frames):
            raise DimensionMismatchError("frames differ in working resolution")
        if len(self.bundles) != len(self.frames):
            raise DimensionMismatchError(f"{len(self.frames)} frames but {len(self.bundles)} bundle lists")
        for per_frame in self.bundles:
            if any(b.shape != shape for b in per_frame):
                raise DimensionMismatchError("candidate bundle does not match frame resolution")
            if any(b.domain != self.domain for b in per_frame):
                raise DataError("candidate gradients were warped in a different domain")
        if self.prior.shape != shape:
            raise DimensionMismatchError(f"prior {self.prior.shape} does not match frames {shape}")
        return self

    @property
    def shape(self):
        return self.frames[0].shape

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def npix(self) -> int:
        h, w = self.shape
        return h * w

    def with_flows(self, flows: List[FlowField], rising_weight: bool = False) -> "InferenceProblem":
        """Attach t→t+1 flows and their confidence maps."""
        flows = list(flows[: self.n_frames - 1])
        conf = flow_confidence(self.frames, flows, self.weights.mu_l, self.weights.sigma_l, rising_weight)
        return self.model_copy(update={"flows": flows, "flow_confidence": conf})


# --- Assembly ---

def _frame_terms(problem: InferenceProblem, t: int) -> List[RobustTerm]:
    bundles = problem.bundles[t]
    if not bundles:
        raise DataError(f"frame {t} has no candidates (K=0)")
    h, w = problem.shape
    n = h * w
    wts = problem.weights
    ident, gx, gy = identity(n), grad_x(h, w), grad_y(h, w)

    terms: List[RobustTerm] = []
    for j, b in enumerate(bundles):
        target = np.where(b.valid, to_domain(np.where(b.valid, b.depth, 1.0), problem.domain), 0.0)
        wx = b.confidence * b.grad_valid[:, :, 0]
        wy = b.confidence * b.grad_valid[:, :, 1]
        wx[:, -1] = 0.0
        wy[-1, :] = 0.0
        terms += [
            RobustTerm(name=f"data[{j}]", op=ident, target=target, weight=b.confidence * b.valid, multiplier=wts.data),
            RobustTerm(name=f"grad_data_x[{j}]", op=gx, target=b.grad[:, :, 0], weight=wx, multiplier=wts.gamma),
            RobustTerm(name=f"grad_data_y[{j}]", op=gy, target=b.grad[:, :, 1], weight=wy, multiplier=wts.gamma),
        ]

    s = smoothness_weights(problem.frames[t], wts.mu_l, wts.sigma_l)
    prior = problem.prior
    prior_target = np.where(prior.valid, to_domain(np.where(prior.valid, prior.values, 1.0), problem.domain), 0.0)
    terms += [
        RobustTerm(name="smooth_x", op=gx, target=np.zeros(n), weight=s.s_x, multiplier=wts.alpha),
        RobustTerm(name="smooth_y", op=gy, target=np.zeros(n), weight=s.s_y, multiplier=wts.alpha),
        RobustTerm(name="prior", op=ident, target=prior_target, weight=prior.valid.astype(float), multiplier=wts.beta),
    ]
    return terms


def assemble_single(problem: InferenceProblem, frame_idx: int = 0) -> TermStack:
    if not 0 <= frame_idx < problem.n_frames:
        raise IndexError(f"frame {frame_idx} out of range")
    return TermStack(terms=_frame_terms(problem, frame_idx), n=problem.npix)


def _has_motion(problem: InferenceProblem) -> bool:
    return problem.weights.eta > 0 and problem.motion_mask is not None and problem.contact_depth is not None


def assemble_video(problem: InferenceProblem) -> TermStack:
    frames = problem.n_frames
    if frames == 1:
        return assemble_single(problem, 0)
    h, w = problem.shape
    npix = problem.npix
    n = frames * npix

    terms: List[RobustTerm] = []
    for t in range(frames):
        block = frame_block(t, frames, npix)
        for term in _frame_terms(problem, t):
            terms.append(term.model_copy(update={"name": f"{term.name}@{t}", "op": compose(term.op, block)}))

    if problem.weights.nu > 0:
        if len(problem.flows) != frames - 1 or len(problem.flow_confidence) != frames - 1:
            raise DimensionMismatchError(
                f"{frames} frames need {frames - 1} flows and confidence maps, "
                f"got {len(problem.flows)} and {len(problem.flow_confidence)}"
            )
        op = flow_difference(h, w, problem.flows)
        s_t = np.concatenate([s.ravel() for s in problem.flow_confidence])
        terms.append(RobustTerm(
            name="coherence", op=op, target=np.zeros(op.n_rows),
            weight=s_t[op.row_pixels], multiplier=problem.weights.nu,
        ))

    if _has_motion(problem):
        mask = np.concatenate([np.asarray(m, dtype=bool).ravel() for m in problem.motion_mask])
        contact = np.concatenate([np.asarray(c, dtype=np.float64).ravel() for c in problem.contact_depth])
        if mask.size != n or contact.size != n:
            raise DimensionMismatchError("motion mask / contact depth do not cover every frame")
        mask &= np.isfinite(contact) & (contact > 0)
        if mask.any():
            op = selection(mask)
            terms.append(RobustTerm(
                name="motion", op=op, target=to_domain(contact[mask], problem.domain),
                weight=np.ones(op.n_rows), multiplier=problem.weights.eta,
            ))
    elif problem.weights.eta > 0:
        logger.info("No motion mask supplied; motion term skipped")

    return TermStack(terms=terms, n=n)


# --- Initialisation ---

def _stacked_candidates(bundles: List[CandidateBundle]) -> np.ndarray:
    return np.stack([np.where(b.valid, b.depth, np.nan) for b in bundles])


def initialize_depth(
    bundles: List[CandidateBundle],
    prior: Optional[DepthMap] = None,
    scheme: InitScheme = InitScheme.MEDIAN,
    seed: int = 0,
) -> DepthMap:
    """
    Starting depth in metres. Median uses the mean of the two middle
    values for even counts; pixels no candidate covers take the prior.
    """
    if not bundles:
        raise DataError("initialisation needs at least one candidate")
    stack = _stacked_candidates(bundles)
    shape = stack.shape[1:]
    covered = np.isfinite(stack).any(axis=0)

    if scheme == InitScheme.PRIOR:
        if prior is None:
            raise DataError("prior initialisation needs a prior")
        return prior

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if scheme == InitScheme.MEDIAN:
            init = np.nanmedian(stack, axis=0)
        elif scheme == InitScheme.MEAN:
            init = np.nanmean(stack, axis=0)
        else:
            if not covered.any():
                raise DataError("random initialisation needs at least one valid candidate sample")
            lo, hi = np.nanmin(stack), np.nanmax(stack)
            init = np.random.default_rng(seed).uniform(lo, hi, size=shape)

    if not covered.all():
        if prior is None:
            raise DataError("uncovered pixels and no prior to fall back on")
        init = np.where(covered, init, np.where(prior.valid, prior.values, np.nan))
    return DepthMap.from_array(init)


# --- Solve ---

class InferenceResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    depths: List[DepthMap]
    trace: List[float]
    initial_objective: float
    iterations: int
    converged: bool
    initial_depths: List[DepthMap] = []


def _summed_traces(traces: List[List[float]]) -> List[float]:
    length = max(len(t) for t in traces)
    padded = [t + [t[-1]] * (length - len(t)) for t in traces]
    return [float(v) for v in np.sum(padded, axis=0)]


def _solve(stack: TermStack, init: np.ndarray, cfg: SolverConfig):
    result = irls_minimize(stack, init, cfg)
    return result.solution, result.trace, result.iterations, result.converged


def infer(problem: InferenceProblem, cfg: Optional[SolverConfig] = None) -> InferenceResult:
    """
    Initialise, minimise the clip objective with IRLS and return
    per-frame depth in metres. Frames with no coupling term between
    them are solved independently.
    """
    cfg = cfg or SolverConfig()
    inits = [
        initialize_depth(problem.bundles[t], problem.prior, problem.init, problem.seed + t)
        for t in range(problem.n_frames)
    ]
    x0 = [np.where(d.valid, to_domain(np.where(d.valid, d.values, 1.0), problem.domain), 0.0).ravel() for d in inits]

    coupled = problem.n_frames > 1 and (problem.weights.nu > 0 or _has_motion(problem))
    if coupled:
        x, trace, iterations, converged = _solve(assemble_video(problem), np.concatenate(x0), cfg)
        solutions = np.split(x, problem.n_frames)
    else:
        runs = [_solve(assemble_single(problem, t), x0[t], cfg) for t in range(problem.n_frames)]
        solutions = [r[0] for r in runs]
        trace = _summed_traces([r[1] for r in runs])
        iterations = max(r[2] for r in runs)
        converged = all(r[3] for r in runs)

    h, w = problem.shape
    depths = [DepthMap.from_array(from_domain(s, problem.domain).reshape(h, w)) for s in solutions]
    if not converged:
        logger.warning("⚠️ Inner PCG solves did not all converge")
    logger.info(f"✅ Inferred {problem.n_frames} frame(s): objective {trace[0]:.4e} -> {trace[-1]:.4e} in {iterations} IRLS steps")
    return InferenceResult(
        depths=depths,
        trace=trace,
        initial_objective=trace[0],
        iterations=iterations,
        converged=converged,
        initial_depths=inits,
    )


def problem_objective(problem: InferenceProblem, depths: List[DepthMap], eps: float = 1e-4) -> float:
    """Clip objective evaluated at metric depths."""
    stack = assemble_video(problem)
    x = np.concatenate([to_domain(np.where(d.valid, d.values, 1.0), problem.domain).ravel() for d in depths])
    return objective_value(stack, x, eps)


def candidate_contribution(problem: InferenceProblem, depths: List[DepthMap], min_confidence: float = 0.5) -> List[np.ndarray]:
    """Per pixel, the index of the confident candidate closest to the estimate, or -1."""
    labels = []
    for t, d in enumerate(depths):
        bundles = problem.bundles[t]
        dist = np.stack([
            np.where(b.valid & (b.confidence > min_confidence), np.abs(d.values - b.depth), np.inf)
            for b in bundles
        ])
        best = np.argmin(dist, axis=0)
        labels.append(np.where(np.isfinite(dist.min(axis=0)), best, -1))
    return labels

