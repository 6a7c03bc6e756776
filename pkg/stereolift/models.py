from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, Field, field_validator


class DepthDomain(str, Enum):
    LOG = "log"
    LINEAR = "linear"


class InitScheme(str, Enum):
    MEDIAN = "median"
    MEAN = "mean"
    PRIOR = "prior"
    RANDOM = "random"


class PenaltyKind(str, Enum):
    ROBUST = "robust"
    QUADRATIC = "quadratic"


class WarpMode(str, Enum):
    VALUE = "value"
    GRADIENT = "gradient"


class StereoFormat(str, Enum):
    ANAGLYPH = "anaglyph"
    SBS = "sbs"
    INTERLACED = "interlaced"


class BaselineKind(str, Enum):
    MEDIAN_FUSION = "median_fusion"
    MEDIAN_FUSION_UNWARPED = "median_fusion_unwarped"
    DATASET_MEAN = "dataset_mean"
    DATASET_PRIOR = "dataset_prior"


# --- Parameter groups ---

class ObjectiveWeights(BaseModel):
    data: float = Field(1.0, ge=0.0)
    alpha: float = Field(10.0, ge=0.0)
    beta: float = Field(0.5, ge=0.0)
    gamma: float = Field(10.0, ge=0.0)
    nu: float = Field(100.0, ge=0.0)
    eta: float = Field(5.0, ge=0.0)
    mu_l: float = Field(0.05, ge=0.0)
    sigma_l: float = Field(0.01, gt=0.0)

    def scaled(self, factor: float) -> "ObjectiveWeights":
        """Every term multiplier scaled by ``factor``; sigmoid parameters untouched."""
        return self.model_copy(update={
            "data": self.data * factor,
            "alpha": self.alpha * factor,
            "beta": self.beta * factor,
            "gamma": self.gamma * factor,
            "nu": self.nu * factor,
            "eta": self.eta * factor,
        })


class SolverConfig(BaseModel):
    irls_iters: int = Field(30, ge=1)
    epsilon: float = Field(1e-4, gt=0.0)
    pcg_tol: float = Field(1e-6, gt=0.0)
    pcg_max_iters: int = Field(2000, ge=1)
    ic_fill: str = "zero"
    tikhonov: float = Field(1e-9, gt=0.0)
    early_exit_tol: float = Field(1e-6, ge=0.0)
    convergence_log: Optional[str] = None

    @field_validator("ic_fill")
    @classmethod
    def validate_fill(cls, v: str) -> str:
        if v not in ("zero", "jacobi"):
            raise ValueError("ic_fill must be 'zero' or 'jacobi'")
        return v


class AlignmentConfig(BaseModel):
    levels: int = Field(3, ge=1)
    radius: int = Field(5, ge=1)
    sweeps: int = Field(4, ge=0)
    smoothness_scale: float = Field(0.005, ge=0.0)
    truncation: float = Field(2.0, gt=0.0)
    mu_s: float = 0.5
    sigma_s: float = Field(0.01, gt=0.0)


class MotionConfig(BaseModel):
    tau: float = Field(0.01, gt=0.0)
    ransac_threshold: float = Field(1.5, gt=0.0)
    ransac_trials: int = Field(500, ge=1)
    min_matches: int = Field(8, ge=4)
    min_component_area: int = Field(25, ge=1)
    contact_band: int = Field(3, ge=1)
    open_radius: int = Field(1, ge=0)
    seed: int = 0


class StereoConfig(BaseModel):
    wmax: Optional[float] = Field(None, gt=0.0)
    epsilon: float = Field(0.01, gt=0.0)
    lam: float = Field(10.0, ge=0.0)
    mu: float = Field(10.0, ge=0.0)
    window_shift: bool = True
    z_order: float = Field(4.0, ge=0.0)


# --- Manifest schema ---

class ManifestFrame(BaseModel):
    image: str
    depth: Optional[str] = None


class ManifestClip(BaseModel):
    clip_id: str
    frames: List[ManifestFrame] = Field(min_length=1)


# --- Reports ---

class ErrorReport(BaseModel):
    rel: float = Field(ge=0.0)
    log10: float = Field(ge=0.0)
    rms: float = Field(ge=0.0)
    psnr: Optional[float] = None
    pixel_count: int = Field(ge=0)
    delta1: float = Field(0.0, ge=0.0, le=1.0)
    delta2: float = Field(0.0, ge=0.0, le=1.0)
    delta3: float = Field(0.0, ge=0.0, le=1.0)
    rescaled_constant: bool = False


class SolveReport(BaseModel):
    iterations: int
    objective_trace: List[float]
    pcg_iterations: List[int] = []
    converged: bool = True
    pcg_converged: bool = True
