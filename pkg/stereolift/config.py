import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from pydantic import ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .engine.errors import ConfigError
from .models import (
    AlignmentConfig,
    DepthDomain,
    InitScheme,
    MotionConfig,
    ObjectiveWeights,
    SolverConfig,
    StereoConfig,
)

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger("Stereolift.Config")


class Settings(BaseSettings):
    # Working resolution
    WORKING_WIDTH: int = 160
    WORKING_HEIGHT: int = 120

    # Retrieval
    K: int = 7
    OMEGA: float = 0.5
    FLOW_BLOCKS: int = 4
    GIST_SIZE: int = 128

    # Objective
    ALPHA: float = 10.0
    BETA: float = 0.5
    GAMMA: float = 10.0
    NU: float = 100.0
    ETA: float = 5.0
    MU_L: float = 0.05
    SIGMA_L: float = 0.01
    DOMAIN: DepthDomain = DepthDomain.LOG
    INIT: InitScheme = InitScheme.MEDIAN
    RISING_FLOW_WEIGHT: bool = False
    PARALLAX: bool = False

    # Alignment
    MU_S: float = 0.5
    SIGMA_S: float = 0.01
    ALIGN_LEVELS: int = 3
    ALIGN_RADIUS: int = 5
    ALIGN_SWEEPS: int = 4

    # Solver
    IRLS_ITERS: int = 30
    EPSILON: float = 1e-4
    PCG_TOL: float = 1e-6
    PCG_MAX_ITERS: int = 2000
    CONVERGENCE_LOG: Optional[str] = None

    # Motion segmentation
    TAU: float = 0.01
    RANSAC_SEED: int = 0

    # Stereo synthesis
    WMAX: Optional[float] = None  # None -> 25px at 640 wide, scaled
    LAMBDA: float = 10.0
    MU: float = 10.0
    STEREO_EPSILON: float = 0.01
    WINDOW_SHIFT: bool = True

    # Evaluation
    RESCALE_LO: float = 1.0
    RESCALE_HI: float = 81.0

    # Execution governance
    JOBS: int = 4
    MEMORY_FRACTION: float = 0.6
    STRICT: bool = False
    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="STEREOLIFT_",
        extra="ignore"
    )

    @field_validator("WORKING_WIDTH", "WORKING_HEIGHT", "K", "FLOW_BLOCKS", "IRLS_ITERS", "JOBS")
    @classmethod
    def validate_positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("OMEGA", "MEMORY_FRACTION")
    @classmethod
    def validate_unit_interval(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError("must lie in [0, 1]")
        return v

    @field_validator("EPSILON", "PCG_TOL", "SIGMA_L", "SIGMA_S", "TAU", "STEREO_EPSILON")
    @classmethod
    def validate_strictly_positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("must be > 0")
        return v

    @field_validator("ALPHA", "BETA", "GAMMA", "NU", "ETA", "LAMBDA", "MU")
    @classmethod
    def validate_weight(cls, v: float) -> float:
        if v < 0:
            raise ValueError("term weights must be >= 0")
        return v

    @field_validator("RESCALE_HI")
    @classmethod
    def validate_range(cls, v: float, info) -> float:
        lo = info.data.get("RESCALE_LO", 1.0)
        if not v > lo > 0:
            raise ValueError("rescale range needs hi > lo > 0")
        return v

    # --- Typed parameter groups ---

    def objective_weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(
            alpha=self.ALPHA, beta=self.BETA, gamma=self.GAMMA, nu=self.NU, eta=self.ETA,
            mu_l=self.MU_L, sigma_l=self.SIGMA_L,
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            irls_iters=self.IRLS_ITERS, epsilon=self.EPSILON, pcg_tol=self.PCG_TOL,
            pcg_max_iters=self.PCG_MAX_ITERS, convergence_log=self.CONVERGENCE_LOG,
        )

    def alignment_config(self) -> AlignmentConfig:
        return AlignmentConfig(
            levels=self.ALIGN_LEVELS, radius=self.ALIGN_RADIUS, sweeps=self.ALIGN_SWEEPS,
            mu_s=self.MU_S, sigma_s=self.SIGMA_S,
        )

    def motion_config(self) -> MotionConfig:
        return MotionConfig(tau=self.TAU, seed=self.RANSAC_SEED)

    def stereo_config(self) -> StereoConfig:
        return StereoConfig(
            wmax=self.WMAX, epsilon=self.STEREO_EPSILON, lam=self.LAMBDA, mu=self.MU,
            window_shift=self.WINDOW_SHIFT,
        )

    def rescale_range(self) -> Optional[Tuple[float, float]]:
        """The evaluation rescale range, only when RESCALE_LO/RESCALE_HI were configured."""
        if {"RESCALE_LO", "RESCALE_HI"} & self.model_fields_set:
            return self.RESCALE_LO, self.RESCALE_HI
        return None


def _normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_").upper()


def load_settings(config_file: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> Settings:
    """
    Resolve settings from environment, an optional JSON config file and
    explicit overrides (CLI flags). Later sources win.
    """
    merged: Dict[str, Any] = {}
    if config_file is not None:
        try:
            with open(config_file, "r") as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.critical(f"🚨 Config file unreadable: {config_file} ({e})")
            raise ConfigError(f"cannot read config file {config_file}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {config_file} must hold a JSON object")
        merged.update({_normalize_key(k): v for k, v in raw.items()})

    for k, v in (overrides or {}).items():
        if v is not None:
            merged[_normalize_key(k)] = v

    try:
        settings = Settings(**merged)
    except ValidationError as e:
        logger.critical(f"Configuration Load Failed: {e}")
        raise ConfigError(str(e)) from e

    logging.getLogger().setLevel(settings.LOG_LEVEL.upper())
    return settings
