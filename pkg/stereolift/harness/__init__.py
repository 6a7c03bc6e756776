from .metrics import depth_errors, rescale_array, rescale_depth_range, psnr, evaluate, mean_report
from .baselines import median_fusion, median_fusion_unwarped, dataset_mean, dataset_prior
from .sweep import sweep_candidates

__all__ = [
    "depth_errors",
    "rescale_array",
    "rescale_depth_range",
    "psnr",
    "evaluate",
    "mean_report",
    "median_fusion",
    "median_fusion_unwarped",
    "dataset_mean",
    "dataset_prior",
    "sweep_candidates",
]
