import logging
from typing import Dict, Optional, Sequence, Tuple

from ..imaging.raster import DepthMap, Raster
from ..models import ErrorReport
from .metrics import evaluate, mean_report

logger = logging.getLogger("Stereolift.Harness.Sweep")

# (image, ground truth, clip id to hold out)
Query = Tuple[Raster, DepthMap, Optional[str]]


def sweep_candidates(
    pipeline,
    queries: Sequence[Query],
    ks: Sequence[int],
    rescale: Optional[Tuple[float, float]] = None,
) -> Dict[int, ErrorReport]:
    """
    Mean error over ``queries`` for every candidate count in ``ks``. Each
    query's own clip is excluded from retrieval.
    """
    results: Dict[int, ErrorReport] = {}
    for k in ks:
        reports = []
        for image, truth, clip_id in queries:
            depth = pipeline.infer_frame(image, k=k, exclude_clip=clip_id).depths[0]
            reports.append(evaluate(depth, truth, rescale))
        results[k] = mean_report(reports)
        logger.info(f"K={k}: rel {results[k].rel:.3f}, log10 {results[k].log10:.3f}, rms {results[k].rms:.3f}")
    return results
