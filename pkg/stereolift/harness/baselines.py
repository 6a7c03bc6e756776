"""Reference depth estimators the full objective is compared against."""
from typing import List, Sequence

import numpy as np

from ..database.index import DatabaseIndex
from ..engine.errors import EmptyDatabaseError
from ..imaging.raster import DepthMap
from ..inference.depth import CandidateBundle, initialize_depth
from ..models import DepthDomain, InitScheme


def median_fusion(bundles: List[CandidateBundle], prior: DepthMap) -> DepthMap:
    """Per-pixel median of the warped candidates, no optimisation."""
    return initialize_depth(bundles, prior, InitScheme.MEDIAN)


def median_fusion_unwarped(candidates: Sequence[DepthMap], prior: DepthMap) -> DepthMap:
    """Median of the raw candidate depths, skipping alignment."""
    return initialize_depth([CandidateBundle.from_depth(c) for c in candidates], prior, InitScheme.MEDIAN)


def dataset_mean(index: DatabaseIndex) -> DepthMap:
    """Mean of every valid database depth (geometric in the log domain) as a constant map."""
    samples = np.concatenate([r.depth.values[r.depth.valid] for r in index.records])
    if samples.size == 0:
        raise EmptyDatabaseError("no valid depth in the database")
    if index.domain == DepthDomain.LOG:
        value = float(10.0 ** np.mean(np.log10(samples)))
    else:
        value = float(np.mean(samples))
    w, h = index.working_resolution
    return DepthMap.from_array(np.full((h, w), value))


def dataset_prior(index: DatabaseIndex) -> DepthMap:
    return index.prior
