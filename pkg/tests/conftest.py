import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from stereolift.imaging.raster import DepthMap, Raster  # noqa: E402


def smooth_texture(h: int, w: int, seed: int = 0, lo: float = 0.2, hi: float = 0.8) -> np.ndarray:
    """Band-limited random texture in [lo, hi]."""
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.random((h, w)), 2.0, mode="wrap")
    noise = (noise - noise.min()) / (noise.max() - noise.min() + 1e-12)
    return lo + (hi - lo) * noise


@pytest.fixture
def texture():
    return smooth_texture


@pytest.fixture
def textured_raster():
    def make(h: int = 48, w: int = 64, seed: int = 0) -> Raster:
        base = smooth_texture(h, w, seed)
        return Raster(data=np.stack([base, np.roll(base, 3, axis=1), base[::-1]], axis=2))
    return make


@pytest.fixture
def ramp_depth():
    def make(h: int = 48, w: int = 64, near: float = 2.0, far: float = 10.0) -> DepthMap:
        rows = np.linspace(far, near, h)[:, None]
        return DepthMap.from_array(np.repeat(rows, w, axis=1))
    return make
