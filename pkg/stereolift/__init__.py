"""Depth transfer from an RGBD database and 2D-to-3D stereo conversion."""
from .config import Settings, load_settings
from .orchestrator import ClipInference, DepthPipeline, FrameCandidates

__version__ = "0.1.0"

__all__ = ["Settings", "load_settings", "DepthPipeline", "ClipInference", "FrameCandidates", "__version__"]
