from .gist import GistDescriptor, compute_gist
from .flow import (
    FlowBlockFeatures,
    compute_optical_flow,
    compute_flow_features,
    clip_flows,
    clip_flow_features,
)
from .descriptors import DenseDescriptorField, compute_dense_descriptors
from .matching import matching_score

__all__ = [
    "GistDescriptor",
    "compute_gist",
    "FlowBlockFeatures",
    "compute_optical_flow",
    "compute_flow_features",
    "clip_flows",
    "clip_flow_features",
    "DenseDescriptorField",
    "compute_dense_descriptors",
    "matching_score",
]
