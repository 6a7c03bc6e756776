from .raster import (
    Raster,
    DepthMap,
    FlowField,
    resize_bilinear,
    resize_nearest,
    resize_depth,
    rgb_to_luma,
    luma_array,
    spatial_gradients,
    forward_gradients,
    fill_depth_holes,
)

__all__ = [
    "Raster",
    "DepthMap",
    "FlowField",
    "resize_bilinear",
    "resize_nearest",
    "resize_depth",
    "rgb_to_luma",
    "luma_array",
    "spatial_gradients",
    "forward_gradients",
    "fill_depth_holes",
]
