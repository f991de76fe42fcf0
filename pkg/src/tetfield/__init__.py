"""Delaunay-tetrahedralized radiance fields on the CPU.

A scene is a set of optimizable 3D points whose Delaunay tetrahedralization
carries constant density and linearly varying color per cell, rendered
exactly by closed-form integration in circumsphere-power order, optimized
against posed images, densified by error back-projection, and exportable as
thresholded surface meshes.
"""

from .cameras import Camera, FisheyeModel, PinholeModel, Ray, generate_ray
from .geometry import (
    BOUNDARY,
    AllCoplanarError,
    DegenerateTetError,
    InsufficientPointsError,
    TetMesh,
    Tetra,
    centroid,
    circumsphere,
    delaunay,
)
from .predicates import insphere, orient3d
from .render import (
    ImageBuffer,
    RenderAttributes,
    RenderOptions,
    integrate_segment,
    intersect_tet,
    render_image,
    render_pixel,
)
from .sorting import power_key, power_keys, sort_keys, visibility_order
from .train import LRSchedule, TrainConfig, Trainer, TrainScene

__version__ = "0.1.0"

__all__ = [
    "BOUNDARY",
    "AllCoplanarError",
    "Camera",
    "DegenerateTetError",
    "FisheyeModel",
    "ImageBuffer",
    "InsufficientPointsError",
    "LRSchedule",
    "PinholeModel",
    "Ray",
    "RenderAttributes",
    "RenderOptions",
    "TetMesh",
    "Tetra",
    "TrainConfig",
    "TrainScene",
    "Trainer",
    "centroid",
    "circumsphere",
    "delaunay",
    "generate_ray",
    "insphere",
    "integrate_segment",
    "intersect_tet",
    "orient3d",
    "power_key",
    "power_keys",
    "render_image",
    "render_pixel",
    "sort_keys",
    "visibility_order",
]
