"""pointsplat: differentiable soft-splatting renderer for feature point clouds.

Points are splatted as finite disks, the K nearest contributors per pixel are
blended front to back, and analytic gradients flow back to per-point features
and 3D positions.  Includes pinhole camera / unprojection utilities, PLY and
image I/O, correctness oracles, and a CLI for RGB-D novel-view warping,
trajectory rendering and benchmarking.
"""

from ._backend import active_backend, available_backends
from .backward import RenderGradients, backward, finite_difference, stable_points
from .geometry import Camera, Rigid, compose, inverse, project, transform, unproject
from .pointcloud import DEPTH_PRESETS, DepthRange, PointCloud, build_cloud, normalize_depth
from .rasterizer import (
    MODES,
    RenderOutput,
    RenderSettings,
    bin_points,
    composite,
    influence,
    render,
    select_k,
)
from .reference import render_bruteforce, render_hard

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "DepthRange",
    "DEPTH_PRESETS",
    "MODES",
    "PointCloud",
    "RenderGradients",
    "RenderOutput",
    "RenderSettings",
    "Rigid",
    "active_backend",
    "available_backends",
    "backward",
    "bin_points",
    "build_cloud",
    "compose",
    "composite",
    "finite_difference",
    "influence",
    "inverse",
    "normalize_depth",
    "project",
    "render",
    "render_bruteforce",
    "render_hard",
    "select_k",
    "stable_points",
    "transform",
    "unproject",
]
