"""Point-cloud data model and construction from feature + depth images."""

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, unproject


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points: positions (N, 3) in scene units, features (N, C) unitless."""

    positions: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        # copy=True: freezing must never touch the caller's array
        pos = np.array(self.positions, dtype=np.float64, order="C", copy=True)
        feat = np.array(self.features, dtype=np.float64, order="C", copy=True)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        if feat.ndim != 2:
            raise ValueError(f"features must be (N, C), got {feat.shape}")
        if feat.shape[0] != pos.shape[0]:
            raise ValueError(
                f"positions and features disagree on N: {pos.shape[0]} vs {feat.shape[0]}"
            )
        if feat.shape[1] < 1:
            raise ValueError("need at least one feature channel")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite values")
        if not np.all(np.isfinite(feat)):
            raise ValueError("features contain non-finite values")
        pos.setflags(write=False)
        feat.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feat)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class DepthRange:
    dmin: float
    dmax: float

    def __post_init__(self):
        if not (0.0 < self.dmin < self.dmax):
            raise ValueError(f"require 0 < dmin < dmax, got ({self.dmin}, {self.dmax})")


#: Per-dataset depth ranges used to map normalized [0, 1] depth to scene units.
DEPTH_PRESETS = {
    "matterport": DepthRange(0.1, 10.0),
    "realestate": DepthRange(1.0, 100.0),
    "kitti": DepthRange(1.0, 50.0),
}


def normalize_depth(raw: np.ndarray, depth_range: DepthRange) -> np.ndarray:
    """Map raw values in [0, 1] affinely onto [dmin, dmax]."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValueError("raw depth contains non-finite values")
    if raw.size and (raw.min() < 0.0 or raw.max() > 1.0):
        raise ValueError(
            f"raw depth must lie in [0, 1], got range [{raw.min():.6g}, {raw.max():.6g}]"
        )
    return depth_range.dmin + raw * (depth_range.dmax - depth_range.dmin)


def build_cloud(features: np.ndarray, depth: np.ndarray, camera: Camera) -> PointCloud:
    """Unproject one point per pixel with depth in (near, far).

    Pixels outside the depth range are dropped; surviving points are ordered
    row-major. Feature values pass through untouched.
    """
    features = np.asarray(features, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if features.ndim != 3:
        raise ValueError(f"features must be (H, W, C), got {features.shape}")
    if depth.shape != features.shape[:2]:
        raise ValueError(
            f"depth {depth.shape} does not match feature image {features.shape[:2]}"
        )
    if depth.shape != (camera.height, camera.width):
        raise ValueError(
            f"image {depth.shape} does not match camera resolution "
            f"({camera.height}, {camera.width})"
        )
    if not np.all(np.isfinite(depth)):
        raise ValueError("depth map contains non-finite values")

    keep = (depth > camera.near) & (depth < camera.far)
    rows, cols = np.nonzero(keep)  # np.nonzero scans row-major
    z = depth[rows, cols]
    positions = unproject(cols + 0.5, rows + 0.5, z, camera)
    return PointCloud(positions, features[rows, cols])
