"""Pinhole camera model, rigid-body transforms, projection and unprojection.

Conventions, fixed for every interface in this package:

* right-handed coordinates, the camera looks down +z;
* image u points right, v points down, both in pixels;
* pixel (i, j) covers [i, i+1) x [j, j+1), so its center is (i+0.5, j+0.5);
* depth means camera-space z, not ray length.
"""

from dataclasses import dataclass

import numpy as np

ROTATION_TOL = 1e-6


def _check_rotation(rot: np.ndarray, tol: float = ROTATION_TOL) -> None:
    if rot.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {rot.shape}")
    if not np.all(np.isfinite(rot)):
        raise ValueError("rotation contains non-finite values")
    err = np.abs(rot.T @ rot - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
    det = np.linalg.det(rot)
    if abs(det - 1.0) > tol:
        raise ValueError(f"rotation must have det +1, got {det:.6g}")


def _frozen_array(obj, name: str, value, shape) -> None:
    arr = np.array(value, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    object.__setattr__(obj, name, arr)


@dataclass(frozen=True, eq=False)
class Rigid:
    """Rigid-body motion p -> R p + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        _frozen_array(self, "rotation", self.rotation, (3, 3))
        _frozen_array(self, "translation", self.translation, (3,))
        _check_rotation(self.rotation)
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("translation contains non-finite values")

    @staticmethod
    def identity() -> "Rigid":
        return Rigid(np.eye(3), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, degrees: float, translation=(0.0, 0.0, 0.0)) -> "Rigid":
        """Right-handed rotation of `degrees` about `axis` (Rodrigues), plus translation."""
        axis = np.asarray(axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if norm == 0.0:
            raise ValueError("rotation axis must be nonzero")
        x, y, z = axis / norm
        k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
        theta = np.deg2rad(degrees)
        rot = np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)
        return Rigid(rot, translation)

    @staticmethod
    def from_quaternion(wxyz, translation=(0.0, 0.0, 0.0)) -> "Rigid":
        q = np.asarray(wxyz, dtype=np.float64)
        if q.shape != (4,):
            raise ValueError(f"quaternion must have 4 components (w, x, y, z), got {q.shape}")
        norm = np.linalg.norm(q)
        if norm == 0.0:
            raise ValueError("quaternion must be nonzero")
        w, x, y, z = q / norm
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        return Rigid(rot, translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply R p + t to one (3,) point or an (N, 3) batch."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "Rigid") -> "Rigid":
        """self after other: compose(a, b).transform(p) == a.transform(b.transform(p))."""
        return Rigid(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Rigid":
        return Rigid(self.rotation.T, -(self.rotation.T @ self.translation))


def transform(points: np.ndarray, pose: Rigid) -> np.ndarray:
    return pose.transform(points)


def compose(a: Rigid, b: Rigid) -> Rigid:
    return a.compose(b)


def inverse(a: Rigid) -> Rigid:
    return a.inverse()


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics plus clip depths. Focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.1
    far: float = 100.0

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy", "near", "far"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValueError(f"camera.{name} must be finite")
            object.__setattr__(self, name, value)
        for name in ("width", "height"):
            value = getattr(self, name)
            if int(value) != value or int(value) < 1:
                raise ValueError(f"camera.{name} must be a positive integer")
            object.__setattr__(self, name, int(value))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.near < self.far):
            raise ValueError(f"require 0 < near < far, got near={self.near}, far={self.far}")


def project(points: np.ndarray, camera: Camera):
    """Perspective-project camera-space points to pixel coordinates.

    Returns (pix, z, valid): pix is (..., 2) with u = fx*x/z + cx and
    v = fy*y/z + cy, z is passed through, and valid flags z > 0.  Rows with
    z <= 0 are non-projectable (pix set to NaN); callers cull them.
    """
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != 3:
        raise ValueError(f"points must have shape (..., 3), got {p.shape}")
    z = p[:, 2]
    valid = z > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = (camera.fx * p[:, 0]) / z + camera.cx
        v = (camera.fy * p[:, 1]) / z + camera.cy
    pix = np.stack([u, v], axis=-1)
    pix[~valid] = np.nan
    if single:
        return pix[0], float(z[0]), bool(valid[0])
    return pix, z.copy(), valid


def unproject(u, v, z, camera: Camera) -> np.ndarray:
    """Lift pixel coordinates with depth z > 0 back to camera space."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    x = (u - camera.cx) * z / camera.fx
    y = (v - camera.cy) * z / camera.fy
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)
