"""Forward soft rasterization of feature point clouds.

Each projected point is splatted onto a disk of `radius` pixels; its weight on
a covered pixel falls linearly from 1 at the splat center to zero, reaching 0
at `falloff` pixels (default: the disk edge).  Per pixel, the
`max_contributors` nearest splats in depth are kept, ordered by
(depth, point index), and blended front to back.  The default blend is alpha
over-compositing with opacity weight**gamma; gamma = 0 degenerates to a hard
z-buffer, and plain weighted sums (with or without normalization) are
available as alternative accumulation modes.

The expensive part (binning, per-pixel nearest-K selection, compositing) runs
in a compiled kernel when available, with a NumPy fallback that produces
bit-identical results; see `pointsplat._backend`.
"""

import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import _backend
from .geometry import Camera, Rigid, project, transform
from .pointcloud import PointCloud

MODES = ("alpha_composite", "wsum", "wsum_norm")


@dataclass(frozen=True)
class RenderSettings:
    """Rasterizer knobs. Defaults: radius 4 px, 128 contributors, gamma 1, 256x256."""

    radius: float = 4.0
    falloff: float | None = None  # None: weight reaches 0 exactly at the disk edge
    max_contributors: int = 128
    gamma: float = 1.0
    width: int = 256
    height: int = 256
    mode: str = "alpha_composite"
    tile_size: int = 16

    def __post_init__(self):
        if self.falloff is None:
            object.__setattr__(self, "falloff", float(self.radius))
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        if not self.falloff > 0:
            raise ValueError("falloff must be > 0")
        if self.max_contributors < 1:
            raise ValueError("max_contributors must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("output resolution must be positive")
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    def with_(self, **kwargs) -> "RenderSettings":
        return replace(self, **kwargs)


@dataclass(frozen=True, eq=False)
class RenderOutput:
    """Composited image plus the per-pixel contributor record.

    `features` is (H, W, C); `alpha` is the accumulated coverage
    1 - prod(1 - w**gamma) in [0, 1]; `depth` is blended with the same weights
    as the features (0 where empty).  Contributors are stored in CSR form:
    pixel (x, y) owns entries contrib_offsets[y*W + x] : contrib_offsets[y*W + x + 1]
    of (contrib_points, contrib_weights, contrib_depths), sorted ascending by
    (depth, point index).  The backward pass requires these buffers.
    """

    features: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray
    contrib_offsets: np.ndarray | None = None
    contrib_points: np.ndarray | None = None
    contrib_weights: np.ndarray | None = None
    contrib_depths: np.ndarray | None = None

    def contributors_at(self, x: int, y: int):
        """(point indices, weights, depths) for pixel column x, row y."""
        if self.contrib_offsets is None:
            raise ValueError("render output carries no contributor buffers")
        h, w = self.alpha.shape
        if not (0 <= x < w and 0 <= y < h):
            raise IndexError(f"pixel ({x}, {y}) outside {w}x{h} image")
        lo, hi = self.contrib_offsets[y * w + x : y * w + x + 2]
        return (
            self.contrib_points[lo:hi],
            self.contrib_weights[lo:hi],
            self.contrib_depths[lo:hi],
        )


def influence(center: np.ndarray, pixel: np.ndarray, radius: float, falloff: float):
    """Weight of a splat centered at `center` on pixel center `pixel`.

    Zero outside the disk of `radius` (tested on squared distances), otherwise
    1 - d/falloff clamped to [0, 1].  Broadcasts over leading dimensions.
    """
    center = np.asarray(center, dtype=np.float64)
    pixel = np.asarray(pixel, dtype=np.float64)
    dx = pixel[..., 0] - center[..., 0]
    dy = pixel[..., 1] - center[..., 1]
    dsq = dx * dx + dy * dy
    w = 1.0 - np.sqrt(dsq) / falloff
    w = np.clip(w, 0.0, 1.0)
    return np.where(dsq <= radius * radius, w, 0.0)


def tile_grid(settings: RenderSettings) -> tuple[int, int]:
    """Number of (rows, columns) of tiles covering the output image."""
    ts = settings.tile_size
    return (
        (settings.height + ts - 1) // ts,
        (settings.width + ts - 1) // ts,
    )


def bin_points(pix: np.ndarray, settings: RenderSettings) -> list[np.ndarray]:
    """Assign projected points to every tile their footprint disk touches.

    Returns one int array of point indices per tile, tiles in row-major order;
    each list is sorted ascending.  Intersection is inclusive, so a splat
    centered exactly on a tile boundary lands in both tiles.
    """
    pix = np.asarray(pix, dtype=np.float64)
    nty, ntx = tile_grid(settings)
    ts, r = settings.tile_size, settings.radius
    bins: list[list] = [[] for _ in range(nty * ntx)]
    if pix.size:
        u, v = pix[:, 0], pix[:, 1]
        txa = np.clip(np.floor((u - r) / ts).astype(np.int64), 0, ntx - 1)
        txb = np.clip(np.floor((u + r) / ts).astype(np.int64), 0, ntx - 1)
        tya = np.clip(np.floor((v - r) / ts).astype(np.int64), 0, nty - 1)
        tyb = np.clip(np.floor((v + r) / ts).astype(np.int64), 0, nty - 1)
        rsq = r * r
        for i in range(pix.shape[0]):
            for ty in range(tya[i], tyb[i] + 1):
                y0, y1 = ty * ts, min((ty + 1) * ts, settings.height)
                cy = min(max(v[i], y0), y1)
                for tx in range(txa[i], txb[i] + 1):
                    x0, x1 = tx * ts, min((tx + 1) * ts, settings.width)
                    cx = min(max(u[i], x0), x1)
                    if (cx - u[i]) ** 2 + (cy - v[i]) ** 2 <= rsq:
                        bins[ty * ntx + tx].append(i)
    return [np.asarray(b, dtype=np.int64) for b in bins]


def select_k(indices, weights, depths, k: int):
    """Keep the k nearest contributors, sorted ascending by (depth, index).

    Deterministic under any input order; equal depths break ties on index.
    """
    indices = np.asarray(indices, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    order = np.lexsort((indices, depths))[:k]
    return indices[order], weights[order], depths[order]


def _pow_gamma(w: float, gamma: float) -> float:
    if gamma == 0.0:
        return 1.0
    if gamma == 1.0:
        return w
    return w**gamma


def composite(weights, depths, features, gamma: float, mode: str = "alpha_composite"):
    """Blend one pixel's sorted contributor list; returns (feature, alpha, depth).

    This scalar kernel is the arithmetic ground truth shared with the
    brute-force oracle: front-to-back, left-to-right, no reassociation.
    """
    weights = np.asarray(weights, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    out = np.zeros(features.shape[1], dtype=np.float64)
    depth_acc = 0.0
    weight_sum = 0.0
    trans = 1.0  # transmittance in front of the current contributor
    cover = 1.0
    for i in range(weights.shape[0]):
        a = _pow_gamma(float(weights[i]), gamma)
        if mode == "alpha_composite":
            coef = a * trans
            trans = trans * (1.0 - a)
        else:
            coef = a
        cover = cover * (1.0 - a)
        out += coef * features[i]
        depth_acc += coef * float(depths[i])
        weight_sum += coef
    if mode == "wsum_norm" and weights.shape[0]:
        out /= weight_sum
        depth_acc /= weight_sum
    return out, 1.0 - cover, depth_acc


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        return max(1, os.cpu_count() or 1)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return int(threads)


def visible_projection(cloud: PointCloud, pose: Rigid, camera: Camera):
    """Transform, near-cull and project a cloud.

    Returns (u, v, z, ids): pixel coordinates and camera-space depth of the
    surviving points, plus their indices into the original cloud (ascending).
    Only z <= near is culled here; off-screen splats die in binning.
    """
    cam_pts = transform(cloud.positions, pose)
    keep = cam_pts[:, 2] > camera.near
    ids = np.nonzero(keep)[0].astype(np.int64)
    pix, z, _ = project(cam_pts[keep], camera)
    return (
        np.ascontiguousarray(pix[:, 0]),
        np.ascontiguousarray(pix[:, 1]),
        np.ascontiguousarray(z),
        ids,
    )


def render(
    cloud: PointCloud,
    pose: Rigid,
    camera: Camera,
    settings: RenderSettings,
    threads: int | None = None,
    backend: str | None = None,
) -> RenderOutput:
    """Render a cloud under a rigid motion into the camera.

    Deterministic bit-for-bit at any thread count; identical results from the
    compiled and pure-Python backends.
    """
    if (camera.width, camera.height) != (settings.width, settings.height):
        raise ValueError(
            f"camera resolution {camera.width}x{camera.height} does not match "
            f"settings {settings.width}x{settings.height}"
        )
    u, v, z, ids = visible_projection(cloud, pose, camera)
    feats = np.ascontiguousarray(cloud.features[ids])
    kernels = _backend.kernels(backend)
    image, alpha, depth, offsets, points, ws, zs = kernels.forward(
        u,
        v,
        z,
        feats,
        ids,
        settings.width,
        settings.height,
        settings.radius,
        settings.falloff,
        settings.max_contributors,
        settings.gamma,
        MODES.index(settings.mode),
        settings.tile_size,
        resolve_threads(threads),
    )
    return RenderOutput(
        features=image,
        alpha=alpha,
        depth=depth,
        contrib_offsets=offsets,
        contrib_points=points,
        contrib_weights=ws,
        contrib_depths=zs,
    )
