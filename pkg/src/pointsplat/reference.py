"""Correctness oracles: a naive hard z-buffer renderer and a brute-force
soft renderer.

Both are single-threaded and optimized for nothing.  They share only the
influence and composite scalar kernels with the fast path; binning and
nearest-K selection are reimplemented here independently, so a bit-exact
match against rasterizer.render genuinely cross-checks the tiled machinery.
"""

import numpy as np

from .geometry import Camera, Rigid
from .pointcloud import PointCloud
from .rasterizer import (
    RenderOutput,
    RenderSettings,
    composite,
    influence,
    visible_projection,
)


def _check_resolution(camera: Camera, settings: RenderSettings) -> None:
    if (camera.width, camera.height) != (settings.width, settings.height):
        raise ValueError(
            f"camera resolution {camera.width}x{camera.height} does not match "
            f"settings {settings.width}x{settings.height}"
        )


def render_hard(
    cloud: PointCloud, pose: Rigid, camera: Camera, settings: RenderSettings
) -> RenderOutput:
    """Naive renderer: each pixel takes the feature of the nearest point
    whose footprint covers it (covering = positive influence), ties broken by
    point index.  No blending; alpha is 1 on covered pixels.
    """
    _check_resolution(camera, settings)
    w, h = settings.width, settings.height
    u, v, z, ids = visible_projection(cloud, pose, camera)
    best_z = np.full((h, w), np.inf)
    best_row = np.full((h, w), -1, dtype=np.int64)
    best_w = np.zeros((h, w))
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    for row in range(u.shape[0]):
        x0 = max(int(np.ceil(u[row] - settings.radius - 0.5)), 0)
        x1 = min(int(np.floor(u[row] + settings.radius - 0.5)), w - 1)
        y0 = max(int(np.ceil(v[row] - settings.radius - 0.5)), 0)
        y1 = min(int(np.floor(v[row] + settings.radius - 0.5)), h - 1)
        if x0 > x1 or y0 > y1:
            continue
        centers = np.stack(
            np.broadcast_arrays(
                xs[None, x0 : x1 + 1], ys[y0 : y1 + 1, None]
            ),
            axis=-1,
        )
        wgt = influence((u[row], v[row]), centers, settings.radius, settings.falloff)
        sl = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        better = (wgt > 0.0) & (z[row] < best_z[sl])
        best_z[sl][better] = z[row]
        best_row[sl][better] = row
        best_w[sl][better] = wgt[better]

    covered = best_row >= 0
    nchan = cloud.channels
    feats = np.zeros((h, w, nchan))
    feats[covered] = cloud.features[ids[best_row[covered]]]
    depth = np.where(covered, best_z, 0.0)
    ncov = int(covered.sum())
    offsets = np.zeros(h * w + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(covered.ravel())
    return RenderOutput(
        features=feats,
        alpha=covered.astype(np.float64),
        depth=depth,
        contrib_offsets=offsets,
        contrib_points=ids[best_row[covered].ravel()] if ncov else np.empty(0, np.int64),
        contrib_weights=best_w[covered].ravel(),
        contrib_depths=best_z[covered].ravel(),
    )


def render_bruteforce(
    cloud: PointCloud, pose: Rigid, camera: Camera, settings: RenderSettings
) -> RenderOutput:
    """Soft renderer with the same contract as rasterizer.render, computed by
    testing every point against every pixel.  O(N * pixels); oracle only.
    """
    _check_resolution(camera, settings)
    w, h = settings.width, settings.height
    k, gamma, mode = settings.max_contributors, settings.gamma, settings.mode
    u, v, z, ids = visible_projection(cloud, pose, camera)
    feats = cloud.features[ids]
    nchan = cloud.channels

    image = np.zeros((h, w, nchan))
    alpha = np.zeros((h, w))
    depth = np.zeros((h, w))
    offsets = np.zeros(h * w + 1, dtype=np.int64)
    centers = np.stack([u, v], axis=-1)
    all_points, all_weights, all_depths = [], [], []
    for py in range(h):
        for px in range(w):
            wgt = influence(centers, (px + 0.5, py + 0.5), settings.radius, settings.falloff)
            cand = np.nonzero(wgt > 0.0)[0]
            kept = sorted(cand, key=lambda r: (z[r], r))[:k]
            offsets[py * w + px + 1] = offsets[py * w + px] + len(kept)
            if not kept:
                continue
            ws = wgt[kept]
            zs = z[kept]
            image[py, px], alpha[py, px], depth[py, px] = composite(
                ws, zs, feats[kept], gamma, mode
            )
            all_points.append(ids[kept])
            all_weights.append(ws)
            all_depths.append(zs)

    cat = lambda parts, dt: (
        np.concatenate(parts) if parts else np.empty(0, dtype=dt)
    )
    return RenderOutput(
        features=image,
        alpha=alpha,
        depth=depth,
        contrib_offsets=offsets,
        contrib_points=cat(all_points, np.int64),
        contrib_weights=cat(all_weights, np.float64),
        contrib_depths=cat(all_depths, np.float64),
    )
