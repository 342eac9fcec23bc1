"""Analytic gradients of a scalar loss through the renderer.

Compositing is linear in the features for fixed geometry, so the feature
gradient is the exact adjoint of the forward blend.  Position gradients chain
through the influence weight (piecewise linear in screen distance; the
subderivative at the disk edge is the interior one, the saturated clamp at
the splat center contributes zero), then through the perspective projection
Jacobian and the rigid transform.  The discrete parts - which K points a
pixel keeps and their depth order - are treated as constants, so every point
in a pixel's z-buffer receives feature and position gradients through its
weight, not just the nearest one.
"""

from dataclasses import dataclass

import numpy as np

from . import _backend
from .geometry import Camera, Rigid, transform
from .pointcloud import PointCloud
from .rasterizer import (
    MODES,
    RenderOutput,
    RenderSettings,
    render,
    resolve_threads,
    visible_projection,
)


@dataclass(frozen=True, eq=False)
class RenderGradients:
    """Per-point loss gradients, aligned with the input cloud."""

    d_features: np.ndarray  # (N, C)
    d_positions: np.ndarray  # (N, 3)


def backward(
    cloud: PointCloud,
    pose: Rigid,
    camera: Camera,
    settings: RenderSettings,
    output: RenderOutput,
    grad_features_image: np.ndarray,
    threads: int | None = None,
    backend: str | None = None,
) -> RenderGradients:
    """Pull a loss gradient on the rendered feature image back to the cloud.

    `output` must be the RenderOutput produced by `render` on exactly these
    inputs; its contributor buffers drive the adjoint.
    """
    if output.contrib_offsets is None:
        raise ValueError("render output carries no contributor buffers")
    grad = np.ascontiguousarray(grad_features_image, dtype=np.float64)
    shape = (settings.height, settings.width, cloud.channels)
    if grad.shape != shape:
        raise ValueError(f"loss gradient must have shape {shape}, got {grad.shape}")
    if output.features.shape != shape:
        raise ValueError(
            f"render output shape {output.features.shape} does not match {shape}"
        )
    if output.contrib_offsets.shape[0] != settings.height * settings.width + 1:
        raise ValueError("contributor offsets do not match the output resolution")

    u, v, z, ids = visible_projection(cloud, pose, camera)
    inv = np.full(len(cloud), -1, dtype=np.int64)
    inv[ids] = np.arange(ids.shape[0], dtype=np.int64)
    rows = inv[output.contrib_points]
    if rows.size and rows.min() < 0:
        raise ValueError("contributor buffers do not belong to these render inputs")

    kernels = _backend.kernels(backend)
    dfeat, du, dv = kernels.backward(
        u,
        v,
        np.ascontiguousarray(cloud.features[ids]),
        grad,
        np.ascontiguousarray(output.contrib_offsets, dtype=np.int64),
        np.ascontiguousarray(rows, dtype=np.int64),
        np.ascontiguousarray(output.contrib_weights, dtype=np.float64),
        settings.falloff,
        settings.gamma,
        MODES.index(settings.mode),
        resolve_threads(threads),
    )

    # Screen-space gradients -> camera space via the projection Jacobian,
    # then back through the rigid transform.
    cam = transform(cloud.positions, pose)[ids]
    dpx = du * (camera.fx / z)
    dpy = dv * (camera.fy / z)
    dpz = -(dpx * cam[:, 0] + dpy * cam[:, 1]) / z
    dcam = np.stack([dpx, dpy, dpz], axis=-1)

    d_features = np.zeros((len(cloud), cloud.channels))
    d_positions = np.zeros((len(cloud), 3))
    d_features[ids] = dfeat
    d_positions[ids] = dcam @ pose.rotation
    return RenderGradients(d_features=d_features, d_positions=d_positions)


def finite_difference(
    cloud: PointCloud,
    pose: Rigid,
    camera: Camera,
    settings: RenderSettings,
    loss_fn,
    step: float,
    backend: str | None = None,
) -> RenderGradients:
    """Central-difference gradients of loss_fn(render(...)) per coordinate.

    Test oracle; runs 2 N (C + 3) renders.  Near a footprint edge, a depth
    tie, or a nearest-K cutoff the forward pass is discontinuous and the
    quotient diverges from the subderivative; callers exclude such points
    (see stable_points).
    """
    if step <= 0:
        raise ValueError("step must be > 0")

    def loss_of(positions, features) -> float:
        out = render(
            PointCloud(positions, features), pose, camera, settings,
            threads=1, backend=backend,
        )
        return float(loss_fn(out))

    pos0 = cloud.positions.copy()
    feat0 = cloud.features.copy()
    d_features = np.zeros_like(feat0)
    d_positions = np.zeros_like(pos0)
    for i in range(feat0.shape[0]):
        for c in range(feat0.shape[1]):
            bumped = feat0.copy()
            bumped[i, c] = feat0[i, c] + step
            hi = loss_of(pos0, bumped)
            bumped[i, c] = feat0[i, c] - step
            lo = loss_of(pos0, bumped)
            d_features[i, c] = (hi - lo) / (2.0 * step)
        for c in range(3):
            bumped = pos0.copy()
            bumped[i, c] = pos0[i, c] + step
            hi = loss_of(bumped, feat0)
            bumped[i, c] = pos0[i, c] - step
            lo = loss_of(bumped, feat0)
            d_positions[i, c] = (hi - lo) / (2.0 * step)
    return RenderGradients(d_features=d_features, d_positions=d_positions)


def stable_points(
    cloud: PointCloud,
    pose: Rigid,
    camera: Camera,
    settings: RenderSettings,
    pixel_margin: float = 1e-2,
    depth_margin: float = 1e-2,
) -> np.ndarray:
    """Mask of points whose position gradient is finite-difference checkable.

    Flags (False) every point that sits within `pixel_margin` pixels of a
    kink of its influence on some pixel center (disk edge, falloff zero
    crossing, or the saturated clamp at the splat center), and both parties of
    any per-pixel depth ordering closer than `depth_margin` - including the
    pair that straddles the nearest-K cutoff.
    """
    u, v, z, ids = visible_projection(cloud, pose, camera)
    ok = np.ones(len(cloud), dtype=bool)
    edge = min(settings.radius, settings.falloff)
    reach = settings.radius + pixel_margin
    for py in range(settings.height):
        dy = (py + 0.5) - v
        for px in range(settings.width):
            dx = (px + 0.5) - u
            dist = np.hypot(dx, dy)
            near_kink = (np.abs(dist - edge) < pixel_margin) | (dist < pixel_margin)
            ok[ids[near_kink & (dist <= reach)]] = False
            cand = np.nonzero(dist <= reach)[0]
            if cand.size < 2:
                continue
            order = cand[np.argsort(z[cand])]
            gaps = np.diff(z[order])
            k = settings.max_contributors
            for g in np.nonzero(gaps < depth_margin)[0]:
                if g < k:  # both kept, or straddling the nearest-K cutoff
                    ok[ids[order[g : g + 2]]] = False
    return ok
