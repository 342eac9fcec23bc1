"""Command-line surface: RGB-D novel-view warping, trajectory rendering,
oracle/gradient self-tests, and a quick benchmark.

Exit codes: 0 success, 1 validation error, 2 I/O or file-format error,
3 self-test failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import _backend, io
from .backward import backward, finite_difference, stable_points
from .bench import BenchScene, make_scene, time_workload
from .geometry import Camera, Rigid, unproject
from .pointcloud import DEPTH_PRESETS, PointCloud, build_cloud, normalize_depth
from .rasterizer import MODES, RenderSettings, render
from .reference import render_bruteforce

HOLE_ALPHA = 0.05  # pixels with accumulated alpha below this count as holes


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad flags are validation failures: exit 1
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_render_flags(cmd):
    cmd.add_argument("--r", type=float, default=4.0, help="footprint radius in pixels")
    cmd.add_argument("--m", type=float, default=None,
                     help="influence fall-off denominator (default: same as --r)")
    cmd.add_argument("--k", type=int, default=128, help="max contributors per pixel")
    cmd.add_argument("--gamma", type=float, default=1.0, help="blend exponent")
    cmd.add_argument("--mode", choices=MODES, default="alpha_composite")
    cmd.add_argument("--preset", choices=sorted(DEPTH_PRESETS),
                     help="map a [0,1] depth file through this dataset depth range")
    cmd.add_argument("--tile-size", type=int, default=16)
    cmd.add_argument("--threads", type=int, default=None)


def _load_depth(path, preset):
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pfm":
        depth = io.read_pfm(path)
        if depth.ndim != 2:
            raise ValueError(f"{path}: depth PFM must be grayscale")
    elif ext == ".ftd":
        depth = io.read_tensor(path)
        if depth.ndim != 2:
            raise ValueError(f"{path}: depth tensor must have rank 2")
    elif ext == ".png":
        depth = io.read_image(path)
        if depth.shape[2] != 1:
            raise ValueError(f"{path}: depth PNG must be grayscale")
        depth = depth[:, :, 0]
    else:
        raise ValueError(f"{path}: unsupported depth format {ext!r} (use .pfm/.ftd/.png)")
    if preset is not None:
        depth = normalize_depth(depth, DEPTH_PRESETS[preset])
    return depth


def _load_warp_inputs(args):
    image = io.read_image(args.image)
    depth = _load_depth(args.depth, args.preset)
    camera, _ = io.read_camera(args.camera)
    if image.shape[:2] != (camera.height, camera.width):
        raise ValueError(
            f"image is {image.shape[1]}x{image.shape[0]} but camera expects "
            f"{camera.width}x{camera.height}"
        )
    settings = RenderSettings(
        radius=args.r, falloff=args.m, max_contributors=args.k, gamma=args.gamma,
        width=camera.width, height=camera.height, mode=args.mode,
        tile_size=args.tile_size,
    )
    cloud = build_cloud(image, depth, camera)
    return cloud, camera, settings


def _write_warp(out_path, hole_path, rendered):
    io.write_image(out_path, np.clip(rendered.features, 0.0, 1.0))
    holes = (rendered.alpha < HOLE_ALPHA).astype(np.float64)
    io.write_image(hole_path, holes)


def _default_hole_path(out_path):
    stem, ext = os.path.splitext(out_path)
    return f"{stem}.holes{ext or '.png'}"


def cmd_warp(args) -> int:
    cloud, camera, settings = _load_warp_inputs(args)
    pose = io.read_pose(args.target_pose)
    out = render(cloud, pose, camera, settings, threads=args.threads)
    _write_warp(args.out, args.hole_mask or _default_hole_path(args.out), out)
    return 0


def cmd_trajectory(args) -> int:
    cloud, camera, settings = _load_warp_inputs(args)
    poses = _parse_trajectory(args.trajectory)
    os.makedirs(args.out_dir, exist_ok=True)
    for i, pose in enumerate(poses):
        out = render(cloud, pose, camera, settings, threads=args.threads)
        frame = os.path.join(args.out_dir, f"frame_{i:04d}.png")
        io.write_image(frame, np.clip(out.features, 0.0, 1.0))
    return 0


def _parse_trajectory(path) -> list[Rigid]:
    """Trajectory JSON: either {"poses": [pose, ...]} or a parametric arc
    {"axis", "degrees", "translation", "frames"} interpolated linearly in
    angle and translation; frame i of n sits at fraction (i + 1) / n."""
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise io.FormatError(f"{path}: invalid JSON ({exc})") from None
    if "poses" in obj:
        poses = [io.parse_pose(p, f"{path}[{i}]") for i, p in enumerate(obj["poses"])]
        if not poses:
            raise io.FormatError(f"{path}: empty pose list")
        return poses
    for key in ("axis", "degrees", "translation", "frames"):
        if key not in obj:
            raise io.FormatError(f"{path}: trajectory needs {key!r} (or a poses list)")
    frames = int(obj["frames"])
    if frames < 1:
        raise io.FormatError(f"{path}: frames must be >= 1")
    degrees = float(obj["degrees"])
    translation = np.asarray(obj["translation"], dtype=np.float64)
    axis = np.asarray(obj["axis"], dtype=np.float64)
    if degrees != 0.0 and np.linalg.norm(axis) == 0.0:
        raise io.FormatError(f"{path}: rotation axis must be nonzero")
    if degrees == 0.0 and np.linalg.norm(axis) == 0.0:
        axis = np.array([0.0, 1.0, 0.0])
    return [
        Rigid.from_axis_angle(axis, degrees * (i + 1) / frames,
                              translation * (i + 1) / frames)
        for i in range(frames)
    ]


def cmd_selftest(args) -> int:
    """Oracle equivalence plus gradient checks on random scenes."""
    rng = np.random.default_rng(args.seed)
    grid = [
        {"radius": 4.0, "max_contributors": 128},
        {"radius": 0.5, "max_contributors": 128},
        {"radius": 4.0, "max_contributors": 1},
        {"radius": 1.5, "max_contributors": 4, "mode": "wsum"},
        {"radius": 2.0, "max_contributors": 8, "mode": "wsum_norm"},
    ]
    failures = 0
    for case in range(args.cases):
        side = int(rng.integers(24, 49))
        camera = Camera(fx=0.9 * side, fy=0.9 * side, cx=side / 2, cy=side / 2,
                        width=side, height=side, near=0.1, far=100.0)
        n = int(rng.integers(50, 301))
        cloud = PointCloud(
            unproject(rng.uniform(-2, side + 2, n), rng.uniform(-2, side + 2, n),
                      rng.uniform(1.0, 8.0, n), camera),
            rng.uniform(0.0, 1.0, (n, 3)),
        )
        pose = Rigid.from_axis_angle(rng.normal(size=3), rng.uniform(-6, 6),
                                     rng.normal(scale=0.05, size=3))
        settings = RenderSettings(width=side, height=side,
                                  **grid[case % len(grid)])
        fast = render(cloud, pose, camera, settings, threads=args.threads)
        slow = render_bruteforce(cloud, pose, camera, settings)
        same = all(
            np.array_equal(getattr(fast, f), getattr(slow, f))
            for f in ("features", "alpha", "depth", "contrib_offsets",
                      "contrib_points", "contrib_weights", "contrib_depths")
        )

        grad_ok = True
        if case % len(grid) == 0:
            sub = PointCloud(cloud.positions[:24], cloud.features[:24])
            gimg = rng.normal(size=(side, side, 3))
            out = render(sub, pose, camera, settings)
            grads = backward(sub, pose, camera, settings, out, gimg)
            fd = finite_difference(sub, pose, camera, settings,
                                   lambda o: float(np.sum(gimg * o.features)), 1e-3)
            scale = max(np.abs(fd.d_features).max(), 1e-12)
            grad_ok = np.abs(grads.d_features - fd.d_features).max() / scale <= 1e-4
            keep = stable_points(sub, pose, camera, settings,
                                 pixel_margin=2e-2, depth_margin=1e-2)
            pscale = np.abs(fd.d_positions[keep]).max()
            if pscale > 1e-9:
                err = np.abs(grads.d_positions[keep] - fd.d_positions[keep]).max()
                grad_ok = grad_ok and err / pscale <= 1e-2

        ok = same and grad_ok
        failures += (not ok)
        print(f"case {case:3d}: {'ok' if ok else 'FAIL'}"
              f"{'' if same else ' [oracle mismatch]'}"
              f"{'' if grad_ok else ' [gradient mismatch]'}")
    print(f"{args.cases - failures}/{args.cases} cases passed")
    return 3 if failures else 0


def cmd_bench(args) -> int:
    scene = BenchScene(generator="uniform-box", points=args.points, seed=0)
    settings = RenderSettings(radius=args.r, max_contributors=args.k,
                              width=args.res, height=args.res)
    cloud, pose, camera = make_scene(scene, args.res, args.res)
    timing = time_workload(cloud, pose, camera, settings, iters=args.iters,
                           warmup=1, threads=args.threads)
    result = {
        "workload": {
            "points": args.points,
            "res": args.res,
            "k": args.k,
            "r": args.r,
            "iters": args.iters,
            "threads": args.threads,
            "backend": _backend.active_backend(),
        },
        "forward_ms": timing["forward_ms"],
        "backward_ms": timing["backward_ms"],
        "points_per_sec": timing["points_per_sec"],
    }
    if args.json:
        json.dump(result, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        print(f"workload: {args.points} points -> {args.res}x{args.res}, "
              f"K={args.k}, r={args.r} [{result['workload']['backend']}]")
        print(f"forward : p50 {timing['forward_ms']['p50']:8.2f} ms   "
              f"p90 {timing['forward_ms']['p90']:8.2f} ms")
        print(f"backward: p50 {timing['backward_ms']['p50']:8.2f} ms   "
              f"p90 {timing['backward_ms']['p90']:8.2f} ms")
        print(f"points/s: {timing['points_per_sec']:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pointsplat",
                     description="Differentiable point-cloud splatting renderer.")
    sub = parser.add_subparsers(dest="command", required=True)

    warp = sub.add_parser("warp", help="warp an RGB-D image to a new viewpoint")
    warp.add_argument("--image", required=True, help="input RGB PNG")
    warp.add_argument("--depth", required=True, help="depth map (.pfm/.ftd/.png)")
    warp.add_argument("--camera", required=True, help="camera intrinsics JSON")
    warp.add_argument("--target-pose", required=True,
                      help="rigid transform JSON applied to the cloud")
    warp.add_argument("--out", required=True, help="output PNG")
    warp.add_argument("--hole-mask",
                      help=f"hole mask PNG (alpha < {HOLE_ALPHA}); "
                           "default: <out>.holes.png")
    _add_render_flags(warp)
    warp.set_defaults(func=cmd_warp)

    traj = sub.add_parser("trajectory", help="render frames along a camera path")
    traj.add_argument("--image", required=True)
    traj.add_argument("--depth", required=True)
    traj.add_argument("--camera", required=True)
    traj.add_argument("--trajectory", required=True,
                      help="JSON: {poses: [...]} or {axis, degrees, translation, frames}")
    traj.add_argument("--out-dir", required=True)
    _add_render_flags(traj)
    traj.set_defaults(func=cmd_trajectory)

    self_ = sub.add_parser("selftest",
                           help="oracle-equivalence and gradient checks on random scenes")
    self_.add_argument("--seed", type=int, default=0)
    self_.add_argument("--cases", type=int, default=10)
    self_.add_argument("--threads", type=int, default=None)
    self_.set_defaults(func=cmd_selftest)

    bench = sub.add_parser("bench", help="time forward and backward passes")
    bench.add_argument("--points", type=int, default=262144)
    bench.add_argument("--res", type=int, default=256)
    bench.add_argument("--k", type=int, default=128)
    bench.add_argument("--r", type=float, default=4.0)
    bench.add_argument("--iters", type=int, default=5)
    bench.add_argument("--threads", type=int, default=None)
    bench.add_argument("--json", action="store_true", help="machine-readable output")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except io.FormatError as exc:
        print(f"pointsplat: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"pointsplat: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"pointsplat: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    raise SystemExit(main())
