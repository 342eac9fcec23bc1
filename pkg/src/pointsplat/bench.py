"""Reproducible performance experiments for the rasterizer.

Scenes are generated deterministically from (generator, points, seed),
timings wrap only render/backward calls (never I/O or scene construction),
and reports can be compared against a stored baseline, flagging rows that
regressed by more than 15%.

Run a suite from a JSON config with:

    python3 -m pointsplat.bench config.json [--baseline baseline.json] [--out report.json]
"""

import json
import os
import platform
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import _backend
from .backward import backward
from .geometry import Camera, Rigid, unproject
from .pointcloud import PointCloud, build_cloud
from .rasterizer import RenderSettings, render

GENERATORS = ("uniform-box", "depth-plane", "rgbd-synthetic-room")

REGRESSION_THRESHOLD = 0.15


@dataclass(frozen=True)
class BenchScene:
    generator: str
    points: int
    seed: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"generator must be one of {GENERATORS}")
        if self.points < 1:
            raise ValueError("points must be >= 1")


def make_room_rgbd(camera: Camera, checker: float = 1.0):
    """RGB-D image of the inside of an axis-aligned box room.

    The camera sits at the origin looking down +z; walls at x = +-3,
    floor/ceiling at y = +-2, back wall at z = 7.  Returns (image, depth)
    with depth as camera-space z in (1, 7].
    """
    ys, xs = np.mgrid[0 : camera.height, 0 : camera.width]
    dx = (xs + 0.5 - camera.cx) / camera.fx
    dy = (ys + 0.5 - camera.cy) / camera.fy
    with np.errstate(divide="ignore"):
        t_wall = np.where(dx != 0.0, 3.0 / np.abs(dx), np.inf)
        t_ylim = np.where(dy != 0.0, 2.0 / np.abs(dy), np.inf)
    t_back = np.full_like(dx, 7.0)
    depth = np.minimum(np.minimum(t_wall, t_ylim), t_back)

    base = np.empty(depth.shape + (3,))
    base[(depth == t_back)] = (0.85, 0.85, 0.80)
    base[(depth == t_wall) & (dx < 0)] = (0.75, 0.25, 0.20)
    base[(depth == t_wall) & (dx >= 0)] = (0.20, 0.35, 0.75)
    base[(depth == t_ylim) & (dy >= 0)] = (0.25, 0.60, 0.25)
    base[(depth == t_ylim) & (dy < 0)] = (0.90, 0.90, 0.95)

    hit = np.stack([dx * depth, dy * depth, depth], axis=-1)
    parity = (
        np.floor(hit[..., 0] * checker)
        + np.floor(hit[..., 1] * checker)
        + np.floor(hit[..., 2] * checker)
    ) % 2.0
    shade = 0.72 + 0.28 * parity
    return np.clip(base * shade[..., None], 0.0, 1.0), depth


def room_camera(side: int) -> Camera:
    return Camera(
        fx=0.55 * side, fy=0.55 * side, cx=side / 2.0, cy=side / 2.0,
        width=side, height=side, near=0.5, far=20.0,
    )


def make_scene(scene: BenchScene, width: int, height: int):
    """Deterministic (cloud, pose, camera) for a generator spec.

    The camera is sized to the requested render resolution; clouds cover the
    full frame so coverage stays constant as the point count scales.
    """
    rng = np.random.default_rng(scene.seed)
    camera = Camera(
        fx=1.1 * width, fy=1.1 * height, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height, near=0.1, far=100.0,
    )
    if scene.generator == "uniform-box":
        u = rng.uniform(0.0, width, scene.points)
        v = rng.uniform(0.0, height, scene.points)
        z = rng.uniform(2.0, 6.0, scene.points)
        cloud = PointCloud(
            unproject(u, v, z, camera), rng.uniform(0.0, 1.0, (scene.points, 3))
        )
    elif scene.generator == "depth-plane":
        u = rng.uniform(0.0, width, scene.points)
        v = rng.uniform(0.0, height, scene.points)
        z = np.full(scene.points, 4.0)
        cloud = PointCloud(
            unproject(u, v, z, camera), rng.uniform(0.0, 1.0, (scene.points, 3))
        )
    else:  # rgbd-synthetic-room
        side = int(round(np.sqrt(scene.points)))
        if side * side != scene.points:
            raise ValueError(
                f"rgbd-synthetic-room needs a square point count, got {scene.points}"
            )
        source = room_camera(side)
        image, depth = make_room_rgbd(source)
        cloud = build_cloud(image, depth, source)
    return cloud, Rigid.identity(), camera


def _percentiles(samples_ms):
    return {
        "p50": float(np.percentile(samples_ms, 50)),
        "p90": float(np.percentile(samples_ms, 90)),
    }


def time_workload(cloud, pose, camera, settings, iters=5, warmup=1,
                  threads=None, backend=None):
    """Median/percentile wall times (ms) for forward and backward, timed
    around the render calls only."""
    rng = np.random.default_rng(7)
    grad = rng.normal(size=(settings.height, settings.width, cloud.channels))
    out = None
    fwd, bwd = [], []
    for i in range(warmup + iters):
        t0 = time.perf_counter()
        out = render(cloud, pose, camera, settings, threads=threads, backend=backend)
        t1 = time.perf_counter()
        grads = backward(cloud, pose, camera, settings, out, grad,
                         threads=threads, backend=backend)
        t2 = time.perf_counter()
        if i >= warmup:
            fwd.append(1e3 * (t1 - t0))
            bwd.append(1e3 * (t2 - t1))
        del grads
    return {
        "forward_ms": _percentiles(fwd),
        "backward_ms": _percentiles(bwd),
        "points_per_sec": float(len(cloud) / (np.median(fwd) / 1e3)),
        "contributors": int(out.contrib_offsets[-1]),
    }


def default_config() -> dict:
    """Small backend comparison plus the fixed full-scale row
    (262,144 points into 256x256, 128 contributors, radius 4)."""
    return {
        "iters": 5,
        "warmup": 1,
        "rows": [
            {
                "scene": {"generator": "uniform-box", "points": 65536, "seed": 0},
                "settings": {"radius": 4.0, "max_contributors": 128,
                             "width": 128, "height": 128},
                "backend": "compiled",
            },
            {
                "scene": {"generator": "uniform-box", "points": 65536, "seed": 0},
                "settings": {"radius": 4.0, "max_contributors": 128,
                             "width": 128, "height": 128},
                "backend": "python",
            },
            {
                "scene": {"generator": "rgbd-synthetic-room", "points": 262144,
                          "seed": 0},
                "settings": {"radius": 4.0, "max_contributors": 128,
                             "width": 256, "height": 256},
                "backend": "compiled",
            },
        ],
    }


def _row_key(row) -> str:
    scene, settings = row["scene"], row["settings"]
    return json.dumps({"scene": scene, "settings": settings,
                       "backend": row.get("backend")}, sort_keys=True)


def run_suite(config: dict, baseline: dict | None = None) -> dict:
    """Run every row of the config; returns the report dict.

    Rows whose forward or backward median exceeds the stored baseline by more
    than 15% land in report["regressions"].  Without a baseline the report is
    informational only.
    """
    iters = int(config.get("iters", 5))
    warmup = int(config.get("warmup", 1))
    threads = config.get("threads")
    rows_out = []
    for row in config["rows"]:
        backend = row.get("backend")
        if backend is not None and backend not in _backend.available_backends():
            rows_out.append({**row, "skipped": f"backend {backend!r} unavailable"})
            continue
        scene = BenchScene(**row["scene"])
        settings = RenderSettings(**row["settings"])
        cloud, pose, camera = make_scene(scene, settings.width, settings.height)
        timing = time_workload(cloud, pose, camera, settings, iters=iters,
                               warmup=warmup, threads=threads, backend=backend)
        rows_out.append({**row, **timing})

    report = {
        "env": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "platform": platform.platform(),
            "cpu_count": os.cpu_count(),
            "threads": threads,
            "default_backend": _backend.active_backend(),
            "build": "compiled+python" if "compiled" in _backend.available_backends()
                     else "python-only",
        },
        "rows": rows_out,
        "regressions": [],
    }
    if baseline is not None:
        ref = {_row_key(r): r for r in baseline.get("rows", [])}
        for row in rows_out:
            if "forward_ms" not in row:
                continue
            old = ref.get(_row_key(row))
            if old is None or "forward_ms" not in old:
                continue
            for phase in ("forward_ms", "backward_ms"):
                ratio = row[phase]["p50"] / old[phase]["p50"]
                if ratio > 1.0 + REGRESSION_THRESHOLD:
                    report["regressions"].append(
                        {"row": _row_key(row), "phase": phase,
                         "ratio": round(ratio, 3)}
                    )
    return report


def markdown_report(report: dict) -> str:
    lines = [
        "| scene | points | res | K | r | backend | fwd p50 (ms) | fwd p90 | bwd p50 | bwd p90 | pts/s |",
        "|---|---|---|---|---|---|---|---|---|---|---|",
    ]
    for row in report["rows"]:
        if "skipped" in row:
            lines.append(f"| {row['scene']['generator']} | - | - | - | - | "
                         f"{row.get('backend')} | skipped: {row['skipped']} |||||")
            continue
        s, st = row["scene"], row["settings"]
        lines.append(
            "| {g} | {n} | {w}x{h} | {k} | {r} | {b} | {f50:.1f} | {f90:.1f} "
            "| {b50:.1f} | {b90:.1f} | {pps:.2e} |".format(
                g=s["generator"], n=s["points"], w=st["width"], h=st["height"],
                k=st.get("max_contributors", 128), r=st.get("radius", 4.0),
                b=row.get("backend") or report["env"]["default_backend"],
                f50=row["forward_ms"]["p50"], f90=row["forward_ms"]["p90"],
                b50=row["backward_ms"]["p50"], b90=row["backward_ms"]["p90"],
                pps=row["points_per_sec"],
            )
        )
    if report["regressions"]:
        lines.append("")
        lines.append(f"**{len(report['regressions'])} regression(s) over "
                     f"{int(REGRESSION_THRESHOLD * 100)}% vs baseline:**")
        for reg in report["regressions"]:
            lines.append(f"- {reg['phase']} x{reg['ratio']}: {reg['row']}")
    return "\n".join(lines)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="pointsplat.bench",
        description="Run a rasterizer benchmark suite from a JSON config.",
    )
    parser.add_argument("config", nargs="?", help="suite config JSON (default: built-in)")
    parser.add_argument("--baseline", help="baseline report JSON to compare against")
    parser.add_argument("--out", help="write the report JSON here")
    args = parser.parse_args(argv)

    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
    else:
        config = default_config()
    baseline = None
    if args.baseline:
        try:
            with open(args.baseline) as fh:
                baseline = json.load(fh)
        except FileNotFoundError:
            print(f"baseline {args.baseline} not found; report-only mode",
                  file=sys.stderr)
    report = run_suite(config, baseline)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    print(markdown_report(report))
    return 1 if report["regressions"] else 0


if __name__ == "__main__":
    raise SystemExit(main())
