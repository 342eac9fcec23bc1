"""File formats: PLY point clouds, 8-bit PNG images, PFM float maps, raw
tensor dumps, and camera/pose JSON.

Every reader/writer pair round-trips bit-exactly at its storage precision
(f32 for PLY/PFM/tensor dumps, 1/255 steps for PNG).  Malformed input raises
FormatError with the offending field in the message, never a truncated
result.
"""

import json
import struct

import numpy as np
from PIL import Image

from .geometry import Camera, Rigid
from .pointcloud import PointCloud


class FormatError(Exception):
    """A file does not conform to its format."""


# ---------------------------------------------------------------------------
# PLY

_PLY_FLOAT = {"float", "float32"}
_PLY_DOUBLE = {"double", "float64"}
_PLY_UCHAR = {"uchar", "uint8"}
_PLY_SIZES = {"float": 4, "float32": 4, "double": 8, "float64": 8, "uchar": 1, "uint8": 1}
_PLY_NUMPY = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
              "uchar": "u1", "uint8": "u1"}


def read_ply(path) -> PointCloud:
    """Read an ASCII or binary-little-endian PLY vertex cloud.

    x, y, z float properties are required; every other float property becomes
    a feature channel in header order, and uchar red/green/blue become
    features scaled to [0, 1].  Elements after the vertex block are ignored.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"ply"):
        raise FormatError(f"{path}: missing 'ply' magic")
    end = data.find(b"end_header")
    if end < 0:
        raise FormatError(f"{path}: missing end_header")
    body_start = data.index(b"\n", end) + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    count = None
    props: list[tuple[str, str]] = []  # (type, name)
    in_vertex = False
    for line in header[1:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise FormatError(f"{path}: unsupported format {parts[1]!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if parts[1] == "vertex":
                count = int(parts[2])
                in_vertex = True
            else:
                if count is None:
                    raise FormatError(
                        f"{path}: element {parts[1]!r} precedes vertex element"
                    )
                in_vertex = False
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list":
                raise FormatError(f"{path}: list property in vertex element")
            props.append((parts[1], parts[2]))
    if fmt is None or count is None:
        raise FormatError(f"{path}: header lacks format or vertex element")

    names = [name for _, name in props]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise FormatError(f"{path}: missing vertex property {axis!r}")
        ptype = props[names.index(axis)][0]
        if ptype not in _PLY_FLOAT | _PLY_DOUBLE:
            raise FormatError(f"{path}: property {axis!r} must be float, is {ptype}")
    for ptype, name in props:
        if ptype not in _PLY_NUMPY:
            raise FormatError(f"{path}: unsupported property type {ptype!r} ({name})")
        if ptype in _PLY_UCHAR and name not in ("red", "green", "blue", "alpha"):
            raise FormatError(f"{path}: uchar property {name!r} is not a color")

    if fmt == "ascii":
        text = data[body_start:].decode("ascii", errors="replace").split("\n")
        rows = []
        for i in range(count):
            parts = text[i].split() if i < len(text) else []
            if len(parts) != len(props):
                raise FormatError(f"{path}: vertex row {i} has {len(parts)} values, "
                                  f"expected {len(props)}")
            rows.append([float(p) for p in parts])
        table = np.asarray(rows, dtype=np.float64).reshape(count, len(props))
        columns = {name: table[:, i] for i, (_, name) in enumerate(props)}
    else:
        dtype = np.dtype([(name, _PLY_NUMPY[ptype]) for ptype, name in props])
        need = dtype.itemsize * count
        if len(data) - body_start < need:
            raise FormatError(f"{path}: binary payload truncated "
                              f"({len(data) - body_start} < {need} bytes)")
        rec = np.frombuffer(data, dtype=dtype, count=count, offset=body_start)
        columns = {name: rec[name].astype(np.float64) for _, name in props}

    positions = np.stack([columns["x"], columns["y"], columns["z"]], axis=-1)
    feats = []
    for ptype, name in props:
        if name in ("x", "y", "z") or name == "alpha":
            continue
        if ptype in _PLY_UCHAR:
            feats.append(columns[name] / 255.0)
        else:
            feats.append(columns[name])
    if not feats:
        feats = [np.zeros(count)]  # featureless files get one zero channel
    return PointCloud(positions, np.stack(feats, axis=-1))


def write_ply(path, cloud: PointCloud, ascii_format: bool = False,
              feature_names=None) -> None:
    """Write positions and feature channels as float32 vertex properties."""
    n, c = len(cloud), cloud.channels
    if feature_names is None:
        feature_names = [f"feat_{i}" for i in range(c)]
    if len(feature_names) != c:
        raise ValueError(f"need {c} feature names, got {len(feature_names)}")
    fmt = "ascii" if ascii_format else "binary_little_endian"
    header = ["ply", f"format {fmt} 1.0", f"element vertex {n}"]
    header += [f"property float {axis}" for axis in "xyz"]
    header += [f"property float {name}" for name in feature_names]
    header.append("end_header")
    table = np.hstack([cloud.positions, cloud.features]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if ascii_format:
            for row in table:
                fh.write((" ".join("%.9g" % x for x in row) + "\n").encode("ascii"))
        else:
            fh.write(table.tobytes())


# ---------------------------------------------------------------------------
# PNG (8-bit, via Pillow)


def read_image(path) -> np.ndarray:
    """8-bit PNG (gray or RGB) to an (H, W, {1,3}) array in [0, 1]."""
    with Image.open(path) as img:
        if img.mode == "P":
            img = img.convert("RGB")
        if img.mode not in ("L", "RGB"):
            raise FormatError(
                f"{path}: unsupported image mode {img.mode!r} (need 8-bit gray or RGB)"
            )
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def write_image(path, image: np.ndarray) -> None:
    """(H, W[, {1,3}]) values in [0, 1] to an 8-bit PNG, rounded to nearest."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"image must be (H, W, 1|3), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("image values must be finite and within [0, 1]")
    quantized = np.rint(arr * 255.0).astype(np.uint8)
    if quantized.shape[2] == 1:
        Image.fromarray(quantized[:, :, 0], mode="L").save(path, format="PNG")
    else:
        Image.fromarray(quantized, mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# PFM (float maps, little-endian, rows stored bottom-up per convention)


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"PF", b"Pf"):
            raise FormatError(f"{path}: not a PFM file (magic {magic!r})")
        channels = 3 if magic == b"PF" else 1
        dims = fh.readline().split()
        if len(dims) != 2:
            raise FormatError(f"{path}: malformed PFM dimensions")
        width, height = int(dims[0]), int(dims[1])
        scale = float(fh.readline())
        payload = fh.read(width * height * channels * 4)
    if len(payload) != width * height * channels * 4:
        raise FormatError(f"{path}: PFM payload truncated")
    dt = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(payload, dtype=dt).reshape(height, width, channels)
    arr = np.flipud(arr).astype(np.float64)
    return arr[:, :, 0] if channels == 1 else arr


def write_pfm(path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        channels = 1
    elif arr.ndim == 3 and arr.shape[2] == 3:
        channels = 3
    else:
        raise ValueError(f"PFM stores (H, W) or (H, W, 3), got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(b"PF\n" if channels == 3 else b"Pf\n")
        fh.write(f"{arr.shape[1]} {arr.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.flipud(arr.reshape(arr.shape[0], -1)).astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# Raw tensor dump: magic FTD1, u32 rank, u32 dims[rank], f32 payload (all LE)

_TENSOR_MAGIC = b"FTD1"


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _TENSOR_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {_TENSOR_MAGIC!r}")
    if len(data) < 8:
        raise FormatError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + 4 * rank:
        raise FormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}I", data, 8)
    expected = int(np.prod(dims, dtype=np.int64)) * 4 if rank else 4
    payload = data[8 + 4 * rank:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, dims {dims} require {expected}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)


def write_tensor(path, data: np.ndarray) -> None:
    arr = np.asarray(data, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype("<f4").tobytes())


# ---------------------------------------------------------------------------
# Camera / pose JSON


def _require(mapping, key, context, path):
    if key not in mapping:
        raise FormatError(f"{path}: missing {context}.{key}")
    return mapping[key]


def parse_pose(obj, path="pose") -> Rigid:
    """Pose dict {rotation: 9 floats row-major | quaternion: wxyz, translation}.

    Near-orthonormal rotations (within 1e-3) are re-orthonormalized via SVD;
    anything farther off is rejected.
    """
    if "pose" in obj and isinstance(obj["pose"], dict):
        obj = obj["pose"]
    translation = np.asarray(obj.get("translation", (0.0, 0.0, 0.0)), dtype=np.float64)
    if translation.shape != (3,):
        raise FormatError(f"{path}: pose.translation must have 3 entries")
    if "quaternion" in obj:
        quat = np.asarray(obj["quaternion"], dtype=np.float64)
        if quat.shape != (4,):
            raise FormatError(f"{path}: pose.quaternion must be [w, x, y, z]")
        if np.linalg.norm(quat) == 0:
            raise FormatError(f"{path}: pose.quaternion must be nonzero")
        return Rigid.from_quaternion(quat, translation)
    rotation = np.asarray(_require(obj, "rotation", "pose", path), dtype=np.float64)
    if rotation.shape == (9,):
        rotation = rotation.reshape(3, 3)
    if rotation.shape != (3, 3):
        raise FormatError(f"{path}: pose.rotation must be 9 row-major floats")
    err = np.abs(rotation.T @ rotation - np.eye(3)).max()
    if err > 1e-3:
        raise FormatError(
            f"{path}: pose.rotation is not orthonormal (max error {err:.2g} > 1e-3)"
        )
    if err > 1e-9:
        uu, _, vt = np.linalg.svd(rotation)
        rotation = uu @ vt
    if np.linalg.det(rotation) < 0:
        raise FormatError(f"{path}: pose.rotation is a reflection (det < 0)")
    return Rigid(rotation, translation)


def read_pose(path) -> Rigid:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
    return parse_pose(obj, str(path))


def read_camera(path, normalized: bool | None = None) -> tuple[Camera, Rigid]:
    """Camera JSON: intrinsics {fx fy cx cy width height near far} + optional pose.

    With normalized=True (or "normalized_intrinsics": true in the file,
    RealEstate-style), fx/cx are fractions of width and fy/cy of height and
    are converted to pixels on load.
    """
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
    intr = _require(obj, "intrinsics", "camera", path)
    values = {}
    for key in ("fx", "fy", "cx", "cy", "width", "height"):
        values[key] = _require(intr, key, "intrinsics", path)
    if normalized is None:
        normalized = bool(obj.get("normalized_intrinsics", False))
    width, height = values["width"], values["height"]
    if normalized:
        values["fx"] *= width
        values["cx"] *= width
        values["fy"] *= height
        values["cy"] *= height
    try:
        camera = Camera(
            fx=values["fx"],
            fy=values["fy"],
            cx=values["cx"],
            cy=values["cy"],
            width=width,
            height=height,
            near=intr.get("near", 0.1),
            far=intr.get("far", 100.0),
        )
    except ValueError as exc:
        raise FormatError(f"{path}: intrinsics invalid: {exc}") from None
    pose = parse_pose(obj["pose"], str(path)) if "pose" in obj else Rigid.identity()
    return camera, pose


def write_camera(path, camera: Camera, pose: Rigid | None = None) -> None:
    obj = {
        "intrinsics": {
            "fx": camera.fx,
            "fy": camera.fy,
            "cx": camera.cx,
            "cy": camera.cy,
            "width": camera.width,
            "height": camera.height,
            "near": camera.near,
            "far": camera.far,
        }
    }
    if pose is not None:
        obj["pose"] = {
            "rotation": [float(x) for x in pose.rotation.ravel()],
            "translation": [float(x) for x in pose.translation],
        }
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
