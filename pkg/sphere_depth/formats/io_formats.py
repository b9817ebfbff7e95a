"""
File formats of a sequence directory:

    frame_%04d.png          8-bit RGB ERP frames
    depth_%04d.pfm          radial depth, PFM ("Pf", scale -1.0, rows bottom-to-top, <f4)
    flow_%04d_%04d.oflo     pixel flow j -> k: b"OFLO", <u4 W, <u4 H, row-major (du, dv) <f4 pairs
    recon_%04d.pfm          optional sparse reconstruction depth, 0 = no value
    poses.txt               "idx tx ty tz qx qy qz qw" camera-to-world, '#' comments
    scene.txt               optional, one primitive per line
    meta.txt                key=value lines

Readers reject malformed input with a FormatError naming the byte offset (binary) or
line number (text); they never truncate silently.
"""

import logging
import re
import struct
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from pydantic import ValidationError
from scipy.spatial.transform import Rotation

from ..data.models import CameraPose, EpochRecord, SequenceMeta
from ..data.scene import Box, CheckerAlbedo, Plane, Scene, SkyShell, SolidAlbedo, Sphere
from ..data.sequence import Frame, FrameSequence
from ..infrastructure.logging_utils import FormatError, InputError, NonFiniteError, ShapeError

logger = logging.getLogger("SphereDepth.IO")

PathLike = Union[str, Path]

FLOW_MAGIC = b"OFLO"
FLOW_HEADER = struct.Struct("<4sII")
QUAT_TOLERANCE = 1e-3

FRAME_NAME = "frame_{:04d}.png"
DEPTH_NAME = "depth_{:04d}.pfm"
RECON_NAME = "recon_{:04d}.pfm"
FLOW_NAME = "flow_{:04d}_{:04d}.oflo"
FLOW_PATTERN = re.compile(r"^flow_(\d{4})_(\d{4})\.oflo$")


def validate_raster(grid, name: str = "raster") -> np.ndarray:
    """Validation layer applied after reading: rejects NaN and inf."""
    grid = np.asarray(grid)
    if not np.all(np.isfinite(grid)):
        bad = np.argwhere(~np.isfinite(grid))[0]
        raise NonFiniteError(f"{name} holds a non-finite value at index {tuple(int(i) for i in bad)}")
    return grid


# --- PFM -------------------------------------------------------------------

def pfm_write(path: PathLike, grid) -> None:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ShapeError(f"PFM writer takes single-channel (H, W) grids, got {grid.shape}")
    height, width = grid.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    payload = np.ascontiguousarray(np.flipud(grid), dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def _header_line(data: bytes, offset: int, path: PathLike) -> Tuple[bytes, int]:
    end = data.find(b"\n", offset)
    if end < 0:
        raise FormatError(str(path), offset, "unterminated header line")
    return data[offset:end].strip(), end + 1


def pfm_read(path: PathLike) -> np.ndarray:
    """Reads a little-endian single-channel PFM into a float32 (H, W) array, top row first."""
    data = Path(path).read_bytes()
    magic, offset = _header_line(data, 0, path)
    if magic == b"PF":
        raise FormatError(str(path), 0, "three-channel PFM is not supported")
    if magic != b"Pf":
        raise FormatError(str(path), 0, f"bad magic {magic!r}, expected b'Pf'")

    dims_at = offset
    dims, offset = _header_line(data, offset, path)
    try:
        width, height = (int(tok) for tok in dims.split())
    except ValueError:
        raise FormatError(str(path), dims_at, f"malformed dimensions {dims!r}")
    if width <= 0 or height <= 0:
        raise FormatError(str(path), dims_at, f"non-positive dimensions {width}x{height}")

    scale_at = offset
    scale_text, offset = _header_line(data, offset, path)
    try:
        scale = float(scale_text)
    except ValueError:
        raise FormatError(str(path), scale_at, f"malformed scale {scale_text!r}")
    if scale > 0:
        raise FormatError(str(path), scale_at, "big-endian PFM is not supported")
    if scale == 0 or not np.isfinite(scale):
        raise FormatError(str(path), scale_at, f"invalid scale {scale_text!r}")

    expected = 4 * width * height
    actual = len(data) - offset
    if actual < expected:
        raise FormatError(str(path), len(data), f"truncated payload: expected {expected} bytes, found {actual}")
    if actual > expected:
        raise FormatError(str(path), offset + expected, f"{actual - expected} trailing bytes after payload")
    grid = np.frombuffer(data, dtype="<f4", count=width * height, offset=offset).reshape(height, width)
    return np.flipud(grid).astype(np.float32)


# --- flow ------------------------------------------------------------------

def flow_write(path: PathLike, flow) -> None:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError(f"flow must be shaped (H, W, 2), got {flow.shape}")
    height, width = flow.shape[:2]
    payload = np.ascontiguousarray(flow, dtype="<f4").tobytes()
    Path(path).write_bytes(FLOW_HEADER.pack(FLOW_MAGIC, width, height) + payload)


def flow_read(path: PathLike) -> np.ndarray:
    """Reads an OFLO file into a float32 (H, W, 2) array. Longitude wrap is applied by consumers."""
    data = Path(path).read_bytes()
    if len(data) < FLOW_HEADER.size:
        raise FormatError(str(path), len(data), f"file holds {len(data)} bytes, shorter than the 12-byte header")
    magic, width, height = FLOW_HEADER.unpack_from(data, 0)
    if magic != FLOW_MAGIC:
        raise FormatError(str(path), 0, f"bad magic {magic!r}, expected {FLOW_MAGIC!r}")
    expected = FLOW_HEADER.size + 8 * width * height
    if len(data) != expected:
        raise FormatError(str(path), min(len(data), expected),
                          f"size mismatch for {width}x{height}: expected {expected} bytes, actual {len(data)}")
    flow = np.frombuffer(data, dtype="<f4", count=2 * width * height, offset=FLOW_HEADER.size)
    return flow.reshape(height, width, 2).astype(np.float32)


# --- poses -----------------------------------------------------------------

def poses_write(path: PathLike, poses: Sequence[Tuple[int, CameraPose]]) -> None:
    lines = ["# idx tx ty tz qx qy qz qw (camera-to-world)"]
    for idx, pose in poses:
        quat = Rotation.from_matrix(pose.rotation).as_quat()
        values = list(pose.translation) + list(quat)
        lines.append(f"{idx:d} " + " ".join(f"{float(v):.17g}" for v in values))
    Path(path).write_text("\n".join(lines) + "\n")


def poses_read(path: PathLike) -> List[Tuple[int, CameraPose]]:
    """Pose lines in file order; quaternions within 1e-3 of unit norm are renormalized."""
    poses, seen = [], set()
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if len(tokens) != 8:
            raise FormatError(str(path), line_no, f"expected 8 fields, found {len(tokens)}", unit="line")
        try:
            idx = int(tokens[0])
            values = np.array([float(tok) for tok in tokens[1:]])
        except ValueError as exc:
            raise FormatError(str(path), line_no, f"non-numeric token ({exc})", unit="line")
        if idx < 0:
            raise FormatError(str(path), line_no, f"negative frame index {idx}", unit="line")
        if idx in seen:
            raise FormatError(str(path), line_no, f"duplicate frame index {idx}", unit="line")
        if not np.all(np.isfinite(values)):
            raise FormatError(str(path), line_no, "non-finite pose value", unit="line")
        quat = values[3:]
        norm = float(np.linalg.norm(quat))
        if abs(norm - 1.0) > QUAT_TOLERANCE:
            raise FormatError(str(path), line_no, f"quaternion norm {norm:.6f} is not unit", unit="line")
        rotation = Rotation.from_quat(quat / norm).as_matrix()
        poses.append((idx, CameraPose(rotation=rotation, translation=values[:3])))
        seen.add(idx)
    return poses


# --- PNG -------------------------------------------------------------------

def png_write(path: PathLike, rgb) -> None:
    rgb = validate_raster(rgb, "image")
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"PNG writer takes (H, W, 3) images, got {rgb.shape}")
    pixels = np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(pixels).save(Path(path), format="PNG")


def png_read(path: PathLike) -> np.ndarray:
    """8-bit PNG as float64 RGB in [0, 1]."""
    try:
        with Image.open(Path(path)) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.float64)
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise FormatError(str(path), 0, f"unreadable PNG ({exc})")
    return pixels / 255.0


# --- scene -----------------------------------------------------------------

def _format_albedo(albedo) -> list:
    if isinstance(albedo, SolidAlbedo):
        return ["solid", *albedo.color]
    fields = ["checker", *albedo.color_a, *albedo.color_b, albedo.period]
    if albedo.fade_radius is not None:
        fields.append(albedo.fade_radius)
    return fields


def _fmt(value) -> str:
    return value if isinstance(value, str) else f"{float(value):.17g}"


def scene_write(path: PathLike, scene: Scene) -> None:
    lines = ["# kind geometry... albedo (solid r g b | checker r g b r g b period [fade_radius])"]
    for prim in scene.primitives:
        if isinstance(prim, SkyShell):
            geometry = ["sky", prim.radius]
        elif isinstance(prim, Plane):
            geometry = ["plane", *prim.point, *prim.normal]
        elif isinstance(prim, Sphere):
            geometry = ["sphere", *prim.center, prim.radius]
        else:
            geometry = ["box", *prim.min_corner, *prim.max_corner]
        lines.append(" ".join(_fmt(v) for v in geometry + _format_albedo(prim.albedo)))
    Path(path).write_text("\n".join(lines) + "\n")


_GEOMETRY_FIELDS = {"sky": 1, "plane": 6, "sphere": 4, "box": 6}


def _parse_albedo(tokens: List[str]) -> dict:
    """Albedo keyword for the primitive constructor; empty when the line names none."""
    if not tokens:
        return {}
    kind, values = tokens[0], [float(t) for t in tokens[1:]]
    if kind == "solid" and len(values) == 3:
        return {"albedo": SolidAlbedo(color=tuple(values))}
    if kind == "checker" and len(values) in (7, 8):
        return {"albedo": CheckerAlbedo(color_a=tuple(values[0:3]), color_b=tuple(values[3:6]), period=values[6],
                                        fade_radius=values[7] if len(values) == 8 else None)}
    raise ValueError(f"bad albedo specification {' '.join(tokens)!r}")


def scene_read(path: PathLike) -> Scene:
    primitives = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind = tokens[0]
        if kind not in _GEOMETRY_FIELDS:
            raise FormatError(str(path), line_no, f"unknown primitive '{kind}'", unit="line")
        n = _GEOMETRY_FIELDS[kind]
        try:
            geo = [float(t) for t in tokens[1:1 + n]]
            if len(geo) != n:
                raise ValueError(f"{kind} needs {n} geometry values")
            albedo = _parse_albedo(tokens[1 + n:])
            if kind == "sky":
                prim = SkyShell(radius=geo[0], **albedo)
            elif kind == "plane":
                prim = Plane(point=tuple(geo[:3]), normal=tuple(geo[3:]), **albedo)
            elif kind == "sphere":
                prim = Sphere(center=tuple(geo[:3]), radius=geo[3], **albedo)
            else:
                prim = Box(min_corner=tuple(geo[:3]), max_corner=tuple(geo[3:]), **albedo)
        except (ValueError, ValidationError) as exc:
            raise FormatError(str(path), line_no, str(exc).splitlines()[0], unit="line")
        primitives.append(prim)
    try:
        return Scene(primitives=primitives)
    except ValidationError as exc:
        raise FormatError(str(path), 0, f"invalid scene: {exc.errors()[0]['msg']}", unit="line")


# --- meta and traces -------------------------------------------------------

def meta_write(path: PathLike, meta: SequenceMeta) -> None:
    lines = []
    for key, value in meta.model_dump().items():
        if value is None or (key == "pairs" and not value):
            continue
        if key == "pairs":
            value = ",".join(f"{j}:{k}" for j, k in value)
        elif isinstance(value, float):
            value = f"{value:.17g}"
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n")


def meta_read(path: PathLike) -> SequenceMeta:
    fields: Dict[str, object] = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(str(path), line_no, "expected key=value", unit="line")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "pairs":
            try:
                fields[key] = [tuple(int(x) for x in item.split(":")) for item in value.split(",") if item]
            except ValueError:
                raise FormatError(str(path), line_no, f"malformed pair list {value!r}", unit="line")
        else:
            fields[key] = value
    try:
        return SequenceMeta(**fields)
    except ValidationError as exc:
        raise FormatError(str(path), 0, f"invalid meta: {exc.errors()[0]['msg']}", unit="line")


def trace_write(path: PathLike, records: Sequence[EpochRecord]) -> None:
    lines = ["# epoch geometric temporal total"]
    for rec in records:
        lines.append(f"{rec.epoch:d} {rec.geometric:.17g} {rec.temporal:.17g} {rec.total:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def trace_read(path: PathLike) -> List[EpochRecord]:
    records = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            if len(tokens) != 4:
                raise ValueError(f"expected 4 fields, found {len(tokens)}")
            records.append(EpochRecord(epoch=int(tokens[0]), geometric=float(tokens[1]),
                                       temporal=float(tokens[2]), total=float(tokens[3])))
        except ValueError as exc:
            raise FormatError(str(path), line_no, str(exc).splitlines()[0], unit="line")
    return records


# --- cubemap strips --------------------------------------------------------

def cubemap_to_strip(cm) -> np.ndarray:
    """Six faces side by side in face order, shaped (F, 6F[, C])."""
    cm = np.asarray(cm)
    return np.concatenate(list(cm), axis=1)


def strip_to_cubemap(strip) -> np.ndarray:
    strip = np.asarray(strip)
    face = strip.shape[0]
    if strip.shape[1] != 6 * face:
        raise ShapeError(f"cubemap strip must be F x 6F, got {strip.shape[1]}x{strip.shape[0]}")
    return np.stack(np.split(strip, 6, axis=1))


# --- sequence manifests ----------------------------------------------------

class Manifest(NamedTuple):
    sequence: FrameSequence
    meta: SequenceMeta
    depths: List[Optional[np.ndarray]]
    scene: Optional[Scene]


def write_sequence(
    directory: PathLike,
    sequence: FrameSequence,
    meta: SequenceMeta,
    depths: Optional[Sequence[np.ndarray]] = None,
    scene: Optional[Scene] = None,
) -> Path:
    """Writes frames, poses, flows, meta and (when given) depths, reconstructions and the scene."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for idx, frame in enumerate(sequence.frames):
        png_write(out / FRAME_NAME.format(idx), frame.image)
        if frame.recon is not None:
            pfm_write(out / RECON_NAME.format(idx), frame.recon)
    for idx, depth in enumerate(depths or []):
        pfm_write(out / DEPTH_NAME.format(idx), validate_raster(depth, f"depth {idx}"))
    for (j, k), flow in sorted(sequence.flows.items()):
        flow_write(out / FLOW_NAME.format(j, k), validate_raster(flow, f"flow {j}->{k}"))
    poses_write(out / "poses.txt", list(enumerate(sequence.poses)))
    if scene is not None:
        scene_write(out / "scene.txt", scene)
    meta_write(out / "meta.txt", meta)
    logger.info(f"Wrote {len(sequence)} frames and {len(sequence.flows)} flows to {out}")
    return out


def load_sequence(directory: PathLike, require_flows: Sequence[Tuple[int, int]] = ()) -> Manifest:
    """
    Loads and validates a sequence directory: contiguous frame indices, shared resolution,
    finite rasters. Every pair in `require_flows` must have a flow file.
    """
    root = Path(directory)
    if not root.is_dir():
        raise InputError(f"sequence directory not found: {root}")
    meta = meta_read(root / "meta.txt")
    poses = dict(poses_read(root / "poses.txt"))
    if sorted(poses) != list(range(len(poses))):
        raise FormatError(str(root / "poses.txt"), 0, "frame indices must be contiguous from 0", unit="line")

    frames, depths = [], []
    for idx in range(len(poses)):
        frame_path = root / FRAME_NAME.format(idx)
        if not frame_path.exists():
            raise InputError(f"missing frame file: {frame_path}")
        image = png_read(frame_path)
        if image.shape[:2] != (meta.height, meta.width):
            raise ShapeError(f"{frame_path} is {image.shape[1]}x{image.shape[0]}, meta says {meta.width}x{meta.height}")
        recon_path = root / RECON_NAME.format(idx)
        recon = validate_raster(pfm_read(recon_path), str(recon_path)).astype(np.float64) if recon_path.exists() else None
        frames.append(Frame(image=image, pose=poses[idx], recon=recon))
        depth_path = root / DEPTH_NAME.format(idx)
        depths.append(validate_raster(pfm_read(depth_path), str(depth_path)).astype(np.float64) if depth_path.exists() else None)

    flows = {}
    for path in sorted(root.glob("flow_*_*.oflo")):
        match = FLOW_PATTERN.match(path.name)
        if match:
            flows[(int(match.group(1)), int(match.group(2)))] = validate_raster(flow_read(path), str(path)).astype(np.float64)
    for j, k in require_flows:
        if (j, k) not in flows:
            raise InputError(f"missing flow file: {root / FLOW_NAME.format(j, k)}")

    scene_path = root / "scene.txt"
    scene = scene_read(scene_path) if scene_path.exists() else None
    sequence = FrameSequence(frames=frames, flows=flows)
    logger.info(f"Loaded {len(frames)} frames and {len(flows)} flows from {root}")
    return Manifest(sequence=sequence, meta=meta, depths=depths, scene=scene)
