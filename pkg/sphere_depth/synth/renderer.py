"""
Ray-cast spherical renderer: exact ERP color, radial depth and optical flow for
analytic scenes, plus the seeded benchmark generator used by the oracle tests.
"""

import logging
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from ..data.models import CameraPose, PairPolicy
from ..data.scene import Box, CheckerAlbedo, Plane, Scene, SkyShell, Sphere
from ..data.sequence import Frame, FrameSequence
from ..geometry.sphere_geom import dir_to_erp_pixel, erp_directions, erp_pixel_to_dir, pixel_centers
from ..infrastructure.logging_utils import ConfigurationError
from ..infrastructure.parallel import ordered_map, row_bands
from ..losses.disparity import wrap_columns

logger = logging.getLogger("SphereDepth.Synth")

HIT_EPS = 1e-9
GROUND_HEIGHT = -1.6


def _intersect_sphere(center, radius, origins, dirs) -> np.ndarray:
    oc = origins - np.asarray(center, dtype=np.float64)
    half_b = np.sum(oc * dirs, axis=-1)
    c = np.sum(oc * oc, axis=-1) - radius * radius
    disc = half_b * half_b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    near, far = -half_b - root, -half_b + root
    t = np.where(near > HIT_EPS, near, far)
    return np.where((disc >= 0) & (t > HIT_EPS), t, np.inf)


def _intersect_plane(plane: Plane, origins, dirs) -> np.ndarray:
    normal = np.asarray(plane.normal)
    denom = np.sum(dirs * normal, axis=-1)
    dist = np.sum((np.asarray(plane.point) - origins) * normal, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = dist / denom
    return np.where((np.abs(denom) > 1e-12) & (t > HIT_EPS), t, np.inf)


def _intersect_box(box: Box, origins, dirs) -> np.ndarray:
    # slab method; fmin/fmax drop the NaN of 0·inf on axis-parallel rays
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (np.asarray(box.min_corner) - origins) * inv
        t1 = (np.asarray(box.max_corner) - origins) * inv
    t_near = np.max(np.fmin(t0, t1), axis=-1)
    t_far = np.min(np.fmax(t0, t1), axis=-1)
    t = np.where(t_near > HIT_EPS, t_near, t_far)
    return np.where((t_far >= t_near) & (t > HIT_EPS), t, np.inf)


def _intersect(prim, origins, dirs) -> np.ndarray:
    if isinstance(prim, Sphere):
        return _intersect_sphere(prim.center, prim.radius, origins, dirs)
    if isinstance(prim, SkyShell):
        # the shell travels with the camera: every ray meets it at exactly `radius`
        return np.full(origins.shape[0], float(prim.radius))
    if isinstance(prim, Plane):
        return _intersect_plane(prim, origins, dirs)
    return _intersect_box(prim, origins, dirs)


def _cast(scene: Scene, origins, dirs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), dirs.shape)
    t_best = np.full(dirs.shape[0], np.inf)
    hit = np.full(dirs.shape[0], -1, dtype=np.int64)
    for idx, prim in enumerate(scene.primitives):
        t = _intersect(prim, origins, dirs)
        closer = t < t_best
        t_best[closer] = t[closer]
        hit[closer] = idx
    rgb = np.zeros(dirs.shape)
    points = origins + np.where(np.isfinite(t_best), t_best, 0.0)[:, None] * dirs
    for idx, prim in enumerate(scene.primitives):
        mask = hit == idx
        if np.any(mask):
            rgb[mask] = prim.albedo.shade(points[mask])
    return t_best, rgb, hit


def cast_rays(scene: Scene, origins, dirs) -> Tuple[np.ndarray, np.ndarray]:
    """
    Nearest hit along unit rays shaped (N, 3). Returns the ray parameter (radial distance,
    +inf on a miss) and flat-shaded RGB (black on a miss). Ties keep the earlier primitive.
    """
    t, rgb, _ = _cast(scene, origins, dirs)
    return t, rgb


def _world_dirs(pose: CameraPose, cam_dirs: np.ndarray) -> np.ndarray:
    # elementwise products keep each ray independent of the band it is rendered in
    return np.sum(cam_dirs[..., None, :] * pose.rotation, axis=-1)


def _render_rows(scene: Scene, pose: CameraPose, width: int, height: int, rows: slice):
    cam_dirs = erp_directions(width, height)[rows]
    t, rgb, hit = _cast(scene, pose.translation, _world_dirs(pose, cam_dirs))
    shape = cam_dirs.shape[:2]
    return t.reshape(shape), rgb.reshape(shape + (3,)), hit.reshape(shape)


def _render_full(scene: Scene, pose: CameraPose, width: int, height: int, threads: int = 1):
    bands = ordered_map(lambda rows: _render_rows(scene, pose, width, height, rows), row_bands(height, threads), threads)
    depth = np.concatenate([b[0] for b in bands], axis=0)
    rgb = np.concatenate([b[1] for b in bands], axis=0)
    hit = np.concatenate([b[2] for b in bands], axis=0)
    misses = int(np.count_nonzero(hit < 0))
    if misses:
        logger.warning(f"{misses} rays left the scene without a hit; depth is +inf there")
    return rgb, depth, hit


def render_erp(scene: Scene, pose: CameraPose, width: int, height: int, threads: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """ERP color (H, W, 3) and radial depth (H, W) seen from `pose`."""
    rgb, depth, _ = _render_full(scene, pose, width, height, threads)
    return rgb, depth


def _project_into(points: np.ndarray, pose_k: CameraPose, width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    local = (points - pose_k.translation) @ pose_k.rotation
    return dir_to_erp_pixel(local, width, height)


def flow_from_depth(depth, pose_j: CameraPose, pose_k: CameraPose) -> np.ndarray:
    """Pixel flow j -> k of the points lying at radial `depth` along the pixel-center rays of frame j."""
    depth = np.asarray(depth, dtype=np.float64)
    height, width = depth.shape
    u, v = pixel_centers(width, height)
    return _flow_at(depth, pose_j, pose_k, u, v, width, height)


def _flow_at(depth, pose_j, pose_k, u, v, width, height) -> np.ndarray:
    if pose_j == pose_k:
        return np.zeros(np.shape(u) + (2,))
    dirs = erp_pixel_to_dir(u, v, width, height).unit()
    points = pose_j.translation + depth[..., None] * _world_dirs(pose_j, dirs)
    uk, vk = _project_into(points, pose_k, width, height)
    du = wrap_columns(uk - u, width)
    flow = np.stack([du, vk - v], axis=-1)
    return np.where(np.isfinite(flow), flow, 0.0)


def render_flow(scene: Scene, pose_j: CameraPose, pose_k: CameraPose, width: int, height: int,
                u=None, v=None, threads: int = 1) -> np.ndarray:
    """
    Exact optical flow from frame j to frame k: the hit point of every ray of frame j,
    reprojected into frame k, minus the starting coordinate (longitude wrapped).
    `u`, `v` evaluate the flow at arbitrary continuous coordinates instead of pixel centers.
    """
    if u is None:
        _, depth, _ = _render_full(scene, pose_j, width, height, threads)
        u, v = pixel_centers(width, height)
    else:
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        dirs = _world_dirs(pose_j, erp_pixel_to_dir(u, v, width, height).unit())
        depth, _, _ = _cast(scene, pose_j.translation, dirs)
        depth = depth.reshape(u.shape)
    return _flow_at(depth, pose_j, pose_k, u, v, width, height)


def default_trajectory(frames: int, spacing: float, direction=(0.0, 0.0, 1.0), start=(0.0, 0.0, 0.0)) -> List[CameraPose]:
    """Equally spaced positions along a horizontal line, identity rotations."""
    if frames < 1:
        raise ConfigurationError("a trajectory needs at least one pose")
    if frames > 1 and not spacing > 0:
        raise ConfigurationError("camera spacing must be positive")
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    start = np.asarray(start, dtype=np.float64)
    return [CameraPose(translation=start + k * spacing * direction) for k in range(frames)]


def _random_checker(rng: np.random.Generator, period_range, fade_radius: Optional[float]) -> CheckerAlbedo:
    base = rng.uniform(0.25, 0.75, size=3)
    contrast = rng.uniform(0.15, 0.25)
    return CheckerAlbedo(
        color_a=tuple(np.clip(base - contrast / 2, 0, 1)),
        color_b=tuple(np.clip(base + contrast / 2, 0, 1)),
        period=float(rng.uniform(*period_range)),
        fade_radius=fade_radius,
    )


def random_scene(rng: np.random.Generator) -> Scene:
    """Sky shell, checkered ground plane and 1 to 6 checkered spheres or boxes around the origin."""
    sky = SkyShell(radius=float(rng.uniform(25.0, 40.0)), albedo=_random_checker(rng, (6.0, 10.0), None))
    ground = Plane(point=(0.0, GROUND_HEIGHT, 0.0), normal=(0.0, 1.0, 0.0),
                   albedo=_random_checker(rng, (0.6, 1.2), fade_radius=8.0))
    objects = []
    for _ in range(int(rng.integers(1, 7))):
        azimuth = rng.uniform(-np.pi, np.pi)
        dist = rng.uniform(2.5, 8.0)
        cx, cz = dist * np.cos(azimuth), dist * np.sin(azimuth)
        albedo = _random_checker(rng, (0.3, 0.8), fade_radius=10.0)
        if rng.random() < 0.5:
            radius = float(rng.uniform(0.4, 1.2))
            cy = GROUND_HEIGHT + radius + float(rng.uniform(0.0, 1.0))
            objects.append(Sphere(center=(cx, cy, cz), radius=radius, albedo=albedo))
        else:
            half = rng.uniform(0.25, 0.75, size=3)
            lo = (cx - half[0], GROUND_HEIGHT, cz - half[2])
            hi = (cx + half[0], GROUND_HEIGHT + 2 * half[1], cz + half[2])
            objects.append(Box(min_corner=lo, max_corner=hi, albedo=albedo))
    return Scene(primitives=[sky, ground] + objects)


class Benchmark(NamedTuple):
    sequence: FrameSequence
    depths: List[np.ndarray]
    flows: Dict[Tuple[int, int], np.ndarray]
    scene: Scene
    spacing: float


def benchmark_spacing(depth: np.ndarray, hit: np.ndarray, sky_index: Optional[int]) -> float:
    """min(2% of the median non-sky depth, 5% of the minimum depth) of the first frame."""
    finite = np.isfinite(depth)
    objects = finite & (hit != sky_index) if sky_index is not None else finite
    reference = depth[objects] if np.any(objects) else depth[finite]
    return float(min(0.02 * np.median(reference), 0.05 * np.min(depth[finite])))


def make_benchmark_sequence(seed: int, frames: int, width: int, height: int,
                            policy: Optional[PairPolicy] = None, scene: Optional[Scene] = None,
                            threads: int = 1) -> Benchmark:
    """
    Seeded procedural scene rendered along a +z trajectory. Flows are produced for every
    pair `policy` selects (consecutive and gap-2 pairs in both directions by default).
    """
    if frames < 2:
        raise ConfigurationError("a benchmark sequence needs at least two frames")
    rng = np.random.default_rng(seed)
    scene = scene or random_scene(rng)
    policy = policy or PairPolicy()
    sky_index = next((i for i, p in enumerate(scene.primitives) if isinstance(p, SkyShell)), None)

    origin = CameraPose.identity()
    rgb0, depth0, hit0 = _render_full(scene, origin, width, height, threads)
    spacing = benchmark_spacing(depth0, hit0, sky_index)
    poses = default_trajectory(frames, spacing)
    logger.info(f"Benchmark seed {seed}: {len(scene.primitives)} primitives, spacing {spacing:.5f} m")

    images, depths = [rgb0], [depth0]
    for idx, pose in enumerate(poses[1:], start=1):
        rgb, depth = render_erp(scene, pose, width, height, threads)
        images.append(rgb)
        depths.append(depth)
        logger.info(f"Rendered frame {idx}/{frames - 1}")

    flows = {
        (j, k): flow_from_depth(depths[j], poses[j], poses[k])
        for j, k in policy.pairs(frames)
    }
    sequence = FrameSequence(
        frames=[Frame(image=img, pose=pose) for img, pose in zip(images, poses)],
        sequence_id=seed,
        flows=flows,
    )
    return Benchmark(sequence=sequence, depths=depths, flows=flows, scene=scene, spacing=spacing)
