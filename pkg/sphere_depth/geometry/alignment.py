"""
Scale alignment of prior depth against sparse reconstructions, and the yaw
rotation that turns an arbitrary horizontal frame pair into a left-right
stereo pair whose baseline runs along +z.
"""

import logging
import math
from typing import List, Literal, Sequence, Tuple, Union

import numpy as np

from ..data.models import CameraPose
from ..data.sequence import Frame, FrameSequence
from ..infrastructure import globals as defaults
from ..infrastructure.logging_utils import (
    DomainError,
    EmptyReconstructionError,
    ShapeError,
    StaticViewpointError,
    VerticalMotionError,
)
from .sphere_geom import rotate_erp, rotation_y

logger = logging.getLogger("SphereDepth.Alignment")

ArrayList = Union[np.ndarray, Sequence[np.ndarray]]


def _as_list(grids: ArrayList) -> List[np.ndarray]:
    if isinstance(grids, np.ndarray):
        return [grids]
    return [np.asarray(g, dtype=np.float64) for g in grids]


def compute_scale(d_nn: ArrayList, d_recon: ArrayList, method: Literal["mean", "median"] = "mean") -> float:
    """
    Scale factor s between prior depth and reconstruction depth over a sequence:
    the mean of D^NN / D^Recon over every pixel (of every frame) where D^Recon > 0.
    `method="median"` swaps the mean for the median of the same ratios.
    """
    nn_list, recon_list = _as_list(d_nn), _as_list(d_recon)
    if len(nn_list) != len(recon_list):
        raise ShapeError(f"{len(nn_list)} prior depth maps for {len(recon_list)} reconstructions")

    ratios = []
    for idx, (nn, recon) in enumerate(zip(nn_list, recon_list)):
        if nn.shape != recon.shape:
            raise ShapeError(f"frame {idx}: prior depth {nn.shape} vs reconstruction {recon.shape}")
        if np.any(recon < 0):
            raise DomainError(f"frame {idx}: reconstruction depth must be non-negative")
        valid = recon > 0
        if np.any(nn[valid] <= 0):
            raise DomainError(f"frame {idx}: prior depth must be positive wherever the reconstruction is valid")
        ratios.append(nn[valid] / recon[valid])

    ratios = np.concatenate(ratios) if ratios else np.empty(0)
    if ratios.size == 0:
        raise EmptyReconstructionError("no pixel with a positive reconstruction depth in the sequence")

    if method == "median":
        scale = float(np.median(ratios))
    elif method == "mean":
        # exactly rounded, hence independent of pixel and frame order
        scale = math.fsum(ratios.tolist()) / ratios.size
    else:
        raise DomainError(f"unknown scale method '{method}'")
    logger.info(f"Scale factor {scale:.6g} from {ratios.size} valid pixels ({method})")
    return scale


def scale_poses(poses: Sequence[CameraPose], scale: float) -> List[CameraPose]:
    if not scale > 0:
        raise DomainError(f"scale must be positive, got {scale}")
    return [p.with_translation(scale * p.translation) for p in poses]


def apply_scale(seq: FrameSequence, scale: float) -> FrameSequence:
    """Multiplies every camera translation by `scale`; rotations and rasters are untouched."""
    return seq.with_poses(scale_poses(seq.poses, scale))


def scale_sequence(seq: FrameSequence, method: Literal["mean", "median"] = "mean") -> Tuple[FrameSequence, float]:
    """compute_scale over the frames that carry both a prior depth and a reconstruction, then apply_scale."""
    usable = [f for f in seq.frames if f.depth is not None and f.recon is not None]
    if not usable:
        raise EmptyReconstructionError("no frame carries both a prior depth and a reconstruction")
    scale = compute_scale([f.depth for f in usable], [f.recon for f in usable], method=method)
    return apply_scale(seq, scale), scale


def pair_offset(pose_j: CameraPose, pose_k: CameraPose) -> np.ndarray:
    """Position of camera k expressed in camera j's frame."""
    return pose_j.rotation.T @ (pose_k.translation - pose_j.translation)


def _vertical_ratio(t_rel: np.ndarray) -> float:
    return abs(float(t_rel[1])) / float(np.linalg.norm(t_rel))


def alignment_rotation(pose_j: CameraPose, pose_k: CameraPose, max_vertical_ratio: float = None) -> Tuple[np.ndarray, float]:
    """
    Yaw rotation R_align taking the horizontal part of t_k - t_j onto +z, and the
    resulting baseline b (length of that horizontal part).
    """
    if max_vertical_ratio is None:
        max_vertical_ratio = defaults.MAX_VERTICAL_RATIO
    t_rel = pose_k.translation - pose_j.translation
    norm = float(np.linalg.norm(t_rel))
    if norm == 0.0:
        raise StaticViewpointError("static-viewpoint: the two cameras share the same position")
    ratio = _vertical_ratio(t_rel)
    if ratio > max_vertical_ratio:
        raise VerticalMotionError(
            f"vertical-motion: vertical/total translation ratio {ratio:.3f} exceeds {max_vertical_ratio:.3f}"
        )
    hx, hz = float(t_rel[0]), float(t_rel[2])
    alpha = math.atan2(-hx, hz)
    baseline = math.hypot(hx, hz)
    logger.debug(f"Alignment yaw {math.degrees(alpha):.3f} deg, baseline {baseline:.6g} m")
    return rotation_y(alpha), baseline


def _rotate_frame(frame: Frame, R: np.ndarray, R_align: np.ndarray) -> Frame:
    if frame.recon is not None:
        logger.warning("Sparse reconstruction depth is not carried through spatial adjustment")
    return Frame(
        image=rotate_erp(frame.image, R),
        pose=CameraPose(rotation=R_align.T, translation=frame.pose.translation),
        depth=None if frame.depth is None else rotate_erp(frame.depth, R),
    )


def adjust_pair(frame_j: Frame, frame_k: Frame, max_vertical_ratio: float = None) -> Tuple[Frame, Frame, np.ndarray, float]:
    """
    Re-renders both frames in a shared yaw-aligned frame: each image (and prior depth)
    is rotated by R_align·R_camera, so k sits at (0, y, b) as seen from j.
    Returns the adjusted frames, R_align and the baseline.
    """
    R_align, baseline = alignment_rotation(frame_j.pose, frame_k.pose, max_vertical_ratio)
    adjusted_j = _rotate_frame(frame_j, R_align @ frame_j.pose.rotation, R_align)
    adjusted_k = _rotate_frame(frame_k, R_align @ frame_k.pose.rotation, R_align)
    return adjusted_j, adjusted_k, R_align, baseline


def group_into_sequences(
    poses: Sequence[CameraPose],
    max_frames: int = 5,
    max_vertical_ratio: float = None,
    min_baseline: float = 1e-6,
) -> List[List[int]]:
    """
    Splits a trajectory into short sequences of consecutive frame indices. A step that is
    static (moves less than min_baseline) or mostly vertical breaks the sequence; runs
    longer than max_frames are chunked. Runs of a single frame are dropped.
    """
    if max_vertical_ratio is None:
        max_vertical_ratio = defaults.MAX_VERTICAL_RATIO
    if max_frames < 2:
        raise DomainError("max_frames must be at least 2")

    runs, current = [], [0] if poses else []
    for idx in range(1, len(poses)):
        step = poses[idx].translation - poses[idx - 1].translation
        usable = np.linalg.norm(step) > min_baseline and _vertical_ratio(step) <= max_vertical_ratio
        if usable and len(current) < max_frames:
            current.append(idx)
            continue
        if not usable:
            logger.info(f"Trajectory split before frame {idx} (static or vertical step)")
        runs.append(current)
        current = [idx]
    if current:
        runs.append(current)
    return [run for run in runs if len(run) >= 2]
