"""
Flow-based warping and the temporal consistency losses.

Two readings of the temporal term are provided: the photometric one compares a
flow-warped frame with the real target frame, and the displacement one compares the
pixel motion implied by depth and baseline with the given optical flow. Only the
second depends on depth, so it is the one that carries a gradient.
"""

import logging
from typing import Optional, Tuple

import numpy as np

from ..geometry.sphere_geom import bilinear_sample, check_same_shape, pixel_centers
from ..infrastructure.logging_utils import DomainError, NonFiniteError, ShapeError
from .disparity import (
    Offset,
    WarpResult,
    covered_l2,
    disparity_displacement,
    displacement_depth_derivative,
    splat_nearest,
    validate_depth,
    wrap_columns,
)

logger = logging.getLogger("SphereDepth.Temporal")


def validate_flow(flow, width: int = None, height: int = None) -> np.ndarray:
    """Checks a (H, W, 2) pixel flow: finite, |du| <= W and |dv| <= H."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError(f"flow must be shaped (H, W, 2), got {flow.shape}")
    if (width is not None and flow.shape[1] != width) or (height is not None and flow.shape[0] != height):
        raise ShapeError(f"flow is {flow.shape[1]}x{flow.shape[0]}, expected {width}x{height}")
    if not np.all(np.isfinite(flow)):
        raise NonFiniteError("flow field holds non-finite values")
    h, w = flow.shape[:2]
    if np.any(np.abs(flow[..., 0]) > w) or np.any(np.abs(flow[..., 1]) > h):
        raise DomainError("flow magnitude exceeds the raster size")
    return flow


def flow_warp(frame, flow) -> WarpResult:
    """
    Forward splat of `frame` along `flow` (p~ = p + f, u wrapping). Collisions keep the
    sample with the smaller flow magnitude, then the lower source index; the zbuffer
    field records that magnitude.
    """
    frame = np.asarray(frame)
    flow = validate_flow(flow)
    check_same_shape(frame, flow)
    height, width = flow.shape[:2]
    u, v = pixel_centers(width, height)
    magnitude = np.hypot(flow[..., 0], flow[..., 1])
    result = splat_nearest(frame, u + flow[..., 0], v + flow[..., 1], magnitude)
    logger.debug(f"Flow warp coverage {result.coverage_fraction:.4f}")
    return result


def temporal_loss_photometric(k_tilde: WarpResult, k, min_coverage: Optional[float] = None) -> float:
    """Mean per-pixel L2 distance between the flow-warped frame and the real target over covered pixels."""
    loss, _ = covered_l2(k_tilde.image, k, k_tilde.coverage, min_coverage=min_coverage)
    return loss


def _displacement_residual(depth, b: Offset, flow) -> np.ndarray:
    depth = validate_depth(depth)
    flow = validate_flow(flow, depth.shape[1], depth.shape[0])
    residual = disparity_displacement(depth, b) - flow
    residual[..., 0] = wrap_columns(residual[..., 0], depth.shape[1])
    return residual


def temporal_loss_displacement(depth, b: Offset, flow, M) -> float:
    """Σ_p M(p)·‖displacement(depth, b)(p) - f(p)‖ over all pixels, divided by the pixel count."""
    loss, _ = temporal_loss_and_grad(depth, b, flow, M, with_grad=False)
    return loss


def temporal_loss_grad(depth, b: Offset, flow, M) -> np.ndarray:
    _, grad = temporal_loss_and_grad(depth, b, flow, M)
    return grad


def temporal_loss_and_grad(depth, b: Offset, flow, M, with_grad: bool = True) -> Tuple[float, Optional[np.ndarray]]:
    residual = _displacement_residual(depth, b, flow)
    M = np.asarray(M, dtype=np.float64)
    check_same_shape(M, residual)
    norms = np.hypot(residual[..., 0], residual[..., 1])
    count = norms.size
    loss = float(np.sum(M * norms)) / count
    if not with_grad:
        return loss, None
    du_dr, dv_dr = displacement_depth_derivative(depth, b)
    safe = np.where(norms > 0, norms, 1.0)
    grad = np.where(norms > 0, M * (residual[..., 0] * du_dr + residual[..., 1] * dv_dr) / safe, 0.0) / count
    return loss, grad


def flow_consistency_error(flow_jk, flow_kj) -> np.ndarray:
    """
    Forward-backward residual ‖f_jk(p) + f_kj(p + f_jk(p))‖ per pixel of frame j, with
    f_kj bilinearly sampled and the horizontal component wrapped.
    """
    flow_jk = validate_flow(flow_jk)
    flow_kj = validate_flow(flow_kj)
    check_same_shape(flow_jk, flow_kj)
    height, width = flow_jk.shape[:2]
    u, v = pixel_centers(width, height)
    back = bilinear_sample(flow_kj, u + flow_jk[..., 0], np.clip(v + flow_jk[..., 1], 0, height))
    round_trip = flow_jk + back
    return np.hypot(wrap_columns(round_trip[..., 0], width), round_trip[..., 1])
