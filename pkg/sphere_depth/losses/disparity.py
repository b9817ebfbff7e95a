"""
Spherical disparity between a source camera and a target camera displaced by an
offset (a baseline b along +z, or any 3-vector), forward-splatting view synthesis,
the distortion weight matrix and the geometric loss with its depth gradient.

Sign conventions: the disparity δ = (φ - φ', θ - θ') is source minus target angle.
A source pixel moves on the image by the opposite amount, so the landing position
of pixel p in the target is p + displacement with displacement = -δ in pixel units.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import numpy as np

from ..infrastructure import globals as defaults
from ..infrastructure.logging_utils import (
    DegenerateGeometryError,
    DomainError,
    InsufficientOverlapError,
    NonFiniteError,
    ShapeError,
)
from ..geometry.sphere_geom import (
    TWO_PI,
    bilinear_sample_with_gradient,
    check_same_shape,
    erp_directions,
    erp_pixel_to_dir,
    pixel_centers,
    unit_to_sph,
    wrap_angle,
)

logger = logging.getLogger("SphereDepth.Disparity")

Offset = Union[float, np.ndarray]
WeightMode = Literal["full", "polar_only"]


@dataclass
class WarpResult:
    """
    Forward-splatted frame. `image` is zero and `zbuffer` is +inf where `coverage`
    is False. `source_index` holds the flat index of the winning source pixel (-1 on holes).
    """
    image: np.ndarray
    coverage: np.ndarray
    zbuffer: np.ndarray
    source_index: np.ndarray

    @property
    def coverage_fraction(self) -> float:
        return float(np.mean(self.coverage))


def target_offset(b: Offset) -> np.ndarray:
    """Target camera position in the source frame: (0, 0, b) for a scalar baseline."""
    offset = np.asarray(b, dtype=np.float64)
    if offset.ndim == 0:
        return np.array([0.0, 0.0, float(offset)])
    if offset.shape != (3,) or not np.all(np.isfinite(offset)):
        raise DomainError(f"target offset must be a scalar baseline or a finite 3-vector, got {offset.shape}")
    return offset


def validate_depth(depth) -> np.ndarray:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ShapeError(f"depth map must be (H, W), got {depth.shape}")
    if not np.all(np.isfinite(depth)):
        raise NonFiniteError("depth map holds non-finite values")
    if np.any(depth <= 0):
        raise DomainError("depth map must be strictly positive")
    return depth


def _target_points(depth: np.ndarray, offset: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unit source directions and the scene points seen from the target camera."""
    height, width = depth.shape
    dirs = erp_directions(width, height)
    moved = depth[..., None] * dirs - offset
    radius = np.linalg.norm(moved, axis=-1)
    if np.any(radius == 0):
        row, col = np.argwhere(radius == 0)[0]
        raise DegenerateGeometryError(f"scene point at pixel (row {row}, col {col}) coincides with the target camera")
    return dirs, moved


def spherical_disparity(depth, b: Offset) -> np.ndarray:
    """Angular disparity (Δφ, Δθ) per pixel, shaped (H, W, 2); Δφ wrapped to (-π, π]."""
    depth = validate_depth(depth)
    offset = target_offset(b)
    height, width = depth.shape
    if not np.any(offset):
        return np.zeros((height, width, 2))
    _, moved = _target_points(depth, offset)
    u, v = pixel_centers(width, height)
    src = erp_pixel_to_dir(u, v, width, height)
    tgt = unit_to_sph(moved)
    d_phi = -wrap_angle(-(src.phi - tgt.phi))
    d_theta = src.theta - tgt.theta
    return np.stack([d_phi, d_theta], axis=-1)


def disparity_to_pixels(delta: np.ndarray) -> np.ndarray:
    """Pixel-unit view (Δu, Δv) = (Δφ·W/2π, Δθ·H/π) of an angular disparity field."""
    height, width = delta.shape[:2]
    return np.stack([delta[..., 0] * width / TWO_PI, delta[..., 1] * height / np.pi], axis=-1)


def wrap_columns(du, width: int) -> np.ndarray:
    """Wraps horizontal pixel offsets into [-W/2, W/2)."""
    du = np.asarray(du, dtype=np.float64)
    half = width / 2.0
    return np.where((du < -half) | (du >= half), np.mod(du + half, width) - half, du)


def disparity_displacement(depth, b: Offset) -> np.ndarray:
    """Target-minus-source pixel motion of every source pixel, shaped (H, W, 2)."""
    px = -disparity_to_pixels(spherical_disparity(depth, b))
    px[..., 0] = wrap_columns(px[..., 0], px.shape[1])
    return px


def displacement_depth_derivative(depth, b: Offset) -> Tuple[np.ndarray, np.ndarray]:
    """
    Partial derivatives of the landing position (u', v') with respect to the radial
    depth of each source pixel, in pixels per meter. Zero where the moved point lies on
    the pole axis of the target camera.
    """
    depth = validate_depth(depth)
    offset = target_offset(b)
    height, width = depth.shape
    if not np.any(offset):
        zeros = np.zeros((height, width))
        return zeros, zeros.copy()
    dirs, moved = _target_points(depth, offset)
    px, py, pz = moved[..., 0], moved[..., 1], moved[..., 2]
    dx, dy, dz = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    rho_h2 = px * px + pz * pz
    rho2 = rho_h2 + py * py
    rho_h = np.sqrt(rho_h2)
    on_axis = rho_h <= 1e-12 * np.sqrt(rho2)
    safe_h2 = np.where(on_axis, 1.0, rho_h2)
    safe_h = np.where(on_axis, 1.0, rho_h)
    d_phi = np.where(on_axis, 0.0, (px * dz - pz * dx) / safe_h2)
    along = px * dx + py * dy + pz * dz
    d_theta = np.where(on_axis, 0.0, -(dy * rho2 - py * along) / (rho2 * safe_h))
    return d_phi * width / TWO_PI, d_theta * height / np.pi


def splat_nearest(values, target_u, target_v, priority) -> WarpResult:
    """
    Pushes every source sample to the nearest destination pixel of its continuous
    landing position (u wraps, v outside [0, H] is dropped). Collisions keep the
    smallest priority, ties the lowest source index, so the result does not depend
    on evaluation order.
    """
    values = np.asarray(values)
    height, width = values.shape[:2]
    tu = np.asarray(target_u, dtype=np.float64).ravel()
    tv = np.asarray(target_v, dtype=np.float64).ravel()
    prio = np.asarray(priority, dtype=np.float64).ravel()

    cols = np.floor(np.mod(tu, width)).astype(np.int64) % width
    rows = np.minimum(np.floor(tv), height - 1).astype(np.int64)
    landed = (tv >= 0) & (tv <= height)
    src = np.flatnonzero(landed)
    dest = rows[src] * width + cols[src]

    order = np.lexsort((src, prio[src], dest))
    dest_sorted = dest[order]
    _, first = np.unique(dest_sorted, return_index=True)
    winners_dest = dest_sorted[first]
    winners_src = src[order][first]

    flat_values = values.reshape(height * width, *values.shape[2:])
    image = np.zeros((height * width,) + values.shape[2:], dtype=np.float64)
    image[winners_dest] = flat_values[winners_src]
    coverage = np.zeros(height * width, dtype=bool)
    coverage[winners_dest] = True
    zbuffer = np.full(height * width, np.inf)
    zbuffer[winners_dest] = prio[winners_src]
    source_index = np.full(height * width, -1, dtype=np.int64)
    source_index[winners_dest] = winners_src

    return WarpResult(
        image=image.reshape(values.shape[:2] + values.shape[2:]),
        coverage=coverage.reshape(height, width),
        zbuffer=zbuffer.reshape(height, width),
        source_index=source_index.reshape(height, width),
    )


def _identity_warp(source: np.ndarray, zbuffer: np.ndarray) -> WarpResult:
    height, width = source.shape[:2]
    return WarpResult(
        image=source.astype(np.float64, copy=True),
        coverage=np.ones((height, width), dtype=bool),
        zbuffer=np.array(zbuffer, dtype=np.float64, copy=True),
        source_index=np.arange(height * width, dtype=np.int64).reshape(height, width),
    )


def reproject_frame(source, depth, b: Offset) -> WarpResult:
    """
    View synthesis of the target frame from the source frame and its depth: each source
    pixel lands at p + displacement; collisions keep the smallest target-frame radial
    distance (z-buffer).
    """
    source = np.asarray(source)
    depth = validate_depth(depth)
    check_same_shape(source, depth)
    offset = target_offset(b)
    if not np.any(offset):
        return _identity_warp(source, depth)
    height, width = depth.shape
    _, moved = _target_points(depth, offset)
    u, v = pixel_centers(width, height)
    disp = disparity_displacement(depth, offset)
    return splat_nearest(source, u + disp[..., 0], v + disp[..., 1], np.linalg.norm(moved, axis=-1))


def distortion_weight_at(phi, theta, mode: Optional[WeightMode] = None) -> np.ndarray:
    mode = mode or defaults.WEIGHT_MODE
    polar = np.abs(np.sin(np.asarray(theta, dtype=np.float64)))
    if mode == "polar_only":
        return polar
    if mode != "full":
        raise DomainError(f"unknown weight mode '{mode}'")
    return np.abs(np.sin(np.asarray(phi, dtype=np.float64))) * polar


def distortion_weight(width: int, height: int, mode: Optional[WeightMode] = None) -> np.ndarray:
    """Weight matrix M evaluated at pixel centers: |sin φ|·|sin θ| ("full") or |sin θ| ("polar_only")."""
    u, v = pixel_centers(width, height)
    angles = erp_pixel_to_dir(u, v, width, height)
    return distortion_weight_at(angles.phi, angles.theta, mode)


def _channels(grid: np.ndarray) -> np.ndarray:
    return grid[..., None] if grid.ndim == 2 else grid


def covered_l2(image, reference, coverage, weight=None, min_coverage: Optional[float] = None) -> Tuple[float, float]:
    """
    Sum over covered pixels of the per-pixel L2 norm of weight·(image - reference),
    divided by the covered count. Returns (loss, coverage_fraction).
    """
    if min_coverage is None:
        min_coverage = defaults.MIN_COVERAGE
    coverage = np.asarray(coverage, dtype=bool)
    check_same_shape(image, reference, coverage)
    fraction = float(np.mean(coverage))
    if fraction < min_coverage:
        raise InsufficientOverlapError(fraction, min_coverage)
    image = _channels(np.asarray(image, dtype=np.float64))
    reference = _channels(np.asarray(reference, dtype=np.float64))
    if image.shape != reference.shape:
        raise ShapeError(f"channel count mismatch: {image.shape[-1]} vs {reference.shape[-1]}")
    residual = image - reference
    norms = np.sqrt(np.sum(residual * residual, axis=-1))
    if weight is not None:
        check_same_shape(weight, coverage)
        norms = np.asarray(weight, dtype=np.float64) * norms
    count = int(np.count_nonzero(coverage))
    if count == 0:
        return 0.0, fraction
    return float(np.sum(norms[coverage])) / count, fraction


def geometric_loss(k_hat: WarpResult, k, M, min_coverage: Optional[float] = None) -> Tuple[float, float]:
    """Distortion-weighted photometric distance between a synthesized and a real target frame."""
    return covered_l2(k_hat.image, k, k_hat.coverage, weight=M, min_coverage=min_coverage)


def _linearized_terms(depth, source, target, b, M, warp: Optional[WarpResult], min_coverage, with_grad: bool):
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    depth = validate_depth(depth)
    check_same_shape(source, target, depth, M)
    height, width = depth.shape
    offset = target_offset(b)
    if warp is None:
        warp = reproject_frame(source, depth, offset)
    if min_coverage is None:
        min_coverage = defaults.MIN_COVERAGE
    fraction = warp.coverage_fraction
    if fraction < min_coverage:
        raise InsufficientOverlapError(fraction, min_coverage)

    grad = np.zeros((height, width))
    dest = np.flatnonzero(warp.coverage)
    if dest.size == 0:
        return 0.0, fraction, grad
    src = warp.source_index.ravel()[dest]
    weight = np.asarray(M, dtype=np.float64).ravel()[dest]

    u, v = pixel_centers(width, height)
    disp = disparity_displacement(depth, offset)
    land_u = (u + disp[..., 0]).ravel()[src]
    land_v = (v + disp[..., 1]).ravel()[src]
    sampled, k_du, k_dv = bilinear_sample_with_gradient(target, land_u, land_v)

    src_vals = _channels(source).reshape(height * width, -1)[src]
    residual = src_vals - sampled.reshape(src_vals.shape)
    norms = np.sqrt(np.sum(residual * residual, axis=-1))
    loss = float(np.sum(weight * norms)) / dest.size

    if with_grad:
        du_dr, dv_dr = displacement_depth_derivative(depth, offset)
        safe = np.where(norms > 0, norms, 1.0)
        unit = np.where((norms > 0)[:, None], residual / safe[:, None], 0.0)
        k_du = k_du.reshape(residual.shape)
        k_dv = k_dv.reshape(residual.shape)
        d_sample = k_du * du_dr.ravel()[src][:, None] + k_dv * dv_dr.ravel()[src][:, None]
        per_winner = -weight * np.sum(unit * d_sample, axis=-1) / dest.size
        np.add.at(grad.reshape(-1), src, per_winner)
    return loss, fraction, grad


def geometric_loss_linearized(depth, source, target, b: Offset, M, warp: Optional[WarpResult] = None,
                              min_coverage: Optional[float] = None) -> Tuple[float, float]:
    """
    Differentiable companion of geometric_loss: for every z-buffer winner p landing on
    target pixel q, the residual M(q)·(j(p) - k(p')) compares the source color with the
    target bilinearly sampled at the continuous landing position p'. Winners come from
    `warp` (computed from `depth` when omitted) and stay fixed.
    """
    loss, fraction, _ = _linearized_terms(depth, source, target, b, M, warp, min_coverage, with_grad=False)
    return loss, fraction


def geometric_loss_grad(depth, source, target, b: Offset, M, warp: Optional[WarpResult] = None,
                        min_coverage: Optional[float] = None) -> np.ndarray:
    """Analytic d(geometric_loss_linearized)/d(depth); zero on pixels that won no splat."""
    _, _, grad = _linearized_terms(depth, source, target, b, M, warp, min_coverage, with_grad=True)
    return grad


def geometric_loss_and_grad(depth, source, target, b: Offset, M, warp: Optional[WarpResult] = None,
                            min_coverage: Optional[float] = None) -> Tuple[float, float, np.ndarray]:
    return _linearized_terms(depth, source, target, b, M, warp, min_coverage, with_grad=True)
