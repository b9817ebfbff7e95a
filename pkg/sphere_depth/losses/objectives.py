"""
Supervised objectives (berHu for depth, cross-entropy for segmentation) and the
standard monocular depth evaluation metrics.
"""

import logging
from typing import Optional

import numpy as np

from ..data.models import MetricReport
from ..geometry.sphere_geom import check_same_shape
from ..infrastructure.logging_utils import DomainError, NonFiniteError, ShapeError

logger = logging.getLogger("SphereDepth.Objectives")

PROB_FLOOR = 1e-12
DELTA_BASE = 1.25


def _valid_mask(shape, valid) -> np.ndarray:
    if valid is None:
        return np.ones(shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != tuple(shape):
        raise ShapeError(f"mask {valid.shape} does not match raster {tuple(shape)}")
    return valid


def berhu_loss(pred, gt, valid=None) -> float:
    """
    Reverse Huber loss over the valid pixels: |d| where |d| <= c, (d² + c²) / 2c above,
    with c = max|d| / 5 recomputed per call. Identical inputs (c = 0) give exactly 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, spatial_only=False)
    mask = _valid_mask(gt.shape, valid)
    if not np.any(mask):
        raise DomainError("berHu loss needs at least one valid pixel")
    residual = np.abs(pred[mask] - gt[mask])
    if not np.all(np.isfinite(residual)):
        raise NonFiniteError("berHu loss received non-finite depth")
    c = float(np.max(residual)) / 5.0
    if c == 0.0:
        return 0.0
    terms = np.where(residual <= c, residual, (residual * residual + c * c) / (2.0 * c))
    return float(np.mean(terms))


def cross_entropy_loss(pred, target, num_classes: Optional[int] = None) -> float:
    """Mean over pixels of -ln(pred[target]) with probabilities floored at 1e-12."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target)
    if pred.ndim != target.ndim + 1 or pred.shape[:-1] != target.shape:
        raise ShapeError(f"probabilities {pred.shape} do not match labels {target.shape}")
    classes = pred.shape[-1]
    if num_classes is not None and classes != num_classes:
        raise ShapeError(f"probabilities carry {classes} classes, expected {num_classes}")
    if not np.issubdtype(target.dtype, np.integer):
        raise DomainError("labels must be integer class ids")
    if np.any(target < 0) or np.any(target >= classes):
        raise ShapeError(f"label ids must lie in [0, {classes})")
    if np.any(pred < 0) or np.any(np.abs(pred.sum(axis=-1) - 1.0) > 1e-6):
        raise DomainError("probabilities must be non-negative and sum to 1 per pixel")
    picked = np.take_along_axis(pred, target[..., None].astype(np.intp), axis=-1)[..., 0]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def total_loss(pred_depth, gt_depth, pred_prob, target_labels, valid=None) -> float:
    """Joint depth and segmentation objective: berHu plus cross-entropy."""
    return berhu_loss(pred_depth, gt_depth, valid) + cross_entropy_loss(pred_prob, target_labels)


def depth_metrics(pred, gt, valid=None, median_scaling: bool = False) -> MetricReport:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    check_same_shape(pred, gt, spatial_only=False)
    mask = _valid_mask(gt.shape, valid)
    if not np.any(mask):
        raise DomainError("depth metrics need at least one valid pixel")
    p, g = pred[mask], gt[mask]
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(g))):
        raise NonFiniteError("depth metrics received non-finite depth")
    if np.any(g <= 0):
        raise DomainError("ground-truth depth must be positive on the valid mask")
    if np.any(p <= 0):
        raise DomainError("predicted depth must be positive on the valid mask")

    if median_scaling:
        ratio = np.median(g) / np.median(p)
        logger.info(f"Median scaling factor {ratio:.6g}")
        p = p * ratio

    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff * diff / g)),
        rmse=float(np.sqrt(np.mean(diff * diff))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < DELTA_BASE)),
        delta2=float(np.mean(ratio < DELTA_BASE ** 2)),
        delta3=float(np.mean(ratio < DELTA_BASE ** 3)),
        valid_pixels=int(p.size),
    )
