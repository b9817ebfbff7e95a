"""
Test-time refinement of per-frame depth fields against the combined geometric and
temporal consistency objective of a frame sequence.

The optimization variable of each frame is a coarse grid of log-depth values (one per
downsample x downsample block, initialised from the block mean of the log initial depth):
    depth = clip(exp(Ay · C · Axᵀ), depth_min, depth_max)
where Ax wraps around in longitude and Ay clamps at the poles.
"""

import functools
import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..data.models import EpochRecord, OptimizeConfig, PairLoss, PairPolicy
from ..data.sequence import FrameSequence
from ..geometry.alignment import pair_offset
from ..infrastructure.logging_utils import (
    ConfigurationError,
    InputError,
    InsufficientOverlapError,
    NumericalFailureError,
)
from ..infrastructure.parallel import ordered_map
from ..losses.disparity import distortion_weight, geometric_loss_and_grad, geometric_loss_linearized, validate_depth
from ..losses.temporal import flow_warp, temporal_loss_and_grad, temporal_loss_photometric

logger = logging.getLogger("SphereDepth.Optimizer")

ROTATION_TOLERANCE = 1e-9


@functools.lru_cache(maxsize=16)
def _interp_matrix(n_full: int, downsample: int, wrap: bool) -> np.ndarray:
    """Linear interpolation from n_full/downsample block centers to n_full pixel centers."""
    n_coarse = n_full // downsample
    x = (np.arange(n_full) + 0.5) / downsample - 0.5
    if wrap:
        i0 = np.floor(x).astype(np.int64)
        frac = x - i0
        i0, i1 = i0 % n_coarse, (i0 + 1) % n_coarse
    else:
        x = np.clip(x, 0, n_coarse - 1)
        i0 = np.floor(x).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_coarse - 1)
        frac = x - i0
    rows = np.arange(n_full)
    A = np.zeros((n_full, n_coarse))
    np.add.at(A, (rows, i0), 1.0 - frac)
    np.add.at(A, (rows, i1), frac)
    A.setflags(write=False)
    return A


@dataclass(frozen=True)
class DepthParams:
    coarse: Tuple[np.ndarray, ...]
    shape: Tuple[int, int]
    downsample: int
    depth_min: float
    depth_max: float

    @classmethod
    def from_depth(cls, depths: Sequence[np.ndarray], downsample: int = 4,
                   depth_min: float = 0.1, depth_max: float = 1e4) -> "DepthParams":
        """Block-averaged log of each initial depth map; downsample=1 keeps every pixel."""
        maps = [validate_depth(d) for d in depths]
        if not maps:
            raise ConfigurationError("no depth maps to refine")
        if not 0 < depth_min < depth_max:
            raise ConfigurationError(f"depth range [{depth_min}, {depth_max}] is empty")
        height, width = maps[0].shape
        if any(m.shape != (height, width) for m in maps):
            raise ConfigurationError("all depth maps must share one resolution")
        if height % downsample or width % downsample:
            raise ConfigurationError(f"resolution {width}x{height} is not divisible by downsample {downsample}")
        s = downsample
        coarse = tuple(
            np.log(np.clip(m, depth_min, depth_max)).reshape(height // s, s, width // s, s).mean(axis=(1, 3))
            for m in maps
        )
        return cls(coarse=coarse, shape=(height, width), downsample=s, depth_min=depth_min, depth_max=depth_max)

    def __len__(self) -> int:
        return len(self.coarse)

    def _matrices(self):
        height, width = self.shape
        return _interp_matrix(height, self.downsample, False), _interp_matrix(width, self.downsample, True)

    def upsample(self, idx: int) -> np.ndarray:
        Ay, Ax = self._matrices()
        return Ay @ self.coarse[idx] @ Ax.T

    def to_depth(self, idx: int) -> np.ndarray:
        return np.clip(np.exp(self.upsample(idx)), self.depth_min, self.depth_max)

    def depths(self) -> List[np.ndarray]:
        return [self.to_depth(i) for i in range(len(self))]

    def coarse_gradient(self, idx: int, depth_grad: np.ndarray) -> np.ndarray:
        """Chains dL/d(depth) through the exponential and the upsampling; grid values never leave the depth range."""
        Ay, Ax = self._matrices()
        return Ay.T @ (depth_grad * self.to_depth(idx)) @ Ax

    def shifted(self, deltas: Sequence[np.ndarray]) -> "DepthParams":
        lo, hi = math.log(self.depth_min), math.log(self.depth_max)
        return replace(self, coarse=tuple(np.clip(c + d, lo, hi) for c, d in zip(self.coarse, deltas, strict=True)))


def select_pairs(n_frames: int, policy: PairPolicy) -> List[Tuple[int, int]]:
    return policy.pairs(n_frames)


def _check_finite(value: float, grad: Optional[np.ndarray], pair: Tuple[int, int], what: str):
    if not math.isfinite(value):
        raise NumericalFailureError(f"{what} loss is not finite", pair=pair)
    if grad is not None and not np.all(np.isfinite(grad)):
        row, col = np.argwhere(~np.isfinite(grad))[0]
        raise NumericalFailureError(f"{what} gradient is not finite", pair=pair, pixel=(int(row), int(col)))


def _pair_terms(seq: FrameSequence, depth_j: np.ndarray, pair: Tuple[int, int], cfg: OptimizeConfig,
                M: np.ndarray, with_grad: bool) -> Tuple[PairLoss, Optional[np.ndarray]]:
    j, k = pair
    frame_j, frame_k = seq.frames[j], seq.frames[k]
    if np.max(np.abs(frame_j.pose.rotation - frame_k.pose.rotation)) > ROTATION_TOLERANCE:
        raise ConfigurationError(f"pair {j}->{k} is not rotation-aligned; adjust the pair first")
    offset = pair_offset(frame_j.pose, frame_k.pose)
    record = PairLoss(source=j, target=k)
    grad = np.zeros_like(depth_j) if with_grad else None

    if cfg.geometric_weight > 0:
        try:
            if with_grad:
                loss, coverage, g = geometric_loss_and_grad(depth_j, frame_j.image, frame_k.image, offset, M,
                                                           min_coverage=cfg.min_coverage)
            else:
                g = None
                loss, coverage = geometric_loss_linearized(depth_j, frame_j.image, frame_k.image, offset, M,
                                                           min_coverage=cfg.min_coverage)
        except InsufficientOverlapError as exc:
            if not cfg.skip_insufficient_overlap:
                raise
            logger.warning(f"Skipping pair {j}->{k}: {exc}")
            return PairLoss(source=j, target=k, skipped=True, coverage=exc.coverage), grad
        _check_finite(loss, g, pair, "geometric")
        record.geometric = cfg.geometric_weight * loss
        record.coverage = coverage
        if with_grad:
            grad += cfg.geometric_weight * g

    if cfg.temporal_weight > 0 or cfg.photometric_weight > 0:
        flow = seq.flows.get(pair)
        if flow is None:
            raise InputError(f"no optical flow for pair {j}->{k}")
        if cfg.temporal_weight > 0:
            loss, g = temporal_loss_and_grad(depth_j, offset, flow, M, with_grad=with_grad)
            _check_finite(loss, g, pair, "temporal")
            record.temporal = cfg.temporal_weight * loss
            if with_grad:
                grad += cfg.temporal_weight * g
        if cfg.photometric_weight > 0:
            warped = flow_warp(frame_j.image, flow)
            record.photometric = cfg.photometric_weight * temporal_loss_photometric(warped, frame_k.image, cfg.min_coverage)
    return record, grad


def _objective(seq: FrameSequence, params: DepthParams, cfg: OptimizeConfig, with_grad: bool):
    pairs = select_pairs(len(seq), cfg.pair_policy)
    if not pairs:
        raise ConfigurationError(f"the pair policy selects no pairs for a {len(seq)}-frame sequence")
    if len(params) != len(seq):
        raise ConfigurationError(f"{len(params)} depth maps for {len(seq)} frames")
    if params.shape != (seq.height, seq.width):
        raise ConfigurationError(f"depth maps are {params.shape}, frames are {(seq.height, seq.width)}")

    M = distortion_weight(seq.width, seq.height, cfg.weight_mode)
    depths = params.depths()
    results = ordered_map(lambda pair: _pair_terms(seq, depths[pair[0]], pair, cfg, M, with_grad), pairs, cfg.threads)

    breakdown = [rec for rec, _ in results]
    total = math.fsum(rec.total for rec in breakdown)
    if not with_grad:
        return total, breakdown, None

    depth_grads = [np.zeros(params.shape) for _ in range(len(seq))]
    for (j, _), (_, grad) in zip(pairs, results):
        depth_grads[j] += grad
    coarse = [params.coarse_gradient(i, g) for i, g in enumerate(depth_grads)]
    return total, breakdown, coarse


def combined_loss(seq: FrameSequence, params: DepthParams, cfg: OptimizeConfig) -> Tuple[float, List[PairLoss]]:
    """Sum over the selected pairs of the weighted geometric and temporal terms, with the per-pair breakdown."""
    total, breakdown, _ = _objective(seq, params, cfg, with_grad=False)
    return total, breakdown


def _record(epoch: int, breakdown: List[PairLoss], total: float, step: float, accepted: bool) -> EpochRecord:
    return EpochRecord(
        epoch=epoch,
        geometric=math.fsum(p.geometric for p in breakdown),
        temporal=math.fsum(p.temporal for p in breakdown),
        total=total,
        step_size=step,
        accepted=accepted,
    )


def _descent_direction(grads: List[np.ndarray], update: str) -> List[np.ndarray]:
    if update == "normalized":
        return [-np.sign(g) for g in grads]
    scale = max(float(np.max(np.abs(g))) for g in grads)
    if scale == 0.0:
        return [np.zeros_like(g) for g in grads]
    return [-g / scale for g in grads]


def optimize_sequence(seq: FrameSequence, init: DepthParams, cfg: OptimizeConfig) -> Tuple[DepthParams, List[EpochRecord]]:
    """
    Gradient descent on the coarse log-depth grids. Each epoch tries the step along the
    descent direction, halving it up to cfg.max_halvings times until the total loss
    drops; if it never drops the epoch keeps the current depth. The reduced step size
    carries over to the next epoch. The returned trace starts with the initial loss (epoch 0).
    """
    total, breakdown, grads = _objective(seq, init, cfg, with_grad=cfg.epochs > 0)
    trace = [_record(0, breakdown, total, 0.0, True)]
    logger.info(f"Epoch 0: total {total:.6g}")
    if cfg.epochs == 0:
        return init, trace

    params, step = init, cfg.step_size
    for epoch in range(1, cfg.epochs + 1):
        direction = _descent_direction(grads, cfg.update)
        accepted = False
        for attempt in range(cfg.max_halvings + 1):
            candidate = params.shifted([step * d for d in direction])
            cand_total, cand_breakdown, _ = _objective(seq, candidate, cfg, with_grad=False)
            if cand_total < total:
                accepted = True
                break
            if attempt < cfg.max_halvings:
                step *= 0.5

        if accepted:
            params, breakdown = candidate, cand_breakdown
            total, breakdown, grads = _objective(seq, params, cfg, with_grad=True)
        else:
            logger.warning(f"Epoch {epoch}: no step down to {step:.3g} lowers the loss; depth kept")
        trace.append(_record(epoch, breakdown, total, step, accepted))
        logger.info(f"Epoch {epoch}: geometric {trace[-1].geometric:.6g}, temporal {trace[-1].temporal:.6g}, "
                    f"total {total:.6g}, step {step:.3g}")
    return params, trace
