from typing import ClassVar, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..infrastructure import globals as defaults


class CameraPose(BaseModel):
    """Camera-to-world rigid transform of a spherical camera; translation in meters."""
    model_config = ConfigDict(arbitrary_types_allowed=True, validate_default=True)

    rotation: np.ndarray = Field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = Field(default_factory=lambda: np.zeros(3))

    @field_validator("rotation", mode="before")
    @classmethod
    def _check_rotation(cls, value):
        R = np.array(value, dtype=np.float64)
        if R.shape != (3, 3) or not np.all(np.isfinite(R)):
            raise ValueError("rotation must be a finite 3x3 matrix")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        return R

    @field_validator("translation", mode="before")
    @classmethod
    def _check_translation(cls, value):
        t = np.array(value, dtype=np.float64).reshape(-1)
        if t.shape != (3,) or not np.all(np.isfinite(t)):
            raise ValueError("translation must be a finite 3-vector")
        t.setflags(write=False)
        return t

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    def with_translation(self, translation) -> "CameraPose":
        return CameraPose(rotation=self.rotation, translation=translation)

    def with_rotation(self, rotation) -> "CameraPose":
        return CameraPose(rotation=rotation, translation=self.translation)

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)


class PairPolicy(BaseModel):
    """Which ordered frame pairs the test-time objective visits."""
    short_term: bool = True          # consecutive frames
    long_term_gap: int = Field(2, ge=0)  # 0 disables the wider left-right pairs
    bidirectional: bool = True

    def pairs(self, n_frames: int) -> List[Tuple[int, int]]:
        """Ordered (source, target) pairs for a sequence of n_frames, sorted."""
        gaps = []
        if self.short_term:
            gaps.append(1)
        if self.long_term_gap > 1:
            gaps.append(self.long_term_gap)
        selected = set()
        for gap in gaps:
            for j in range(n_frames - gap):
                selected.add((j, j + gap))
                if self.bidirectional:
                    selected.add((j + gap, j))
        return sorted(selected)


class OptimizeConfig(BaseModel):
    epochs: int = Field(default_factory=lambda: defaults.EPOCHS, ge=0)
    step_size: float = Field(default_factory=lambda: defaults.STEP_SIZE, gt=0)
    max_halvings: int = Field(default_factory=lambda: defaults.MAX_HALVINGS, ge=0)
    downsample: int = Field(default_factory=lambda: defaults.DOWNSAMPLE, ge=1)
    depth_min: float = Field(default_factory=lambda: defaults.DEPTH_MIN, gt=0)
    depth_max: float = Field(default_factory=lambda: defaults.DEPTH_MAX, gt=0)
    geometric_weight: float = Field(1.0, ge=0)
    temporal_weight: float = Field(1.0, ge=0)
    photometric_weight: float = Field(0.0, ge=0)  # diagnostic term, no depth gradient
    min_coverage: float = Field(default_factory=lambda: defaults.MIN_COVERAGE, ge=0, le=1)
    weight_mode: Literal["full", "polar_only"] = Field(default_factory=lambda: defaults.WEIGHT_MODE)
    update: Literal["normalized", "gradient"] = "normalized"
    pair_policy: PairPolicy = Field(default_factory=PairPolicy)
    skip_insufficient_overlap: bool = False
    threads: int = Field(default_factory=lambda: defaults.THREADS, ge=1)

    @model_validator(mode="after")
    def _check_depth_range(self):
        if self.depth_min >= self.depth_max:
            raise ValueError("depth_min must be smaller than depth_max")
        return self


class MetricReport(BaseModel):
    abs_rel: float
    sq_rel: float
    rmse: float = Field(ge=0)
    rmse_log: float = Field(ge=0)
    delta1: float = Field(ge=0, le=1)
    delta2: float = Field(ge=0, le=1)
    delta3: float = Field(ge=0, le=1)
    valid_pixels: int = 0

    COLUMNS: ClassVar[Tuple[str, ...]] = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")

    def to_record(self) -> str:
        """Single-line key=value record."""
        return " ".join(f"{name}={getattr(self, name):.6f}" for name in self.COLUMNS) + f" valid_pixels={self.valid_pixels}"

    @classmethod
    def table_header(cls) -> str:
        return " | ".join(f"{name:>8}" for name in cls.COLUMNS)

    def table_row(self) -> str:
        return " | ".join(f"{getattr(self, name):8.3f}" for name in self.COLUMNS)


class PairLoss(BaseModel):
    source: int
    target: int
    geometric: float = 0.0
    temporal: float = 0.0
    photometric: Optional[float] = None
    coverage: float = 0.0
    skipped: bool = False

    @property
    def total(self) -> float:
        return self.geometric + self.temporal + (self.photometric or 0.0)


class EpochRecord(BaseModel):
    epoch: int
    geometric: float
    temporal: float
    total: float
    step_size: float = 0.0
    accepted: bool = True


class SequenceMeta(BaseModel):
    """Contents of a manifest's meta.txt."""
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    frames: int = Field(0, ge=0)
    baseline: Optional[float] = None
    scale: Optional[float] = None
    seed: Optional[int] = None
    pairs: List[Tuple[int, int]] = []
