from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..infrastructure.logging_utils import ShapeError
from .models import CameraPose


@dataclass(frozen=True)
class Frame:
    """One spherical frame: ERP color image (H, W, 3) in [0, 1] plus its camera pose."""
    image: np.ndarray
    pose: CameraPose
    depth: Optional[np.ndarray] = None   # prior depth D^NN, radial meters
    recon: Optional[np.ndarray] = None   # sparse reconstruction depth, 0 = no value

    @property
    def shape(self) -> Tuple[int, int]:
        return self.image.shape[:2]


@dataclass(frozen=True)
class FrameSequence:
    """
    Ordered frames of one short sequence. `flows[(j, k)]` holds the (H, W, 2) pixel
    flow from frame j to frame k where one is available.
    """
    frames: List[Frame]
    sequence_id: int = 0
    flows: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.frames:
            raise ShapeError("a sequence needs at least one frame")
        shape = self.frames[0].shape
        for idx, frame in enumerate(self.frames):
            rasters = [("image", frame.image), ("depth", frame.depth), ("recon", frame.recon)]
            for name, raster in rasters:
                if raster is not None and raster.shape[:2] != shape:
                    raise ShapeError(f"frame {idx} {name} is {raster.shape[:2]}, sequence is {shape}")
        for (j, k), flow in self.flows.items():
            if flow.shape != shape + (2,):
                raise ShapeError(f"flow {j}->{k} is {flow.shape}, expected {shape + (2,)}")
            if not (0 <= j < len(self.frames) and 0 <= k < len(self.frames)):
                raise ShapeError(f"flow {j}->{k} refers to a missing frame")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].shape[1]

    @property
    def poses(self) -> List[CameraPose]:
        return [f.pose for f in self.frames]

    def with_poses(self, poses: List[CameraPose]) -> "FrameSequence":
        frames = [replace(f, pose=p) for f, p in zip(self.frames, poses, strict=True)]
        return replace(self, frames=frames)

    def with_depths(self, depths: List[np.ndarray]) -> "FrameSequence":
        frames = [replace(f, depth=d) for f, d in zip(self.frames, depths, strict=True)]
        return replace(self, frames=frames)
