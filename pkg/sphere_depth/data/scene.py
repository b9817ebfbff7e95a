"""
Analytic scene description for the ray-cast renderer.
All lengths are meters in world coordinates; colors are linear RGB in [0, 1].
"""

from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

Vec3 = Tuple[float, float, float]
Color = Tuple[float, float, float]


class SolidAlbedo(BaseModel):
    kind: Literal["solid"] = "solid"
    color: Color = (0.5, 0.5, 0.5)

    @property
    def mean_color(self) -> np.ndarray:
        return np.array(self.color, dtype=np.float64)

    def shade(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.mean_color, points.shape).copy()


class CheckerAlbedo(BaseModel):
    """
    3D checkerboard with cell size `period`, offset by a quarter period so cell borders
    avoid the coordinate planes. With `fade_radius` set, the pattern blends linearly into
    the mean color between fade_radius and 2·fade_radius from the world origin.
    """
    kind: Literal["checker"] = "checker"
    color_a: Color = (0.2, 0.2, 0.2)
    color_b: Color = (0.8, 0.8, 0.8)
    period: float = Field(1.0, gt=0)
    fade_radius: Optional[float] = Field(None, gt=0)

    @property
    def mean_color(self) -> np.ndarray:
        return 0.5 * (np.array(self.color_a) + np.array(self.color_b))

    def shade(self, points: np.ndarray) -> np.ndarray:
        cells = np.floor(points / self.period + 0.25).astype(np.int64)
        odd = (cells.sum(axis=-1) % 2).astype(bool)
        rgb = np.where(odd[..., None], np.array(self.color_b), np.array(self.color_a))
        if self.fade_radius is not None:
            dist = np.linalg.norm(points, axis=-1)
            t = np.clip(dist / self.fade_radius - 1.0, 0.0, 1.0)[..., None]
            rgb = (1.0 - t) * rgb + t * self.mean_color
        return rgb


Albedo = Annotated[Union[SolidAlbedo, CheckerAlbedo], Field(discriminator="kind")]


class Plane(BaseModel):
    kind: Literal["plane"] = "plane"
    point: Vec3
    normal: Vec3
    albedo: Albedo = Field(default_factory=SolidAlbedo)

    @field_validator("normal")
    @classmethod
    def _unit_normal(cls, value):
        n = np.asarray(value, dtype=np.float64)
        norm = np.linalg.norm(n)
        if norm == 0:
            raise ValueError("plane normal must be nonzero")
        return tuple(float(c) for c in n / norm)

    def extent(self) -> float:
        # distance from the origin; the sky shell clips the rest
        return abs(float(np.dot(self.point, self.normal)))


class Sphere(BaseModel):
    kind: Literal["sphere"] = "sphere"
    center: Vec3
    radius: float = Field(gt=0)
    albedo: Albedo = Field(default_factory=SolidAlbedo)

    def extent(self) -> float:
        return float(np.linalg.norm(self.center)) + self.radius


class Box(BaseModel):
    """Axis-aligned box."""
    kind: Literal["box"] = "box"
    min_corner: Vec3
    max_corner: Vec3
    albedo: Albedo = Field(default_factory=SolidAlbedo)

    @model_validator(mode="after")
    def _ordered_corners(self):
        if any(lo >= hi for lo, hi in zip(self.min_corner, self.max_corner)):
            raise ValueError("box min_corner must be below max_corner on every axis")
        return self

    def extent(self) -> float:
        corners = np.array(np.meshgrid(*zip(self.min_corner, self.max_corner))).reshape(3, -1).T
        return float(np.max(np.linalg.norm(corners, axis=1)))


class SkyShell(BaseModel):
    """Sphere of `radius` centred on the viewing camera, seen from inside. Sky depth is always `radius`."""
    kind: Literal["sky"] = "sky"
    radius: float = Field(gt=0)
    albedo: Albedo = Field(default_factory=lambda: SolidAlbedo(color=(0.55, 0.7, 0.9)))

    def extent(self) -> float:
        return self.radius


Primitive = Annotated[Union[Plane, Sphere, Box, SkyShell], Field(discriminator="kind")]


class Scene(BaseModel):
    primitives: List[Primitive]

    @model_validator(mode="after")
    def _check_bounds(self):
        if not self.primitives:
            raise ValueError("a scene needs at least one primitive")
        skies = [p for p in self.primitives if isinstance(p, SkyShell)]
        if len(skies) > 1:
            raise ValueError("a scene holds at most one sky shell")
        if skies:
            for prim in self.objects:
                if prim.extent() >= skies[0].radius:
                    raise ValueError(
                        f"{prim.kind} extent {prim.extent():.3f} m reaches the sky radius {skies[0].radius:.3f} m"
                    )
        return self

    @property
    def sky(self) -> Optional[SkyShell]:
        return next((p for p in self.primitives if isinstance(p, SkyShell)), None)

    @property
    def objects(self) -> List[Union[Plane, Sphere, Box]]:
        return [p for p in self.primitives if not isinstance(p, SkyShell)]
