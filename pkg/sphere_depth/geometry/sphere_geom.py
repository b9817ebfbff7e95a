"""
Equirectangular (ERP) and cubemap geometry on the unit sphere.

Conventions shared by every module of the package:

* direction ``d(phi, theta) = (sin(theta) cos(phi), cos(theta), sin(theta) sin(phi))``;
  ``phi`` is longitude in [-pi, pi), ``theta`` is colatitude in [0, pi], poles on +y / -y.
* ERP pixel (i, j) has its center at continuous coordinates (u, v) = (i + 0.5, j + 0.5);
  u = 0 is phi = -pi and row 0 touches the north pole. Full-sphere grids have W = 2H.
* ERP grids are arrays shaped (H, W) or (H, W, C). Cubemaps are shaped (6, F, F) or
  (6, F, F, C) with faces ordered +x, -x, +y, -y, +z, -z.
* Each face has a (forward, right, down) basis in ``FACE_BASES``; face pixel (a, b) with
  a the column looks along ``forward + s*right + t*down`` with s = 2a/F - 1, t = 2b/F - 1.
  Horizontal faces keep ERP handedness (right points toward increasing longitude) and
  ``FACE_ADJACENCY`` is derived from these bases, so reprojection and padding agree on seams.
"""

import functools
import logging
from typing import Dict, NamedTuple, Tuple, Union

import numpy as np
from scipy import ndimage

from ..infrastructure.logging_utils import DomainError, GeometryRangeError, ShapeError

logger = logging.getLogger("SphereDepth.Geometry")

TWO_PI = 2.0 * np.pi

FACE_NAMES = ("+x", "-x", "+y", "-y", "+z", "-z")
EDGES = ("top", "right", "bottom", "left")

# rows: forward, right, down
FACE_BASES = np.array([
    [[1, 0, 0], [0, 0, 1], [0, -1, 0]],
    [[-1, 0, 0], [0, 0, -1], [0, -1, 0]],
    [[0, 1, 0], [0, 0, 1], [1, 0, 0]],
    [[0, -1, 0], [0, 0, 1], [-1, 0, 0]],
    [[0, 0, 1], [-1, 0, 0], [0, -1, 0]],
    [[0, 0, -1], [1, 0, 0], [0, -1, 0]],
], dtype=np.int64)


class SphericalDir(NamedTuple):
    """Longitude/colatitude pair; arrays of any matching shape."""
    phi: np.ndarray
    theta: np.ndarray

    def unit(self) -> np.ndarray:
        return sph_to_unit(self.phi, self.theta)


def wrap_angle(angle):
    """Wraps angles into [-pi, pi)."""
    angle = np.asarray(angle, dtype=np.float64)
    return np.where((angle < -np.pi) | (angle >= np.pi), np.mod(angle + np.pi, TWO_PI) - np.pi, angle)


def sph_to_unit(phi, theta) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    s = np.sin(theta)
    return np.stack([s * np.cos(phi), np.cos(theta), s * np.sin(phi)], axis=-1)


def unit_to_sph(d) -> SphericalDir:
    """Spherical angles of (not necessarily unit) vectors shaped (..., 3)."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    phi = wrap_angle(np.arctan2(z, x))
    # atan2 form keeps full precision near the poles, unlike arccos
    theta = np.arctan2(np.hypot(x, z), y)
    return SphericalDir(phi, theta)


def pixel_centers(width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous (u, v) coordinates of every pixel center, each shaped (H, W)."""
    return np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)


def erp_pixel_to_dir(u, v, width: int, height: int) -> SphericalDir:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u < 0) or np.any(u > width) or np.any(v < 0) or np.any(v > height):
        raise GeometryRangeError(f"ERP coordinates outside [0, {width}] x [0, {height}]")
    phi = (u / width) * TWO_PI - np.pi
    theta = (v / height) * np.pi
    return SphericalDir(phi, theta)


def dir_to_erp_pixel(d: Union[SphericalDir, np.ndarray], width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous ERP coordinates of a direction; accepts SphericalDir or vectors shaped (..., 3)."""
    if isinstance(d, SphericalDir):
        phi, theta = wrap_angle(d.phi), np.asarray(d.theta, dtype=np.float64)
    else:
        phi, theta = unit_to_sph(d)
    u = (phi + np.pi) / TWO_PI * width
    v = theta / np.pi * height
    return u, v


def erp_directions(width: int, height: int) -> np.ndarray:
    """Unit ray direction of every pixel center, shaped (H, W, 3)."""
    u, v = pixel_centers(width, height)
    return erp_pixel_to_dir(u, v, width, height).unit()


def check_same_shape(*grids, spatial_only: bool = True):
    """Raises ShapeError unless all grids share (H, W) (or the full shape)."""
    shapes = [np.shape(g)[:2] if spatial_only else np.shape(g) for g in grids]
    if any(s != shapes[0] for s in shapes[1:]):
        raise ShapeError(f"resolution mismatch: {shapes}")


def bilinear_sample(grid, u, v) -> np.ndarray:
    """
    Bilinear interpolation at continuous ERP coordinates.
    Longitude wraps (column W blends back into column 0), rows clamp at the poles.
    """
    grid = np.asarray(grid)
    if grid.size == 0:
        raise ShapeError("cannot sample an empty grid")
    height, width = grid.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = np.mod(u - 0.5, width)
    y = v - 0.5
    padded = np.concatenate([grid, grid[:, :1]], axis=1).astype(np.float64)
    coords = np.stack([y.ravel(), x.ravel()])
    if grid.ndim == 2:
        out = ndimage.map_coordinates(padded, coords, order=1, mode="nearest", prefilter=False)
        return out.reshape(u.shape)
    channels = [
        ndimage.map_coordinates(padded[..., c], coords, order=1, mode="nearest", prefilter=False)
        for c in range(grid.shape[2])
    ]
    return np.stack(channels, axis=-1).reshape(u.shape + (grid.shape[2],))


def bilinear_sample_with_gradient(grid, u, v) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Same interpolant as bilinear_sample, plus its partial derivatives with respect
    to u and v (per pixel unit). The v-derivative is zero where rows are clamped.
    """
    grid = np.asarray(grid, dtype=np.float64)
    height, width = grid.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)

    x = np.mod(u - 0.5, width)
    x0f = np.floor(x)
    fx = x - x0f
    x0 = x0f.astype(np.intp) % width
    x1 = (x0 + 1) % width

    y = v - 0.5
    inside = (y >= 0) & (y <= height - 1)
    yc = np.clip(y, 0, height - 1)
    y0 = np.floor(yc).astype(np.intp)
    y1 = np.minimum(y0 + 1, height - 1)
    fy = yc - y0

    v00, v01 = grid[y0, x0], grid[y0, x1]
    v10, v11 = grid[y1, x0], grid[y1, x1]
    if grid.ndim == 3:
        fx, fy, inside = fx[..., None], fy[..., None], inside[..., None]

    top = (1 - fx) * v00 + fx * v01
    bottom = (1 - fx) * v10 + fx * v11
    value = (1 - fy) * top + fy * bottom
    d_du = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
    d_dv = np.where(inside, bottom - top, 0.0)
    return value, d_du, d_dv


# --- rotations -------------------------------------------------------------

def rotation_y(angle: float) -> np.ndarray:
    """Right-handed rotation about +y; rotation_y(-pi/2) maps +x onto +z."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    return bool(np.max(np.abs(R.T @ R - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol)


def validate_rotation(R, tol: float = 1e-9) -> np.ndarray:
    if not is_rotation(R, tol):
        raise DomainError("matrix is not a proper rotation (orthonormal, det +1)")
    return np.asarray(R, dtype=np.float64)


def rotate_erp(grid, R) -> np.ndarray:
    """
    Rotates spherical content by R: content seen along direction d moves to R·d.
    output(p) = bilinear_sample(input, dir_to_erp_pixel(Rᵀ·d(p))).
    """
    R = validate_rotation(R)
    grid = np.asarray(grid)
    if np.array_equal(R, np.eye(3)):
        return grid.copy()
    height, width = grid.shape[:2]
    src = erp_directions(width, height) @ R  # row-vector form of Rᵀ·d
    su, sv = dir_to_erp_pixel(src, width, height)
    return bilinear_sample(grid, _snap_to_centers(su), _snap_to_centers(sv))


def _snap_to_centers(coord: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Rounds coordinates lying within tol of a pixel center onto it (trig round-off)."""
    center = np.round(coord - 0.5) + 0.5
    return np.where(np.abs(coord - center) < tol, center, coord)


# --- cubemap ---------------------------------------------------------------

def face_of_axis(vec) -> int:
    """Index of the face whose forward axis equals the signed unit axis vec."""
    vec = np.asarray(vec)
    axis = int(np.flatnonzero(vec)[0])
    return 2 * axis + (1 if vec[axis] < 0 else 0)


def face_pixel_to_dir(face, a, b, face_size: int) -> np.ndarray:
    """Unit direction through continuous face coordinates (a column, b row) in [0, F]."""
    basis = FACE_BASES[np.asarray(face)].astype(np.float64)
    s = 2.0 * np.asarray(a, dtype=np.float64) / face_size - 1.0
    t = 2.0 * np.asarray(b, dtype=np.float64) / face_size - 1.0
    vec = basis[..., 0, :] + s[..., None] * basis[..., 1, :] + t[..., None] * basis[..., 2, :]
    return vec / np.linalg.norm(vec, axis=-1, keepdims=True)


def dir_to_face_pixel(d, face_size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Face index and continuous (a, b) face coordinates of directions shaped (..., 3)."""
    d = np.asarray(d, dtype=np.float64)
    axis = np.argmax(np.abs(d), axis=-1)
    major = np.take_along_axis(d, axis[..., None], axis=-1)[..., 0]
    face = 2 * axis + (major < 0)
    basis = FACE_BASES[face].astype(np.float64)
    forward = np.sum(d * basis[..., 0, :], axis=-1)
    s = np.sum(d * basis[..., 1, :], axis=-1) / forward
    t = np.sum(d * basis[..., 2, :], axis=-1) / forward
    return face, (s + 1.0) * 0.5 * face_size, (t + 1.0) * 0.5 * face_size


def erp_to_cubemap(grid, face_size: int) -> np.ndarray:
    if face_size < 2:
        raise DomainError(f"face size must be at least 2, got {face_size}")
    grid = np.asarray(grid)
    height, width = grid.shape[:2]
    a, b = np.meshgrid(np.arange(face_size) + 0.5, np.arange(face_size) + 0.5)
    faces = []
    for face in range(6):
        d = face_pixel_to_dir(np.full(a.shape, face), a, b, face_size)
        u, v = dir_to_erp_pixel(d, width, height)
        faces.append(bilinear_sample(grid, u, v))
    return np.stack(faces)


def cubemap_to_erp(cm, width: int, height: int) -> np.ndarray:
    """Resamples a cubemap to ERP; seams interpolate through one pixel of spherical padding."""
    cm = np.asarray(cm)
    if cm.ndim not in (3, 4) or cm.shape[0] != 6 or cm.shape[1] != cm.shape[2]:
        raise ShapeError(f"cubemap must be shaped (6, F, F[, C]), got {cm.shape}")
    face_size = cm.shape[1]
    padded = spherical_pad(cm, 1).astype(np.float64)
    face, a, b = dir_to_face_pixel(erp_directions(width, height), face_size)
    # continuous face coordinate a maps to padded array index a - 0.5 + 1
    x, y = a + 0.5, b + 0.5
    out = np.zeros((height, width) + cm.shape[3:], dtype=np.float64)
    for f in range(6):
        mask = face == f
        if not np.any(mask):
            continue
        coords = np.stack([y[mask], x[mask]])
        if cm.ndim == 3:
            out[mask] = ndimage.map_coordinates(padded[f], coords, order=1, mode="nearest", prefilter=False)
        else:
            out[mask] = np.stack([
                ndimage.map_coordinates(padded[f, ..., c], coords, order=1, mode="nearest", prefilter=False)
                for c in range(cm.shape[3])
            ], axis=-1)
    return out


def _edge_outward(face: int, edge: str) -> np.ndarray:
    _, right, down = FACE_BASES[face]
    return {"top": -down, "right": right, "bottom": down, "left": -right}[edge]


def _edge_tangent(face: int, edge: str) -> np.ndarray:
    _, right, down = FACE_BASES[face]
    return down if edge in ("left", "right") else right


def _build_adjacency() -> Dict[Tuple[int, str], Tuple[int, str, bool]]:
    table = {}
    for face in range(6):
        forward = FACE_BASES[face][0]
        for edge in EDGES:
            neighbor = face_of_axis(_edge_outward(face, edge))
            neighbor_edge = next(e for e in EDGES if np.array_equal(_edge_outward(neighbor, e), forward))
            flipped = int(np.dot(_edge_tangent(face, edge), _edge_tangent(neighbor, neighbor_edge))) < 0
            table[(face, edge)] = (neighbor, neighbor_edge, flipped)
    return table


# (face, edge) -> (neighbor face, neighbor edge, pixel order reversed along the seam)
FACE_ADJACENCY = _build_adjacency()


def edge_strip(face_raster, edge: str, depth: int = 0) -> np.ndarray:
    """The pixel line `depth` pixels inside `edge`, ordered by increasing row/column index."""
    raster = np.asarray(face_raster)
    size = raster.shape[0]
    if edge == "left":
        return raster[:, depth]
    if edge == "right":
        return raster[:, size - 1 - depth]
    if edge == "top":
        return raster[depth, :]
    return raster[size - 1 - depth, :]


def padded_strip(padded_face, edge: str, depth: int, pad: int) -> np.ndarray:
    """The padding line `depth` pixels outside `edge` of a padded face, same ordering as edge_strip."""
    raster = np.asarray(padded_face)
    size = raster.shape[0] - 2 * pad
    inner = slice(pad, pad + size)
    if edge == "left":
        return raster[inner, pad - 1 - depth]
    if edge == "right":
        return raster[inner, pad + size + depth]
    if edge == "top":
        return raster[pad - 1 - depth, inner]
    return raster[pad + size + depth, inner]


@functools.lru_cache(maxsize=32)
def _pad_index(face_size: int, pad: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gather indices (face, row, col) for every pixel of the padded faces.
    Edge strips unfold onto the neighbor face in doubled integer units (pixel centers at
    odd offsets), which keeps the copy exact; corner blocks take the nearest face pixel
    of the ray through the extended face plane.
    """
    F = face_size
    coords = np.arange(F + 2 * pad) - pad
    A, B = np.meshgrid(coords, coords)
    S, T = 2 * A + 1 - F, 2 * B + 1 - F
    in_a, in_b = (A >= 0) & (A < F), (B >= 0) & (B < F)

    src_face = np.empty((6,) + A.shape, dtype=np.intp)
    src_row = np.empty_like(src_face)
    src_col = np.empty_like(src_face)

    for face in range(6):
        forward, right, down = FACE_BASES[face]
        sf, sr, sc = np.full(A.shape, face), B.copy(), A.copy()

        strips = (
            (in_b & (A >= F), right, S - F, T[..., None] * down),
            (in_b & (A < 0), -right, -F - S, T[..., None] * down),
            (in_a & (B >= F), down, T - F, S[..., None] * right),
            (in_a & (B < 0), -down, -F - T, S[..., None] * right),
        )
        for mask, outward, overshoot, tangential in strips:
            if not np.any(mask):
                continue
            neighbor = face_of_axis(outward)
            _, n_right, n_down = FACE_BASES[neighbor]
            P = F * outward + (F - overshoot[mask])[:, None] * forward + tangential[mask]
            sf[mask] = neighbor
            sc[mask] = (P @ n_right + F - 1) // 2
            sr[mask] = (P @ n_down + F - 1) // 2

        corner = ~in_a & ~in_b
        if np.any(corner):
            ray = F * forward + S[corner][:, None] * right + T[corner][:, None] * down
            cf, ca, cb = dir_to_face_pixel(ray.astype(np.float64), F)
            sf[corner] = cf
            sc[corner] = np.clip(np.floor(ca), 0, F - 1).astype(np.intp)
            sr[corner] = np.clip(np.floor(cb), 0, F - 1).astype(np.intp)

        src_face[face], src_row[face], src_col[face] = sf, sr, sc

    for arr in (src_face, src_row, src_col):
        arr.setflags(write=False)
    return src_face, src_row, src_col


def spherical_pad(cm, pad: int) -> np.ndarray:
    """Pads every face with geometrically adjacent content; output faces are (F + 2·pad)²."""
    cm = np.asarray(cm)
    if cm.ndim not in (3, 4) or cm.shape[0] != 6 or cm.shape[1] != cm.shape[2]:
        raise ShapeError(f"cubemap must be shaped (6, F, F[, C]), got {cm.shape}")
    face_size = cm.shape[1]
    if pad < 0 or pad >= face_size:
        raise DomainError(f"pad must satisfy 0 <= pad < {face_size}, got {pad}")
    if pad == 0:
        return cm.copy()
    src_face, src_row, src_col = _pad_index(face_size, pad)
    return cm[src_face, src_row, src_col]
