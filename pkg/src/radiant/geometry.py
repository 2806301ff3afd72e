"""Pinhole cameras, rigid transforms and bilinear raster sampling.

Pixel ``(0, 0)`` is the centre of the top-left texel, ``u`` runs along columns
and ``v`` along rows. Normals are outward and expressed in world coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import GeometryError, NonPositiveDepth, NonRigidRotation

MIN_DEPTH = 1e-12
MIN_BLEND_NORM = 0.1


class Pixel(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the raster")

    @property
    def K(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def rays(self, u, v) -> np.ndarray:
        """Camera-frame rays ``K^-1 [u, v, 1]`` (unit z component), shape ``(..., 3)``."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        x = (u - self.cx) / self.fx
        y = (v - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)

    def pixel_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Integer pixel coordinates ``(u, v)`` of every texel, each shaped ``(H, W)``."""
        v, u = np.mgrid[0 : self.height, 0 : self.width]
        return u.astype(float), v.astype(float)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }


@dataclass(frozen=True)
class CameraPose:
    """Rigid world-to-camera transform ``x_cam = rotation @ x_world + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise NonRigidRotation("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def to_camera(self, x_world) -> np.ndarray:
        return np.asarray(x_world, dtype=float) @ self.rotation.T + self.translation

    def to_world(self, x_cam) -> np.ndarray:
        return (np.asarray(x_cam, dtype=float) - self.translation) @ self.rotation


@dataclass
class ViewMaps:
    """Per-view rasters: world-frame normals, reflectance, mask and optional depth."""

    normals: np.ndarray
    reflectance: np.ndarray
    mask: np.ndarray
    gt_depth: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.normals = np.asarray(self.normals, dtype=float)
        refl = np.asarray(self.reflectance, dtype=float)
        if refl.ndim == 2:
            refl = refl[..., None]
        self.reflectance = refl
        self.mask = np.asarray(self.mask, dtype=bool)
        h, w = self.mask.shape
        if self.normals.shape != (h, w, 3):
            raise GeometryError(f"normals must be {(h, w, 3)}, got {self.normals.shape}")
        if refl.shape[:2] != (h, w) or refl.shape[2] not in (1, 3):
            raise GeometryError("reflectance must be H x W x q with q in {1, 3}")
        if self.gt_depth is not None:
            self.gt_depth = np.asarray(self.gt_depth, dtype=float)
            if self.gt_depth.shape != (h, w):
                raise GeometryError("gt_depth must be H x W")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def q(self) -> int:
        return self.reflectance.shape[2]

    def validate(self, pose: CameraPose, intr: CameraIntrinsics, atol: float = 1e-6) -> None:
        """Check unit length and camera-facing orientation of masked-in normals."""
        n = self.normals[self.mask]
        if not np.all(np.abs(np.linalg.norm(n, axis=-1) - 1.0) <= atol):
            raise GeometryError("masked-in normals must have unit length")
        u, v = intr.pixel_grid()
        view_dirs = intr.rays(u, v)[self.mask] @ pose.rotation
        if not np.all(np.einsum("ij,ij->i", n, view_dirs) < 0):
            raise GeometryError("masked-in normals must face the camera")
        r = self.reflectance[self.mask]
        if not (np.all(np.isfinite(r)) and np.all(r >= 0)):
            raise GeometryError("reflectance must be finite and nonnegative")


def project(pose: CameraPose, intr: CameraIntrinsics, x_world) -> Pixel:
    xc = pose.to_camera(x_world)
    if xc[2] <= MIN_DEPTH:
        raise NonPositiveDepth(f"camera-frame depth {xc[2]!r} is not positive")
    return Pixel(intr.fx * xc[0] / xc[2] + intr.cx, intr.fy * xc[1] / xc[2] + intr.cy)


def backproject_fronto(intr: CameraIntrinsics, p: Pixel, z: float) -> np.ndarray:
    """Camera-frame point at depth ``z`` on the ray through ``p``."""
    if not z > 0:
        raise NonPositiveDepth(f"depth {z!r} is not positive")
    return z * intr.rays(p[0], p[1])


def _bilinear_weights(h: int, w: int, u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    uc = np.where(inside, u, 0.0)
    vc = np.where(inside, v, 0.0)
    x0 = np.floor(uc).astype(np.int64)
    y0 = np.floor(vc).astype(np.int64)
    fx = uc - x0
    fy = vc - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    return inside, x0, y0, x1, y1, fx, fy


def sample_bilinear(maps: ViewMaps, u, v):
    """Vectorised bilinear lookup of normals and reflectance.

    Returns ``(normals, reflectance, valid)`` with the leading shape of ``u``.
    A sample is invalid when it falls outside ``[0, W-1] x [0, H-1]``, when any
    texel with non-zero weight is masked out, or when the blended normal is
    shorter than 0.1 before renormalisation.
    """
    h, w = maps.shape
    inside, x0, y0, x1, y1, fx, fy = _bilinear_weights(h, w, u, v)
    weights = ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)
    corners = ((y0, x0), (y0, x1), (y1, x0), (y1, x1))

    valid = inside.copy()
    n = np.zeros(np.shape(inside) + (3,))
    r = np.zeros(np.shape(inside) + (maps.q,))
    for wt, (yy, xx) in zip(weights, corners):
        valid &= (wt == 0) | maps.mask[yy, xx]
        n += wt[..., None] * maps.normals[yy, xx]
        r += wt[..., None] * maps.reflectance[yy, xx]

    norm = np.linalg.norm(n, axis=-1)
    valid &= norm >= MIN_BLEND_NORM
    n = n / np.where(valid, norm, 1.0)[..., None]
    return n, r, valid


def bilinear_sample(maps: ViewMaps, p: Pixel) -> tuple[np.ndarray, np.ndarray, bool]:
    n, r, valid = sample_bilinear(maps, p[0], p[1])
    return n, r, bool(valid)


def look_at(center, target, tangent) -> CameraPose:
    """Pose of a camera at ``center`` whose optical axis passes through ``target``.

    ``tangent`` fixes the image x-axis (projected orthogonal to the optical axis).
    """
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    x = np.asarray(tangent, dtype=float)
    x = x - (x @ z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return CameraPose(R, -R @ center)
