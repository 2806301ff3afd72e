"""Joint reflectance/normal re-parametrisation into simulated radiances.

A Lambertian pixel with albedo ``r`` (length ``q``) and unit normal ``n`` lit by
three directional lights stored row-wise in ``L`` renders to the ``3 x q``
radiance matrix ``L n r^T``. With three independent lights and a non-black
albedo the map is invertible, so radiances carry exactly the same information
as the (reflectance, normal) pair while being directly comparable with a
single squared-error loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRadiance, NonUnitNormal, NormOverflow, SingularLighting

#: Slant of each light of the optimal triplet relative to the normal, ``arccos(1/sqrt(3))``.
OPTIMAL_SLANT = math.acos(1.0 / math.sqrt(3.0))
DEGENERATE_TOL = 1e-9
UNIT_TOL = 1e-6

_SIN_SLANT = math.sqrt(2.0 / 3.0)
_COS_SLANT = 1.0 / math.sqrt(3.0)
_AZIMUTHS = np.deg2rad([0.0, 120.0, 240.0])


@dataclass(frozen=True)
class LightTriplet:
    """Three illumination vectors (intensity times direction) stored row-wise."""

    matrix: np.ndarray
    intensity: float = 1.0

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float).reshape(3, 3)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def is_singular(self) -> bool:
        return abs(np.linalg.det(self.matrix)) <= 1e-9 * self.intensity**3


@dataclass(frozen=True)
class EmbeddedReflectance:
    values: np.ndarray
    p: int


def _as_reflectance(r) -> np.ndarray:
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if r.ndim != 1 or r.size not in (1, 3):
        raise ValueError("reflectance must be a vector of length 1 or 3")
    return r


def _as_matrix(L) -> np.ndarray:
    return L.matrix if isinstance(L, LightTriplet) else np.asarray(L, dtype=float)


def render_pbr(r, n, L) -> np.ndarray:
    """Lambertian rendering ``L n r^T``, a ``3 x q`` radiance matrix."""
    r = _as_reflectance(r)
    n = np.asarray(n, dtype=float)
    if abs(math.sqrt(n @ n) - 1.0) > UNIT_TOL:
        raise NonUnitNormal(f"normal {n} is not unit length")
    return np.outer(_as_matrix(L) @ n, r)


def tangent_frame(n) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent pair ``(t1, t2)`` with ``t1 x t2 = n``."""
    n = np.asarray(n, dtype=float)
    axis = np.array([1.0, 0.0, 0.0]) if abs(n[0]) <= 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = axis - (n @ axis) * n
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


def tangent_frames(normals) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`tangent_frame` over the last axis."""
    n = np.asarray(normals, dtype=float)
    use_y = np.abs(n[..., 0]) > 0.9
    axis = np.zeros_like(n)
    axis[..., 0] = np.where(use_y, 0.0, 1.0)
    axis[..., 1] = np.where(use_y, 1.0, 0.0)
    t1 = axis - np.sum(n * axis, axis=-1, keepdims=True) * n
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    return t1, np.cross(n, t1)


def optimal_triplet(n, intensity: float = 1.0, phase: float = 0.0) -> LightTriplet:
    """Three equal-intensity lights at slant 54.74 degrees, 120 degrees apart in azimuth.

    The resulting matrix satisfies ``L L^T = intensity^2 I`` and every light
    makes the same positive angle with ``n``, so the pixel is never
    self-shadowed. ``phase`` rotates the azimuth origin within the tangent plane.
    """
    n = np.asarray(n, dtype=float)
    t1, t2 = tangent_frame(n)
    rows = [
        _SIN_SLANT * (math.cos(a + phase) * t1 + math.sin(a + phase) * t2) + _COS_SLANT * n
        for a in _AZIMUTHS
    ]
    return LightTriplet(intensity * np.array(rows), intensity)


def optimal_triplets(normals, intensity: float = 1.0, phase=0.0) -> np.ndarray:
    """Vectorised :func:`optimal_triplet` returning an array of shape ``(..., 3, 3)``."""
    n = np.asarray(normals, dtype=float)
    t1, t2 = tangent_frames(n)
    phase = np.asarray(phase, dtype=float)[..., None, None]
    a = _AZIMUTHS[:, None] + phase
    rows = _SIN_SLANT * (np.cos(a) * t1[..., None, :] + np.sin(a) * t2[..., None, :])
    rows = rows + _COS_SLANT * n[..., None, :]
    return intensity * rows


def canonical_triplet() -> LightTriplet:
    """Lights along the canonical basis; with white albedo radiances equal the normals."""
    return LightTriplet(np.eye(3), 1.0)


def _unlit(v, L) -> np.ndarray:
    L = L if isinstance(L, LightTriplet) else LightTriplet(L)
    if L.is_singular:
        raise SingularLighting("illumination matrix is singular")
    return np.linalg.solve(L.matrix, np.asarray(v, dtype=float).reshape(3, -1))


def invert_reparam_q1(v, L) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(r, n)`` from a grey-level radiance vector."""
    m = _unlit(v, L)[:, 0]
    norm = math.sqrt(m @ m)
    if norm <= DEGENERATE_TOL:
        raise DegenerateRadiance("radiance is (numerically) zero")
    return np.array([norm]), m / norm


def invert_reparam_q3(v, L, view_dir=None) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(r, n)`` from an RGB radiance matrix by a rank-one SVD factorisation.

    The sign ambiguity of the factorisation is resolved towards a nonnegative
    albedo; if neither sign gives one, ``view_dir`` (camera-to-point direction)
    selects the camera-facing normal, falling back to a nonnegative albedo sum.
    """
    m = _unlit(v, L)
    U, S, Vt = np.linalg.svd(m)
    if S[0] <= DEGENERATE_TOL:
        raise DegenerateRadiance("radiance is (numerically) zero")
    n = U[:, 0]
    r = S[0] * Vt[0]
    tol = DEGENERATE_TOL * S[0]
    if np.all(r >= -tol):
        flip = False
    elif np.all(r <= tol):
        flip = True
    elif view_dir is not None:
        flip = n @ np.asarray(view_dir, dtype=float) > 0
    else:
        flip = r.sum() < 0
    if flip:
        n, r = -n, -r
    return r, n


def invert_reparam(v, L, view_dir=None) -> tuple[np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=float).reshape(3, -1)
    if v.shape[1] == 1:
        return invert_reparam_q1(v, L)
    return invert_reparam_q3(v, L, view_dir)


def embed_reflectance(r, p: int) -> EmbeddedReflectance:
    """Append an auxiliary channel so that the ``p``-norm becomes input independent.

    The result is ``[r, (q - |r|_p^p)^(1/p)] / q`` whose ``p``-norm is
    ``q^(1/p - 1)``; this is 1 for ``p = 1`` or grey-level data.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    r = _as_reflectance(r)
    q = r.size
    s = float(np.sum(np.abs(r) ** p))
    if s > q * (1 + 1e-12):
        raise NormOverflow(f"|r|_{p}^{p} = {s} exceeds q = {q}")
    aux = max(q - s, 0.0) ** (1.0 / p)
    return EmbeddedReflectance(np.append(r, aux) / q, p)
