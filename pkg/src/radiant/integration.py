"""Local perspective normal integration into relative depth scale factors.

Under a pinhole camera, a surface point on the ray ``d(p) = K^-1 [u, v, 1]``
with unit normal ``n`` satisfies

    d log z / du = -n_x / (fx * (n . d)),   d log z / dv = -n_y / (fy * (n . d)),

so a patch of normals fixes log-depth up to an additive constant, i.e. depth up
to the scale of the patch centre.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import GrazingNormal, SingularSystem
from .geometry import CameraIntrinsics, CameraPose, Pixel, ViewMaps

GRAZING_TOL = 1e-3


@dataclass
class Patch:
    center: Pixel
    radius: int
    pixels: np.ndarray  # (k, 2) integer (u, v)
    normals: np.ndarray  # (k, 3) camera-frame unit normals

    @property
    def center_index(self) -> int:
        hits = np.flatnonzero(
            (self.pixels[:, 0] == self.center[0]) & (self.pixels[:, 1] == self.center[1])
        )
        if hits.size == 0:
            raise ValueError("patch centre is not a member pixel")
        return int(hits[0])


@dataclass
class ScaleField:
    alphas: np.ndarray
    residual: float


def window_offsets(radius: int) -> np.ndarray:
    """Row-major ``(du, dv)`` offsets of a square window; the centre is the middle entry."""
    dv, du = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return np.stack([du.ravel(), dv.ravel()], axis=1)


def build_patch(
    maps: ViewMaps, pose: CameraPose, center, radius: int
) -> Patch:
    """Collect the masked-in window around ``center`` with normals in the camera frame."""
    h, w = maps.shape
    cu, cv = int(center[0]), int(center[1])
    pix = window_offsets(radius) + [cu, cv]
    keep = (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
    pix = pix[keep]
    pix = pix[maps.mask[pix[:, 1], pix[:, 0]]]
    normals = maps.normals[pix[:, 1], pix[:, 0]] @ pose.rotation.T
    return Patch(Pixel(cu, cv), radius, pix, normals)


def log_depth_gradient(intr: CameraIntrinsics, p, n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    d = intr.rays(p[0], p[1])
    nd = n @ d
    if abs(nd) < GRAZING_TOL:
        raise GrazingNormal(f"normal is grazing at pixel {tuple(p)} (n.d = {nd:.3g})")
    return np.array([-n[0] / (intr.fx * nd), -n[1] / (intr.fy * nd)])


def log_depth_gradients(intr: CameraIntrinsics, u, v, normals):
    """Vectorised gradient field; returns ``(grad (..., 2), ok (...))``."""
    d = intr.rays(u, v)
    nd = np.sum(np.asarray(normals) * d, axis=-1)
    ok = np.abs(nd) >= GRAZING_TOL
    safe = np.where(ok, nd, 1.0)
    grad = np.stack(
        [-normals[..., 0] / (intr.fx * safe), -normals[..., 1] / (intr.fy * safe)], axis=-1
    )
    return grad, ok


def _edges(pixels: np.ndarray):
    """Right and down neighbour pairs among ``pixels`` as index arrays plus the axis (0=u, 1=v)."""
    index = {(int(u), int(v)): i for i, (u, v) in enumerate(pixels)}
    a, b, axis = [], [], []
    for i, (u, v) in enumerate(pixels):
        for ax, (du, dv) in enumerate(((1, 0), (0, 1))):
            j = index.get((int(u) + du, int(v) + dv))
            if j is not None:
                a.append(i)
                b.append(j)
                axis.append(ax)
    return np.array(a, dtype=int), np.array(b, dtype=int), np.array(axis, dtype=int)


def _solve(k: int, center: int, a, b, rhs):
    A = np.zeros((len(a), k))
    A[np.arange(len(a)), a] = -1.0
    A[np.arange(len(a)), b] = 1.0
    free = np.delete(np.arange(k), center)
    sub = A[:, free]
    if k > 1 and np.linalg.matrix_rank(sub) < k - 1:
        raise SingularSystem("patch is disconnected")
    logz = np.zeros(k)
    if k > 1:
        logz[free] = np.linalg.lstsq(sub, rhs, rcond=None)[0]
    residual = float(np.linalg.norm(A @ logz - rhs)) if len(a) else 0.0
    return logz, residual


def integrate_patch(intr: CameraIntrinsics, patch: Patch) -> ScaleField:
    """Least-squares integration of the patch normals, pinned at the centre.

    Each 4-neighbour edge contributes ``log z_b - log z_a = (g_a + g_b) / 2``
    with ``g`` the log-depth gradient component along the edge.
    """
    pix = np.asarray(patch.pixels)
    grad, ok = log_depth_gradients(intr, pix[:, 0], pix[:, 1], np.asarray(patch.normals))
    if not np.all(ok):
        raise GrazingNormal("patch contains grazing normals")
    a, b, axis = _edges(pix)
    rhs = 0.5 * (grad[a, axis] + grad[b, axis]) if len(a) else np.zeros(0)
    c = patch.center_index
    logz, residual = _solve(len(pix), c, a, b, rhs)
    alphas = np.exp(logz - logz[c])
    alphas[c] = 1.0
    return ScaleField(alphas, residual)


@lru_cache(maxsize=8)
def full_patch_operator(radius: int):
    """Edges and the linear map from edge differences to log-depths for a full window.

    Returns ``(a, b, axis, P)`` with ``log z = P @ rhs`` for any right-hand side.
    """
    pix = window_offsets(radius)
    k = len(pix)
    c = k // 2
    a, b, axis = _edges(pix)
    A = np.zeros((len(a), k))
    A[np.arange(len(a)), a] = -1.0
    A[np.arange(len(a)), b] = 1.0
    free = np.delete(np.arange(k), c)
    P = np.zeros((k, len(a)))
    P[free] = np.linalg.pinv(A[:, free])
    for arr in (a, b, axis, P):
        arr.setflags(write=False)
    return a, b, axis, P


def integrate_full_patches(
    intr: CameraIntrinsics, normals_cam: np.ndarray, centers: np.ndarray, radius: int
):
    """Scale factors for many complete windows at once.

    ``normals_cam`` is the ``(H, W, 3)`` camera-frame normal raster and
    ``centers`` an ``(N, 2)`` array of integer ``(u, v)`` whose windows lie in
    bounds. Returns ``(alphas (N, k), ok (N,))``; ``ok`` is false where a member
    normal is grazing.
    """
    a, b, axis, P = full_patch_operator(radius)
    offsets = window_offsets(radius)
    uu = centers[:, None, 0] + offsets[None, :, 0]
    vv = centers[:, None, 1] + offsets[None, :, 1]
    grad, ok = log_depth_gradients(intr, uu, vv, normals_cam[vv, uu])
    rhs = 0.5 * (grad[:, a, axis] + grad[:, b, axis])
    logz = rhs @ P.T
    alphas = np.exp(logz - logz[:, len(offsets) // 2 : len(offsets) // 2 + 1])
    alphas[:, len(offsets) // 2] = 1.0
    return alphas, ok.all(axis=1)
