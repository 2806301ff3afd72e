"""Depth search for the reference view by sweeping patch hypotheses along pixel rays.

Every patch model reduces to a per-member scale ``s_j`` such that the member's
3D point is ``C + z * s_j * R^T K^-1 [p_j, 1]`` for reference depth ``z``:
fronto-parallel patches use ``s_j = 1``, slanted patches the ray/plane
intersection with the centre's tangent plane, and surface patches the scale
factors obtained by integrating the reference normals.

Control-view radiances are rendered with the *reference* pixel's light triplet
from the bilinearly sampled normal and reflectance, so perfectly consistent data
gives a zero loss at the true depth whatever triplets the reference uses.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    GrazingNormal,
    InsufficientViews,
    IntegrationError,
    NonPositiveDepth,
    NoValidHypothesis,
    RayPlaneParallel,
    SweepError,
    TooFewValidViews,
)
from .geometry import CameraIntrinsics, CameraPose, Pixel, ViewMaps, sample_bilinear
from .integration import (
    Patch,
    build_patch,
    integrate_full_patches,
    integrate_patch,
    window_offsets,
)
from .reparam import canonical_triplet, optimal_triplets

logger = logging.getLogger(__name__)

PARALLEL_TOL = 1e-9


class PatchModel(enum.Enum):
    FRONTO_PARALLEL = "fronto"
    SLANTED = "slanted"
    SURFACE = "surface"

    @property
    def needs_normals(self) -> bool:
        return self is not PatchModel.FRONTO_PARALLEL


class Loss(enum.Enum):
    REPARAM = "reparam"
    COMBINED = "combined"


@dataclass(frozen=True)
class View:
    maps: ViewMaps
    pose: CameraPose
    intr: CameraIntrinsics


@dataclass(frozen=True)
class SweepConfig:
    z_min: float
    z_max: float
    coarse_samples: int = 256
    refine_tol: float = 1e-6
    patch_radius: int = 3
    model: PatchModel = PatchModel.SURFACE
    loss: Loss = Loss.REPARAM
    mu: float | None = None
    min_valid_views: int = 1
    lighting: str = "optimal"

    def __post_init__(self):
        if not 0 < self.z_min < self.z_max:
            raise ValueError("need 0 < z_min < z_max")
        if self.coarse_samples < 16:
            raise ValueError("coarse_samples must be at least 16")
        if not 0 < self.refine_tol <= 1e-2:
            raise ValueError("refine_tol must lie in (0, 1e-2]")
        if self.patch_radius < 0:
            raise ValueError("patch_radius must be nonnegative")
        if self.min_valid_views < 1:
            raise ValueError("min_valid_views must be at least 1")
        if self.loss is Loss.COMBINED and (self.mu is None or self.mu < 0):
            raise ValueError("the combined loss needs a weight mu >= 0")
        if self.lighting not in ("optimal", "canonical"):
            raise ValueError("lighting must be 'optimal' or 'canonical'")

    @property
    def z_grid(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.coarse_samples)


@dataclass
class DepthResult:
    depth: np.ndarray
    cost: np.ndarray
    valid: np.ndarray
    stats: dict = field(default_factory=dict)


def reference_triplets(normals: np.ndarray, lighting: str = "optimal", phase=0.0) -> np.ndarray:
    if lighting == "canonical":
        return np.broadcast_to(canonical_triplet().matrix, np.shape(normals)[:-1] + (3, 3))
    return optimal_triplets(normals, 1.0, phase)


def _slanted_scales(rays_cam: np.ndarray, center_normal: np.ndarray, center: int) -> np.ndarray:
    denom = rays_cam @ center_normal
    if np.any(np.abs(denom) < PARALLEL_TOL * np.linalg.norm(rays_cam, axis=-1)):
        raise RayPlaneParallel("a patch ray is parallel to the slanted plane")
    return denom[center] / denom


def patch_scales(model: PatchModel, patch: Patch, intr: CameraIntrinsics) -> np.ndarray:
    """Per-member depth multipliers relative to the centre depth."""
    pix = np.asarray(patch.pixels)
    if model is PatchModel.FRONTO_PARALLEL:
        return np.ones(len(pix))
    c = patch.center_index
    if model is PatchModel.SLANTED:
        rays = intr.rays(pix[:, 0], pix[:, 1])
        return _slanted_scales(rays, np.asarray(patch.normals)[c], c)
    return integrate_patch(intr, patch).alphas


def patch_points(
    model: PatchModel, z: float, patch: Patch, intr: CameraIntrinsics, pose: CameraPose | None = None
) -> np.ndarray:
    """3D points of the patch members for centre depth ``z``.

    Returned in the reference camera frame, or in world coordinates when the
    reference ``pose`` is given.
    """
    if not z > 0:
        raise NonPositiveDepth("depth hypothesis must be positive")
    pix = np.asarray(patch.pixels)
    pts = (z * patch_scales(model, patch, intr))[:, None] * intr.rays(pix[:, 0], pix[:, 1])
    return pts if pose is None else pose.to_world(pts)


def _sample_controls(points_world: np.ndarray, controls):
    """Yield ``(normals, reflectance, valid)`` per control view for the given world points."""
    for view in controls:
        xc = view.pose.to_camera(points_world)
        front = xc[:, 2] > 1e-12
        zc = np.where(front, xc[:, 2], 1.0)
        u = view.intr.fx * xc[:, 0] / zc + view.intr.cx
        v = view.intr.fy * xc[:, 1] / zc + view.intr.cy
        n, r, valid = sample_bilinear(view.maps, u, v)
        yield n, r, valid & front


def _patch_cost(z, patch, ref, controls, model, term, min_valid_views, scales=None):
    if scales is None:
        scales = patch_scales(model, patch, ref.intr)
    pix = np.asarray(patch.pixels)
    rays = ref.intr.rays(pix[:, 0], pix[:, 1])
    pts = ref.pose.to_world((z * scales)[:, None] * rays)
    total = 0.0
    count = 0
    views_ok = 0
    for n_i, r_i, valid in _sample_controls(pts, controls):
        if not valid.any():
            continue
        views_ok += 1
        total += float(np.sum(term(n_i[valid], r_i[valid], valid)))
        count += int(valid.sum())
    if count == 0 or views_ok < min_valid_views:
        raise TooFewValidViews(f"{views_ok} control views contribute, need {min_valid_views}")
    return total / count


def reparam_cost(
    z: float,
    patch: Patch,
    ref: View,
    controls,
    model: PatchModel,
    *,
    min_valid_views: int = 1,
    lighting: str = "optimal",
    phase=0.0,
    scales=None,
) -> float:
    """Mean squared Frobenius distance between reference and control radiances.

    ``phase`` (scalar or per member) rotates the reference triplets about their
    normals; it leaves the loss unchanged for consistent data.
    """
    pix = np.asarray(patch.pixels)
    n1 = ref.maps.normals[pix[:, 1], pix[:, 0]]
    r1 = ref.maps.reflectance[pix[:, 1], pix[:, 0]]
    L = reference_triplets(n1, lighting, phase)
    Ln1 = np.einsum("jab,jb->ja", L, n1)
    v1 = Ln1[:, :, None] * r1[:, None, :]

    def term(n_i, r_i, valid):
        Ln = np.einsum("jab,jb->ja", L[valid], n_i)
        d = v1[valid] - Ln[:, :, None] * r_i[:, None, :]
        return np.sum(d * d, axis=(1, 2))

    return _patch_cost(z, patch, ref, controls, model, term, min_valid_views, scales)


def combined_cost(
    z: float,
    patch: Patch,
    ref: View,
    controls,
    model: PatchModel,
    mu: float,
    *,
    min_valid_views: int = 1,
    scales=None,
) -> float:
    """Two-term baseline: squared normal disagreement plus ``mu`` times reflectance error."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    pix = np.asarray(patch.pixels)
    n1 = ref.maps.normals[pix[:, 1], pix[:, 0]]
    r1 = ref.maps.reflectance[pix[:, 1], pix[:, 0]]

    def term(n_i, r_i, valid):
        geom = (1.0 - np.sum(n1[valid] * n_i, axis=1)) ** 2
        if mu == 0:
            return geom
        return geom + mu * np.sum((r1[valid] - r_i) ** 2, axis=1)

    return _patch_cost(z, patch, ref, controls, model, term, min_valid_views, scales)


def golden_section(f, a: float, b: float, rel_tol: float, best=(math.inf, math.inf)):
    """Golden-section search on ``[a, b]`` until ``(b - a) / mid < rel_tol``.

    ``best`` is an incumbent ``(cost, z)`` pair; the lowest cost seen is
    returned, with ties going to the smaller depth.
    """
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    best_f, best_z = best

    def consider(x, fx):
        nonlocal best_f, best_z
        if fx < best_f or (fx == best_f and x < best_z):
            best_f, best_z = fx, x

    x1 = b - inv_phi * (b - a)
    x2 = a + inv_phi * (b - a)
    f1, f2 = f(x1), f(x2)
    consider(x1, f1)
    consider(x2, f2)
    while b - a > rel_tol * 0.5 * (a + b):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - inv_phi * (b - a)
            f1 = f(x1)
            consider(x1, f1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv_phi * (b - a)
            f2 = f(x2)
            consider(x2, f2)
    return best_z, best_f


def sweep_pixel(center, config: SweepConfig, ref: View, controls) -> tuple[float, float]:
    """Coarse grid search over ``[z_min, z_max]`` then golden-section refinement.

    Reference implementation of the per-pixel search; the compiled kernel used by
    :func:`reconstruct_depth_map` performs the same steps.
    """
    patch = build_patch(ref.maps, ref.pose, center, config.patch_radius)
    scales = patch_scales(config.model, patch, ref.intr)

    def cost(z):
        try:
            if config.loss is Loss.COMBINED:
                return combined_cost(
                    z, patch, ref, controls, config.model, config.mu,
                    min_valid_views=config.min_valid_views, scales=scales,
                )
            return reparam_cost(
                z, patch, ref, controls, config.model,
                min_valid_views=config.min_valid_views, lighting=config.lighting, scales=scales,
            )
        except SweepError:
            return math.inf

    grid = config.z_grid
    values = np.array([cost(z) for z in grid])
    if not np.isfinite(values).any():
        raise NoValidHypothesis(f"no depth hypothesis is valid at pixel {tuple(center)}")
    k = int(np.argmin(values))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    z, f = golden_section(cost, lo, hi, config.refine_tol, best=(values[k], grid[k]))
    return float(z), float(f)


@dataclass
class _Prepared:
    centers: np.ndarray  # (N, 2) integer (u, v)
    ref_idx: np.ndarray  # (N, M) index into reference pixel arrays, -1 where absent
    scale: np.ndarray  # (N, M)
    arrays: tuple  # remaining kernel inputs


def _scales_for(config, ref, centers, offsets, members, normals_cam):
    """Per-centre member scales and a validity flag, shape ``(N, M)`` and ``(N,)``."""
    n, m = members.shape
    model = config.model
    if model is PatchModel.FRONTO_PARALLEL:
        return np.ones((n, m)), np.ones(n, dtype=bool)
    uu = centers[:, None, 0] + offsets[None, :, 0]
    vv = centers[:, None, 1] + offsets[None, :, 1]
    if model is PatchModel.SLANTED:
        rays = ref.intr.rays(uu, vv)
        cn = normals_cam[centers[:, 1], centers[:, 0]]
        denom = np.einsum("nmk,nk->nm", rays, cn)
        ok = np.abs(denom) >= PARALLEL_TOL * np.linalg.norm(rays, axis=-1)
        ok = np.where(members, ok, True).all(axis=1)
        safe = np.where(np.abs(denom) > 0, denom, 1.0)
        return denom[:, m // 2 : m // 2 + 1] / safe, ok

    h, w = ref.maps.shape
    scale = np.ones((n, m))
    ok = np.zeros(n, dtype=bool)
    full = members.all(axis=1)
    if full.any():
        alphas, good = integrate_full_patches(ref.intr, normals_cam, centers[full], config.patch_radius)
        scale[full] = alphas
        ok[full] = good
    for c in np.flatnonzero(~full):
        patch = Patch(
            Pixel(int(centers[c, 0]), int(centers[c, 1])),
            config.patch_radius,
            np.stack([uu[c, members[c]], vv[c, members[c]]], axis=1),
            normals_cam[vv[c, members[c]], uu[c, members[c]]],
        )
        try:
            scale[c, members[c]] = integrate_patch(ref.intr, patch).alphas
            ok[c] = True
        except IntegrationError:
            ok[c] = False
    return scale, ok


def _stack_controls(controls):
    hs = max(v.maps.shape[0] for v in controls)
    ws = max(v.maps.shape[1] for v in controls)
    q = controls[0].maps.q
    k = len(controls)
    normals = np.zeros((k, hs, ws, 3))
    refl = np.zeros((k, hs, ws, q))
    mask = np.zeros((k, hs, ws), dtype=np.bool_)
    for i, v in enumerate(controls):
        h, w = v.maps.shape
        normals[i, :h, :w] = v.maps.normals
        refl[i, :h, :w] = v.maps.reflectance
        mask[i, :h, :w] = v.maps.mask
    rot = np.stack([v.pose.rotation for v in controls])
    trans = np.stack([v.pose.translation for v in controls])
    kparams = np.array([[v.intr.fx, v.intr.fy, v.intr.cx, v.intr.cy] for v in controls])
    sizes = np.array([[v.intr.width, v.intr.height] for v in controls], dtype=np.int64)
    return rot, trans, kparams, sizes, normals, refl, mask


def prepare(config: SweepConfig, ref: View, controls, pixel_mask=None, phase=0.0) -> _Prepared:
    """Flatten the reference patches and control rasters into kernel arrays."""
    if any(v.maps.q != ref.maps.q for v in controls):
        raise ValueError("all views must share the reflectance dimension")
    h, w = ref.maps.shape
    select = ref.maps.mask if pixel_mask is None else ref.maps.mask & pixel_mask
    vs, us = np.nonzero(select)
    centers = np.stack([us, vs], axis=1).astype(np.int64)

    flat = np.full((h, w), -1, dtype=np.int64)
    ref_v_, ref_u_ = np.nonzero(ref.maps.mask)
    flat[ref_v_, ref_u_] = np.arange(len(ref_v_))

    offsets = window_offsets(config.patch_radius)
    uu = centers[:, None, 0] + offsets[None, :, 0]
    vv = centers[:, None, 1] + offsets[None, :, 1]
    inb = (uu >= 0) & (uu < w) & (vv >= 0) & (vv < h)
    ref_idx = np.where(inb, flat[np.clip(vv, 0, h - 1), np.clip(uu, 0, w - 1)], -1)
    members = ref_idx >= 0

    normals_cam = ref.maps.normals @ ref.pose.rotation.T
    scale, ok = _scales_for(config, ref, centers, offsets, members, normals_cam)
    ref_idx[~ok] = -1

    n1 = ref.maps.normals[ref_v_, ref_u_]
    r1 = ref.maps.reflectance[ref_v_, ref_u_]
    phase = np.asarray(phase, dtype=float)
    if phase.ndim == 2:
        phase = phase[ref_v_, ref_u_]
    lights = np.ascontiguousarray(reference_triplets(n1, config.lighting, phase))
    ref_vrad = np.einsum("pab,pb->pa", lights, n1)[:, :, None] * r1[:, None, :]
    rays = ref.intr.rays(ref_u_, ref_v_) @ ref.pose.rotation
    arrays = (
        np.ascontiguousarray(ref.pose.center),
        np.ascontiguousarray(ref_idx),
        np.ascontiguousarray(scale),
        np.ascontiguousarray(rays),
        lights,
        np.ascontiguousarray(n1),
        np.ascontiguousarray(r1),
        np.ascontiguousarray(ref_vrad),
        *_stack_controls(controls),
    )
    return _Prepared(centers, ref_idx, scale, arrays)


def _loss_args(config: SweepConfig):
    if config.loss is Loss.COMBINED:
        return _kernels.LOSS_COMBINED, float(config.mu)
    return _kernels.LOSS_REPARAM, 0.0


def batch_cost(config: SweepConfig, ref: View, controls, depth: np.ndarray, pixel_mask=None, phase=0.0):
    """Loss at a per-pixel depth raster (e.g. ground truth) via the compiled path.

    Returns an ``(H, W)`` raster with ``inf`` where the loss is undefined.
    """
    prep = prepare(config, ref, controls, pixel_mask, phase)
    zs = depth[prep.centers[:, 1], prep.centers[:, 0]].astype(float)
    loss, mu = _loss_args(config)
    out = np.full(ref.maps.shape, np.nan)
    vals = _kernels.cost_many(zs, *prep.arrays, loss, mu, config.min_valid_views)
    out[prep.centers[:, 1], prep.centers[:, 0]] = vals
    return out


def reconstruct_depth_map(
    ref_index: int,
    views,
    config: SweepConfig,
    *,
    pixel_mask=None,
) -> DepthResult:
    """Sweep every masked-in reference pixel; invalid pixels hold NaN depth."""
    if len(views) < 2:
        raise InsufficientViews("need at least two views")
    ref = views[ref_index]
    if config.model.needs_normals and not np.any(ref.maps.normals[ref.maps.mask]):
        raise ValueError(f"{config.model.value} patches need reference normals")
    controls = [v for i, v in enumerate(views) if i != ref_index]
    prep = prepare(config, ref, controls, pixel_mask)
    loss, mu = _loss_args(config)
    depth_c, cost_c = _kernels.sweep_all(
        config.z_grid, config.refine_tol, *prep.arrays, loss, mu, config.min_valid_views
    )
    h, w = ref.maps.shape
    depth = np.full((h, w), np.nan)
    cost = np.full((h, w), np.nan)
    valid = np.zeros((h, w), dtype=bool)
    ok = np.isfinite(cost_c) & np.isfinite(depth_c)
    cu, cv = prep.centers[:, 0], prep.centers[:, 1]
    depth[cv[ok], cu[ok]] = depth_c[ok]
    cost[cv[ok], cu[ok]] = cost_c[ok]
    valid[cv[ok], cu[ok]] = True
    logger.debug("swept %d centres, %d valid", len(prep.centers), int(ok.sum()))
    return DepthResult(depth, cost, valid, {"centres": len(prep.centers), "valid": int(ok.sum())})
