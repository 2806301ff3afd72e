"""Compiled per-pixel depth search used by :func:`radiant.sweeping.reconstruct_depth_map`.

Mirrors the pure-numpy reference path in :mod:`radiant.sweeping` term for term;
the test suite checks the two against each other.
"""

import math

import numpy as np
from numba import njit, prange

LOSS_REPARAM = 0
LOSS_COMBINED = 1

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_MIN_DEPTH = 1e-12
_MIN_BLEND_NORM = 0.1


@njit(cache=True)
def _patch_cost(
    z, c, origin, ref_idx, scale, rays, lights, ref_n, ref_r, ref_v,
    rot, trans, kparams, sizes, normals, refl, mask, loss, mu, min_views,
):
    """Normalised loss of centre ``c`` at depth ``z``; ``inf`` when too few views contribute."""
    n_views = rot.shape[0]
    q = refl.shape[3]
    total = 0.0
    terms = 0
    views_ok = 0
    ni = np.empty(3)
    ri = np.empty(q)
    for i in range(n_views):
        fx, fy, cx, cy = kparams[i, 0], kparams[i, 1], kparams[i, 2], kparams[i, 3]
        w = sizes[i, 0]
        h = sizes[i, 1]
        view_terms = 0
        for m in range(ref_idx.shape[1]):
            p = ref_idx[c, m]
            if p < 0:
                continue
            s = z * scale[c, m]
            x0 = origin[0] + s * rays[p, 0]
            x1 = origin[1] + s * rays[p, 1]
            x2 = origin[2] + s * rays[p, 2]
            xc0 = rot[i, 0, 0] * x0 + rot[i, 0, 1] * x1 + rot[i, 0, 2] * x2 + trans[i, 0]
            xc1 = rot[i, 1, 0] * x0 + rot[i, 1, 1] * x1 + rot[i, 1, 2] * x2 + trans[i, 1]
            xc2 = rot[i, 2, 0] * x0 + rot[i, 2, 1] * x1 + rot[i, 2, 2] * x2 + trans[i, 2]
            if xc2 <= _MIN_DEPTH:
                continue
            u = fx * xc0 / xc2 + cx
            v = fy * xc1 / xc2 + cy
            if not (u >= 0.0 and u <= w - 1 and v >= 0.0 and v <= h - 1):
                continue
            ix = int(math.floor(u))
            iy = int(math.floor(v))
            ax = u - ix
            ay = v - iy
            jx = min(ix + 1, w - 1)
            jy = min(iy + 1, h - 1)
            w00 = (1.0 - ax) * (1.0 - ay)
            w10 = ax * (1.0 - ay)
            w01 = (1.0 - ax) * ay
            w11 = ax * ay
            if w00 != 0.0 and not mask[i, iy, ix]:
                continue
            if w10 != 0.0 and not mask[i, iy, jx]:
                continue
            if w01 != 0.0 and not mask[i, jy, ix]:
                continue
            if w11 != 0.0 and not mask[i, jy, jx]:
                continue
            for k in range(3):
                ni[k] = (
                    w00 * normals[i, iy, ix, k]
                    + w10 * normals[i, iy, jx, k]
                    + w01 * normals[i, jy, ix, k]
                    + w11 * normals[i, jy, jx, k]
                )
            norm = math.sqrt(ni[0] * ni[0] + ni[1] * ni[1] + ni[2] * ni[2])
            if norm < _MIN_BLEND_NORM:
                continue
            for k in range(3):
                ni[k] /= norm
            for k in range(q):
                ri[k] = (
                    w00 * refl[i, iy, ix, k]
                    + w10 * refl[i, iy, jx, k]
                    + w01 * refl[i, jy, ix, k]
                    + w11 * refl[i, jy, jx, k]
                )
            term = 0.0
            if loss == LOSS_REPARAM:
                for a in range(3):
                    ln = lights[p, a, 0] * ni[0] + lights[p, a, 1] * ni[1] + lights[p, a, 2] * ni[2]
                    for b in range(q):
                        d = ref_v[p, a, b] - ln * ri[b]
                        term += d * d
            else:
                dot = ref_n[p, 0] * ni[0] + ref_n[p, 1] * ni[1] + ref_n[p, 2] * ni[2]
                g = 1.0 - dot
                photo = 0.0
                for b in range(q):
                    d = ref_r[p, b] - ri[b]
                    photo += d * d
                term = g * g + mu * photo
            total += term
            view_terms += 1
        if view_terms > 0:
            views_ok += 1
            terms += view_terms
    if terms == 0 or views_ok < min_views:
        return np.inf
    return total / terms


@njit(parallel=True, cache=True)
def sweep_all(
    z_grid, refine_tol, origin, ref_idx, scale, rays, lights, ref_n, ref_r, ref_v,
    rot, trans, kparams, sizes, normals, refl, mask, loss, mu, min_views,
):
    """Coarse grid search then golden-section refinement for every centre.

    Returns ``(depth, cost)``; centres whose coarse samples all fail get NaN / inf.
    """
    n = ref_idx.shape[0]
    n_samples = z_grid.shape[0]
    depth = np.full(n, np.nan)
    cost = np.full(n, np.inf)
    for c in prange(n):
        best_k = -1
        best = np.inf
        for k in range(n_samples):
            f = _patch_cost(
                z_grid[k], c, origin, ref_idx, scale, rays, lights, ref_n, ref_r, ref_v,
                rot, trans, kparams, sizes, normals, refl, mask, loss, mu, min_views,
            )
            if f < best:
                best = f
                best_k = k
        if best_k < 0:
            continue
        z_best = z_grid[best_k]
        a = z_grid[max(best_k - 1, 0)]
        b = z_grid[min(best_k + 1, n_samples - 1)]
        x1 = b - _INV_PHI * (b - a)
        x2 = a + _INV_PHI * (b - a)
        f1 = _patch_cost(
            x1, c, origin, ref_idx, scale, rays, lights, ref_n, ref_r, ref_v,
            rot, trans, kparams, sizes, normals, refl, mask, loss, mu, min_views,
        )
        f2 = _patch_cost(
            x2, c, origin, ref_idx, scale, rays, lights, ref_n, ref_r, ref_v,
            rot, trans, kparams, sizes, normals, refl, mask, loss, mu, min_views,
        )
        if f1 < best or (f1 == best and x1 < z_best):
            best, z_best = f1, x1
        if f2 < best or (f2 == best and x2 < z_best):
            best, z_best = f2, x2
        while b - a > refine_tol * 0.5 * (a + b):
            if f1 <= f2:
                b = x2
                x2 = x1
                f2 = f1
                x1 = b - _INV_PHI * (b - a)
                f1 = _patch_cost(
                    x1, c, origin, ref_idx, scale, rays, lights, ref_n, ref_r, ref_v,
                    rot, trans, kparams, sizes, normals, refl, mask, loss, mu, min_views,
                )
                if f1 < best or (f1 == best and x1 < z_best):
                    best, z_best = f1, x1
            else:
                a = x1
                x1 = x2
                f1 = f2
                x2 = a + _INV_PHI * (b - a)
                f2 = _patch_cost(
                    x2, c, origin, ref_idx, scale, rays, lights, ref_n, ref_r, ref_v,
                    rot, trans, kparams, sizes, normals, refl, mask, loss, mu, min_views,
                )
                if f2 < best or (f2 == best and x2 < z_best):
                    best, z_best = f2, x2
        depth[c] = z_best
        cost[c] = best
    return depth, cost


@njit(parallel=True, cache=True)
def cost_many(
    zs, origin, ref_idx, scale, rays, lights, ref_n, ref_r, ref_v,
    rot, trans, kparams, sizes, normals, refl, mask, loss, mu, min_views,
):
    """Loss of every centre ``c`` at its own depth ``zs[c]``."""
    out = np.empty(zs.shape[0])
    for c in prange(zs.shape[0]):
        out[c] = _patch_cost(
            zs[c], c, origin, ref_idx, scale, rays, lights, ref_n, ref_r, ref_v,
            rot, trans, kparams, sizes, normals, refl, mask, loss, mu, min_views,
        )
    return out
