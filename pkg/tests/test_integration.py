import math

import numpy as np
import pytest

from radiant.errors import GrazingNormal, SingularSystem
from radiant.geometry import CameraIntrinsics, CameraPose, Pixel, ViewMaps
from radiant.integration import (
    Patch,
    build_patch,
    integrate_full_patches,
    integrate_patch,
    log_depth_gradient,
    window_offsets,
)

INTR = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)


def plane_depth(intr, n, c, u, v):
    """Depth of the plane ``n . X = c`` along the ray through ``(u, v)``."""
    d = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    return c / (d @ n)


def sphere_patch(center_px, radius, centre=(0.05, -0.02, 5.0), R=2.0):
    pix = window_offsets(radius) + list(center_px)
    d = INTR.rays(pix[:, 0], pix[:, 1])
    C = np.asarray(centre)
    dc = d @ C
    dd = np.sum(d * d, axis=1)
    t = (dc - np.sqrt(dc**2 - dd * (C @ C - R * R))) / dd
    normals = (t[:, None] * d - C) / R
    return Patch(Pixel(*center_px), radius, pix, normals), t


def test_gradient_fronto_parallel_is_zero():
    np.testing.assert_array_equal(log_depth_gradient(INTR, Pixel(50, 50), [0, 0, -1]), [0, 0])


@pytest.mark.parametrize("p", [Pixel(50, 50), Pixel(10.5, 80.25), Pixel(95, 3)])
def test_gradient_matches_complex_step_derivative(p):
    n = np.array([0.3, -0.5, -0.8])
    n /= np.linalg.norm(n)
    h = 1e-20
    du = np.imag(np.log(plane_depth(INTR, n, -4.0, p.u + 1j * h, p.v + 0j))) / h
    dv = np.imag(np.log(plane_depth(INTR, n, -4.0, p.u + 0j, p.v + 1j * h))) / h
    np.testing.assert_allclose(log_depth_gradient(INTR, p, n), [du, dv], rtol=1e-12, atol=1e-15)


def test_gradient_grazing():
    d = INTR.rays(70, 40)
    n = np.cross(d, [0, 1, 0])
    n /= np.linalg.norm(n)
    with pytest.raises(GrazingNormal):
        log_depth_gradient(INTR, Pixel(70, 40), n)


def test_fronto_patch_alphas_near_one():
    pix = window_offsets(1) + [50, 50]
    n = -INTR.rays(50, 50)
    n /= np.linalg.norm(n)
    sf = integrate_patch(INTR, Patch(Pixel(50, 50), 1, pix, np.tile(n, (9, 1))))
    np.testing.assert_allclose(sf.alphas, 1.0, atol=1e-6)


@pytest.mark.parametrize("centre", [(50, 50), (20, 75), (88, 12)])
def test_plane_patch_matches_analytic(centre):
    n = np.array([0.4, -0.3, -1.0])
    n /= np.linalg.norm(n)
    pix = window_offsets(3) + list(centre)
    z = plane_depth(INTR, n, -3.0, pix[:, 0].astype(float), pix[:, 1].astype(float))
    sf = integrate_patch(INTR, Patch(Pixel(*centre), 3, pix, np.tile(n, (len(pix), 1))))
    np.testing.assert_allclose(sf.alphas, z / z[len(z) // 2], atol=1e-6)
    assert sf.alphas[len(z) // 2] == 1.0


@pytest.mark.parametrize("centre", [(50, 50), (30, 60), (65, 40)])
def test_sphere_cap_patch_matches_analytic(centre):
    patch, t = sphere_patch(centre, 5)
    sf = integrate_patch(INTR, patch)
    assert np.abs(sf.alphas - t / t[60]).max() < 1e-4
    assert sf.alphas[60] == 1.0
    assert np.all(sf.alphas > 0)


def test_reconstructed_sphere_normals_match_input():
    patch, t = sphere_patch((40, 55), 5)
    sf = integrate_patch(INTR, patch)
    z = 7.3  # any positive centre depth: normals are scale invariant
    pts = (z * sf.alphas)[:, None] * INTR.rays(patch.pixels[:, 0], patch.pixels[:, 1])
    grid = pts.reshape(11, 11, 3)
    tu = grid[5, 6] - grid[5, 4]
    tv = grid[6, 5] - grid[4, 5]
    n = np.cross(tu, tv)
    n /= np.linalg.norm(n)
    n *= -np.sign(n @ patch.normals[60]) * -1
    angle = math.degrees(math.acos(np.clip(n @ patch.normals[60], -1, 1)))
    assert angle < 0.05


def test_alphas_invariant_to_world_rotation():
    patch, _ = sphere_patch((45, 50), 3)
    h, w = INTR.height, INTR.width
    rng = np.random.default_rng(4)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.linalg.det(q))
    normals = np.zeros((h, w, 3))
    mask = np.zeros((h, w), bool)
    mask[patch.pixels[:, 1], patch.pixels[:, 0]] = True
    base = ViewMaps(np.zeros((h, w, 3)), np.ones((h, w)), mask)
    base.normals[patch.pixels[:, 1], patch.pixels[:, 0]] = patch.normals
    # the same camera-frame normals seen through a rotated world
    normals[patch.pixels[:, 1], patch.pixels[:, 0]] = patch.normals @ q.T
    rotated = ViewMaps(normals, np.ones((h, w)), mask)
    a = integrate_patch(INTR, build_patch(base, CameraPose.identity(), (45, 50), 3)).alphas
    b = integrate_patch(INTR, build_patch(rotated, CameraPose(q.T, np.zeros(3)), (45, 50), 3)).alphas
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_disconnected_patch_is_singular():
    pix = np.array([[10, 10], [11, 10], [13, 10]])
    n = np.tile([0.0, 0.0, -1.0], (3, 1))
    with pytest.raises(SingularSystem):
        integrate_patch(INTR, Patch(Pixel(10, 10), 3, pix, n))


def test_grazing_patch_rejected():
    patch, _ = sphere_patch((50, 50), 1)
    d = INTR.rays(51, 50)
    g = np.cross(d, [0, 1, 0])
    patch.normals[5] = g / np.linalg.norm(g)
    with pytest.raises(GrazingNormal):
        integrate_patch(INTR, patch)


def test_partial_patch_integrates():
    patch, t = sphere_patch((50, 50), 2)
    keep = np.ones(len(patch.pixels), bool)
    keep[[0, 1, 5]] = False
    sub = Patch(patch.center, 2, patch.pixels[keep], patch.normals[keep])
    sf = integrate_patch(INTR, sub)
    np.testing.assert_allclose(sf.alphas, t[keep] / t[12], atol=1e-5)


def test_batched_integration_matches_single():
    rng = np.random.default_rng(0)
    h, w = INTR.height, INTR.width
    raster = np.zeros((h, w, 3))
    centres = np.array([[30, 40], [50, 50], [60, 35]])
    singles = []
    for c in centres:
        patch, _ = sphere_patch(tuple(c), 3, centre=(rng.normal() * 0.1, 0.0, 5.0))
        raster[patch.pixels[:, 1], patch.pixels[:, 0]] = patch.normals
    for c in centres:
        pix = window_offsets(3) + c
        patch = Patch(Pixel(*c), 3, pix, raster[pix[:, 1], pix[:, 0]])
        singles.append(integrate_patch(INTR, patch).alphas)
    alphas, ok = integrate_full_patches(INTR, raster, centres, 3)
    assert ok.all()
    np.testing.assert_allclose(alphas, np.array(singles), atol=1e-13)
