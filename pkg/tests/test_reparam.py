import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from radiant.errors import DegenerateRadiance, NonUnitNormal, NormOverflow, SingularLighting
from radiant.metrics import condition_number
from radiant.reparam import (
    LightTriplet,
    canonical_triplet,
    embed_reflectance,
    invert_reparam,
    invert_reparam_q1,
    invert_reparam_q3,
    optimal_triplet,
    optimal_triplets,
    render_pbr,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_units(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_render_supernormal_example():
    np.testing.assert_array_equal(render_pbr([1.0], [0, 0, 1], np.eye(3)), [[0], [0], [1]])


def test_render_black_is_zero():
    L = optimal_triplet(unit([1, 2, 3]))
    np.testing.assert_array_equal(render_pbr([0.0], unit([1, 2, 3]), L), np.zeros((3, 1)))


def test_render_optimal_triplet_values():
    n = np.array([0.0, 0.0, 1.0])
    v = render_pbr([0.5], n, optimal_triplet(n, 1.0))
    np.testing.assert_allclose(v[:, 0], 0.5 / math.sqrt(3), atol=1e-15)
    assert v[0, 0] == pytest.approx(0.2887, abs=1e-4)


def test_render_rejects_non_unit_normal():
    with pytest.raises(NonUnitNormal):
        render_pbr([1.0], [0, 0, 2], np.eye(3))


def test_optimal_triplet_about_z_axis():
    L = optimal_triplet([0, 0, 1]).matrix
    s = math.sqrt(2 / 3)
    for k, a in enumerate(np.deg2rad([0, 120, 240])):
        np.testing.assert_allclose(L[k], [s * math.cos(a), s * math.sin(a), 1 / math.sqrt(3)], atol=1e-15)
    slant = math.degrees(math.acos(L[0] @ [0, 0, 1]))
    assert slant == pytest.approx(54.7356, abs=1e-4)


def test_optimal_triplet_properties_many_normals():
    rng = np.random.default_rng(11)
    for n in random_units(rng, 1000):
        for intensity in (1.0, 2.5):
            L = optimal_triplet(n, intensity)
            np.testing.assert_allclose(L.matrix @ L.matrix.T, intensity**2 * np.eye(3), atol=1e-10)
            np.testing.assert_allclose(L.matrix @ n, intensity / math.sqrt(3), atol=1e-10)
            assert condition_number(L) == pytest.approx(1.0, abs=1e-9)


def test_optimal_triplet_tangent_frame_switch():
    # |n.x| > 0.9 switches the tangent seed to e_y; orthogonality must survive
    for n in ([1, 0, 0], [-1, 0, 0], unit([0.95, 0.1, -0.2])):
        L = optimal_triplet(n).matrix
        np.testing.assert_allclose(L @ L.T, np.eye(3), atol=1e-12)


def test_vectorised_triplets_match_scalar():
    rng = np.random.default_rng(2)
    n = random_units(rng, 50)
    phase = rng.uniform(0, 2 * np.pi, 50)
    batch = optimal_triplets(n, 1.5, phase)
    for i in range(50):
        np.testing.assert_allclose(batch[i], optimal_triplet(n[i], 1.5, phase[i]).matrix, atol=1e-14)


def test_canonical_triplet():
    L = canonical_triplet()
    np.testing.assert_array_equal(L.matrix, np.eye(3))
    assert condition_number(L) == 1.0
    r, n = invert_reparam_q1([0, 0, 1], L)
    np.testing.assert_array_equal(r, [1.0])
    np.testing.assert_array_equal(n, [0, 0, 1])


def test_supernormal_reduction_exact():
    rng = np.random.default_rng(5)
    for n in random_units(rng, 200):
        np.testing.assert_array_equal(render_pbr([1.0], n, canonical_triplet())[:, 0], n)


def random_lighting(rng):
    """Random non-singular lighting with condition number at most 4."""
    q1, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    q2, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    return LightTriplet(q1 @ np.diag(rng.uniform(0.5, 2.0, 3)) @ q2)


def test_invert_q1_round_trip():
    rng = np.random.default_rng(7)
    for n in random_units(rng, 200):
        L = optimal_triplet(unit(rng.normal(size=3)))
        r, got = invert_reparam_q1(render_pbr([0.7], n, L), L)
        assert r[0] == pytest.approx(0.7, abs=1e-9)
        np.testing.assert_allclose(got, n, atol=1e-9)


def test_invert_q1_identity_example():
    r, n = invert_reparam_q1([0, 0, 1], np.eye(3))
    assert r[0] == 1.0
    np.testing.assert_array_equal(n, [0, 0, 1])


@pytest.mark.parametrize("inverse", [invert_reparam_q1, invert_reparam_q3])
def test_invert_zero_is_degenerate(inverse):
    v = np.zeros((3, 1 if inverse is invert_reparam_q1 else 3))
    with pytest.raises(DegenerateRadiance):
        inverse(v, np.eye(3))


def test_invert_singular_lighting():
    L = np.array([[1.0, 0, 0], [0, 1.0, 0], [0.5, 0.5, 0]])
    with pytest.raises(SingularLighting):
        invert_reparam_q1([1, 0, 0], L)
    with pytest.raises(SingularLighting):
        invert_reparam_q3(np.ones((3, 3)), L)


def test_invert_q3_round_trip_example():
    rng = np.random.default_rng(8)
    r0 = np.array([0.2, 0.5, 0.9])
    for n in random_units(rng, 200):
        L = random_lighting(rng)
        r, got = invert_reparam_q3(render_pbr(r0, n, L), L)
        np.testing.assert_allclose(r, r0, atol=1e-9)
        np.testing.assert_allclose(got, n, atol=1e-9)


def test_invert_q3_sign_tie_break_with_view_direction():
    # negative albedo is unphysical but exercises the camera-facing tie-break
    n = unit([0.2, -0.1, -1.0])
    r = np.array([0.5, -0.3, 0.4])
    v = render_pbr(r, n, np.eye(3))
    _, got = invert_reparam_q3(v, np.eye(3), view_dir=[0, 0, 1])
    np.testing.assert_allclose(got, n, atol=1e-12)
    _, got = invert_reparam_q3(v, np.eye(3), view_dir=[0, 0, -1])
    np.testing.assert_allclose(got, -n, atol=1e-12)


def test_invert_q3_perturbation_bound():
    """Frobenius-1e-3 perturbations of rank-one inputs move the normal by < 0.1 degrees."""
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        n0 = random_units(rng, 1)[0]
        r0 = rng.uniform(0.2, 1.0, 3)
        L = optimal_triplet(random_units(rng, 1)[0])
        e = rng.normal(size=(3, 3))
        e *= 1e-3 / np.linalg.norm(e)
        _, n = invert_reparam_q3(render_pbr(r0, n0, L) + e, L)
        worst = max(worst, math.degrees(math.acos(min(1.0, abs(n @ n0)))))
    assert worst < 0.1


def test_bijectivity_property_random_lighting():
    rng = np.random.default_rng(10)
    for _ in range(500):
        n = random_units(rng, 1)[0]
        L = random_lighting(rng)
        for q in (1, 3):
            r = rng.uniform(0.01, 1.0, q)
            got_r, got_n = invert_reparam(render_pbr(r, n, L), L)
            np.testing.assert_allclose(got_r, r, atol=1e-9)
            np.testing.assert_allclose(got_n, n, atol=1e-9)


@pytest.mark.parametrize(
    "r, p, expected",
    [
        ([0.5], 1, [0.5, 0.5]),
        ([0.0], 2, [0.0, 1.0]),
        ([1.0, 1.0, 1.0], 1, [1 / 3, 1 / 3, 1 / 3, 0.0]),
    ],
)
def test_embedding_examples(r, p, expected):
    e = embed_reflectance(r, p)
    np.testing.assert_allclose(e.values, expected, atol=1e-15)


def test_embedding_overflow():
    with pytest.raises(NormOverflow):
        embed_reflectance([1.5], 2)


@settings(max_examples=300)
@given(
    r=st.one_of(
        arrays(float, 1, elements=st.floats(0, 1)),
        arrays(float, 3, elements=st.floats(0, 1)),
    ),
    p=st.sampled_from([1, 2]),
)
def test_embedding_norm_is_constant(r, p):
    q = r.size
    e = embed_reflectance(r, p).values
    assert e.size == q + 1
    norm = np.sum(np.abs(e) ** p) ** (1 / p)
    assert norm == pytest.approx(q ** (1 / p - 1), abs=1e-12)
