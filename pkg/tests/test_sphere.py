import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rafm.numerics import Prng, sample_uniform_sphere
from rafm.sphere import (
    SphereDomainError,
    conditional_field,
    geodesic_pair,
    log_map,
    slerp,
    slerp_velocity,
    tangential_project,
)


def random_pairs(seed, n, d, radius_scale=3.0):
    rng = Prng(seed)
    r = radius_scale * (0.1 + rng.uniform(n))
    u0 = sample_uniform_sphere(rng, n, d)
    u1 = sample_uniform_sphere(rng, n, d)
    return r[:, None] * u0, r[:, None] * u1


def test_pair_orthogonal():
    p = geodesic_pair([1.0, 0.0], [0.0, 1.0])
    assert p.theta == pytest.approx(math.pi / 2)
    assert p.R == pytest.approx(1.0)


def test_pair_coincident():
    assert geodesic_pair([2.0, 0.0], [2.0, 0.0]).theta == 0.0


def test_pair_antipodal_completion():
    p = geodesic_pair([1.0, 0.0], [-1.0, 0.0])
    assert bool(p.antipodal)
    assert p.theta == pytest.approx(math.pi - 1e-7)
    # e_1 is parallel to u0 so e_2 seeds the completion plane.
    mid = slerp(p, 0.5)
    assert mid == pytest.approx([0.0, 1.0], abs=1e-6)
    assert np.linalg.norm(slerp(p, 1.0) - np.array([-1.0, 0.0])) < 1e-6


def test_pair_errors():
    with pytest.raises(SphereDomainError):
        geodesic_pair([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(SphereDomainError):
        geodesic_pair([1.0, 0.0], [0.0, 1.1])


def test_slerp_midpoint():
    p = geodesic_pair([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    assert slerp(p, 0.5) == pytest.approx(np.array([1.0, 1.0, 0.0]) / math.sqrt(2), abs=1e-15)


def test_slerp_endpoints_exact():
    x0, x1 = random_pairs(0, 50, 5)
    p = geodesic_pair(x0, x1)
    assert np.array_equal(slerp(p, np.zeros(50)), x0)
    assert np.array_equal(slerp(p, np.ones(50)), x1)


def test_slerp_t_domain():
    p = geodesic_pair([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(SphereDomainError):
        slerp(p, 1.5)


def test_slerp_small_angle_matches_renormalized_lerp():
    x0 = np.array([1.0, 0.0, 0.0])
    x1 = np.array([math.cos(3e-7), math.sin(3e-7), 0.0])
    p = geodesic_pair(x0, x1)
    assert p.theta < 1e-6
    for t in (0.1, 0.5, 0.9):
        lerp = (1 - t) * x0 + t * x1
        assert np.max(np.abs(slerp(p, t) - lerp / np.linalg.norm(lerp))) <= 1e-9


def test_velocity_orthogonal_start():
    p = geodesic_pair([1.0, 0.0], [0.0, 1.0])
    assert slerp_velocity(p, 0.0) == pytest.approx([0.0, math.pi / 2], abs=1e-15)


def test_velocity_zero_angle():
    p = geodesic_pair([2.0, 0.0], [2.0, 0.0])
    assert np.all(slerp_velocity(p, 0.3) == 0.0)


@pytest.mark.parametrize("d", [2, 3, 16])
def test_velocity_matches_finite_difference(d):
    x0, x1 = random_pairs(1, 200, d)
    p = geodesic_pair(x0, x1)
    h = 1e-6
    t = 0.05 + 0.9 * Prng(2).uniform(200)
    fd = (slerp(p, t + h) - slerp(p, t - h)) / (2 * h)
    v = slerp_velocity(p, t)
    rel = np.linalg.norm(fd - v, axis=1) / np.linalg.norm(v, axis=1)
    assert rel.max() <= 1e-5


def test_velocity_speed():
    x0, x1 = random_pairs(3, 100, 8)
    p = geodesic_pair(x0, x1)
    v = slerp_velocity(p, 0.37)
    assert np.allclose(np.linalg.norm(v, axis=1), p.R * p.theta, rtol=1e-9, atol=0)


def test_symmetry():
    x0, x1 = random_pairs(4, 100, 6)
    fwd = geodesic_pair(x0, x1)
    bwd = geodesic_pair(x1, x0)
    for t in np.linspace(0, 1, 11):
        assert np.max(np.abs(slerp(fwd, t) - slerp(bwd, 1 - t))) <= 1e-10


def test_log_map_identity_and_orthogonal():
    assert np.all(log_map([1.0, 2.0], [1.0, 2.0]) == 0.0)
    assert log_map([1.0, 0.0], [0.0, 1.0]) == pytest.approx([0.0, math.pi / 2], abs=1e-15)


def test_log_map_round_trip():
    x, y = random_pairs(5, 100, 4)
    v = log_map(x, y)
    # Walk the geodesic leaving x along v for length |v|; t = 1 of the slerp
    # from x to its endpoint y' must reproduce y.
    r = np.linalg.norm(x, axis=1)
    ang = np.linalg.norm(v, axis=1) / r
    y_hat = np.cos(ang)[:, None] * x + (np.sin(ang) * r / np.linalg.norm(v, axis=1))[:, None] * v
    p = geodesic_pair(x, y_hat)
    assert np.max(np.abs(slerp(p, np.ones(100)) - y)) <= 1e-8
    assert np.max(np.abs(y_hat - y)) <= 1e-8


def test_log_map_antipodal_error():
    with pytest.raises(SphereDomainError):
        log_map([1.0, 0.0], [-1.0, 0.0])


def test_conditional_field_consistency_d16():
    x0, x1 = random_pairs(6, 50, 16)
    p = geodesic_pair(x0, x1)
    xt = slerp(p, 0.3)
    u = conditional_field(xt, x1, np.full(50, 0.3))
    v = slerp_velocity(p, 0.3)
    rel = np.linalg.norm(u - v, axis=1) / np.linalg.norm(v, axis=1)
    assert rel.max() <= 1e-8


def test_conditional_field_at_target_and_tangency():
    x = np.array([0.0, 3.0, 4.0])
    assert np.all(conditional_field(x, x, 0.5) == 0.0)
    a, b = random_pairs(7, 100, 5)
    u = conditional_field(a, b, np.full(100, 0.6))
    inner = np.abs(np.sum(a * u, axis=1))
    assert np.all(inner <= 1e-9 * np.linalg.norm(a, axis=1) * np.linalg.norm(u, axis=1))
    with pytest.raises(SphereDomainError):
        conditional_field(x, x, 1.0)


def test_projection_examples():
    assert tangential_project(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx([0.0, 1.0])
    x = np.array([0.3, -0.2, 0.5])
    assert np.all(np.abs(tangential_project(x, 2.5 * x)) < 1e-15)
    small = np.array([1e-4, 0.0])
    v = np.array([0.7, -0.3])
    assert np.array_equal(tangential_project(small, v), v)


vec = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3)


@settings(max_examples=200, deadline=None)
@given(vec, vec)
def test_projection_properties(x, v):
    x, v = np.array(x), np.array(v)
    p = tangential_project(x, v)
    # hypot avoids the underflow of squaring tiny components
    nx, nv = math.hypot(*x), math.hypot(*v)
    assert math.hypot(*p) <= nv * (1 + 1e-12)
    if nx >= 1e-3:
        assert abs(x @ p) <= 1e-12 * nx * nv + 1e-300
        assert np.allclose(tangential_project(x, p), p, atol=1e-12, rtol=0)
