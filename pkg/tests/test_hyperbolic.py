import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conetree.hyperbolic import (arg_modulus, average, ball_geometry_from_radius, dist,
                                 contraction_quantities, gamma, gamma_max, reflect,
                                 radius_for_eps1, shift, shift_contraction_factor,
                                 triangle_substitute_coeffs)
from conetree.tree import ValidationError

from helpers import random_upper

upper = st.builds(complex, st.floats(-5, 5), st.floats(1e-2, 5))


def test_gamma_values():
    assert gamma(1j, 2 + 1j) == pytest.approx(4.0)
    assert gamma(1j, 2j) == pytest.approx(0.5)
    assert gamma(0.3 + 0.7j, 0.3 + 0.7j) == 0


def test_gamma_rejects_lower_half_plane():
    with pytest.raises(ValidationError):
        gamma(1j, -1j)


def test_gamma_max_and_dist():
    assert gamma_max([1j, 1j], [1j, 2 + 1j]) == pytest.approx(4.0)
    assert gamma_max([1j, 1j], [1j, 1j]) == 0
    assert gamma_max(np.array(0.5 + 2j), np.array(1j)) == pytest.approx(gamma(0.5 + 2j, 1j))
    assert dist([1j], [1j]) == 0
    assert dist([1j], [2 + 1j]) == pytest.approx(np.arccosh(3.0))
    assert np.arccosh(3.0) == pytest.approx(1.76275, abs=1e-5)


def test_gamma_is_not_a_metric():
    a, b, c = 1j, 2 + 1j, 1 + 1j
    assert gamma(a, b) > gamma(a, c) + gamma(c, b)


def test_dist_triangle_inequality(rng):
    g, h, k = (random_upper(rng, (5000, 3)) for _ in range(3))
    lhs = dist(g, h)
    rhs = dist(g, k) + dist(k, h)
    assert np.all(lhs <= rhs * (1 + 1e-12) + 1e-12)


@given(upper, upper)
def test_reflection_is_isometry(g, h):
    assert gamma(reflect(g), reflect(h)) == pytest.approx(gamma(g, h), rel=1e-12, abs=1e-14)


@given(upper, upper, st.floats(-3, 3), st.floats(0, 3))
def test_shift_contraction_is_exact(g, h, re, im):
    z = complex(re, im)
    lhs = gamma(shift(g, z), shift(h, z))
    rhs = shift_contraction_factor(g, h, z) * gamma(g, h)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-14)


def test_ball_geometry():
    assert radius_for_eps1(1.0, 0.5) == pytest.approx(0.5)
    geo = ball_geometry_from_radius([2 + 1j, 3j], 0.5)
    assert geo.eps0 == 1.0 and geo.eps1 == pytest.approx(0.5)
    zero = ball_geometry_from_radius([1j], 0.0)
    assert zero.eps1 == 0 and zero.eps2 == zero.eps0


def test_ball_geometry_relations(rng):
    for _ in range(200):
        eps0 = rng.uniform(0.1, 3)
        r = rng.exponential(2)
        geo = ball_geometry_from_radius([1 + 1j * eps0], r)
        assert geo.eps1 + geo.eps2 == pytest.approx(eps0, rel=1e-12)
        assert geo.eps1 ** 2 == pytest.approx(r * eps0 * geo.eps2, rel=1e-10)
        # the lowest point of the gamma ball around i*eps0 has Im = eps2
        lowest = eps0 - geo.eps1
        assert gamma(1j * eps0, 1j * lowest) == pytest.approx(r, rel=1e-9)


def test_ball_geometry_by_search():
    center, r = 1j, 0.5
    ims = np.linspace(0.05, 1, 200001)
    inside = gamma(center, 1j * ims) <= r
    assert ims[inside].min() == pytest.approx(ball_geometry_from_radius([center], r).eps2, abs=1e-5)


def test_triangle_coefficients():
    assert triangle_substitute_coeffs(1j, 0.0) == 1.0
    assert triangle_substitute_coeffs(1j, 1.0, "shift") == pytest.approx(9.0)
    with pytest.raises(ValidationError):
        triangle_substitute_coeffs(1j, 0.1, "other")


def test_triangle_inequalities_hold(rng):
    n = 10_000
    g = random_upper(rng, n)
    h = random_upper(rng, n)
    lam = rng.uniform(-1, 1, n)
    for i in range(n):
        c = triangle_substitute_coeffs(h[i], lam[i], "shift")
        assert gamma(g[i] + lam[i], h[i]) <= c * gamma(g[i], h[i]) + c - 1 + 1e-9 * c
        lam_s = abs(lam[i]) * 0.9
        c = triangle_substitute_coeffs(h[i], lam_s, "scale")
        lhs = gamma((1 + lam_s) * g[i], h[i])
        assert lhs <= (c * gamma(g[i], h[i]) + c - 1) / (1 + lam_s) * (1 + 1e-9) + 1e-12


def test_contraction_identity(rng):
    g = random_upper(rng, (2000, 4))
    h = random_upper(rng, (2000, 4))
    w = rng.uniform(0.1, 3, 4)
    cq = contraction_quantities(g, h, w)
    direct = gamma(average(g, w), average(h, w))
    np.testing.assert_allclose(cq.assembled(), direct, rtol=1e-10, atol=1e-14)
    assert np.all(direct <= gamma_max(g, h) * (1 + 1e-12))
    assert np.all((cq.Q >= 0) & (cq.Q <= 1))
    assert np.all((cq.alpha > -np.pi) & (cq.alpha <= np.pi))
    np.testing.assert_allclose(cq.p.sum(-1), 1)
    np.testing.assert_allclose(cq.q.sum(-1), 1)


def test_contraction_equal_vectors():
    h = np.array([1j, 2 + 0.5j])
    cq = contraction_quantities(h, h, [1.0, 2.0])
    assert np.all(cq.Q == 0) and cq.assembled() == 0


def test_parallel_differences_are_aligned():
    h = np.array([1j, 0.5 + 2j, -1 + 0.3j])
    g = h + 0.2 * (1 + 0.5j)
    cq = contraction_quantities(g, h, [1.0, 1.0, 2.0])
    np.testing.assert_allclose(np.cos(cq.alpha), 1.0, atol=1e-12)


def test_arg_modulus():
    np.testing.assert_allclose(arg_modulus([0.0, np.pi, -3 * np.pi / 2, 2 * np.pi]),
                               [0.0, np.pi, np.pi / 2, 0.0], atol=1e-15)
