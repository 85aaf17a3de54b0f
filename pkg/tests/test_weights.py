import math

import numpy as np
import pytest
from scipy import integrate

from levymoments import catalog
from levymoments.weights import (
    Mollifier, WeightError, WeightFunction, cap, check_submultiplicative, custom, exp_beta, growth_ceiling,
    mollify, poly_p,
)


def bump_density(eps):
    """Independent normalized bump exp(-1/(1-(y/eps)^2)) / Z on (-eps, eps)."""
    raw = lambda y: math.exp(-1.0 / (1.0 - (y / eps) ** 2)) if abs(y) < eps else 0.0
    Z = integrate.quad(raw, -eps, eps, epsabs=1e-15, epsrel=1e-13)[0]
    return lambda y: raw(y) / Z


# ---------------------------------------------------------------- mollifier


@pytest.mark.parametrize("eps", [0.5, 0.1, 0.01])
def test_mollifier_unit_mass_support_and_sign(eps):
    m = Mollifier(eps)
    assert m.mass() == pytest.approx(1.0, abs=1e-8)
    y = np.linspace(-2 * eps, 2 * eps, 4001)[:, None]
    v = m(y)
    assert np.all(v >= 0)
    assert np.all(v[np.abs(y[:, 0]) >= eps] == 0)
    assert np.all(v[np.abs(y[:, 0]) < 0.99 * eps] > 0)


def test_mollifier_matches_independent_bump():
    ref = bump_density(0.3)
    m = Mollifier(0.3)
    for y in (0.0, 0.1, -0.2, 0.29):
        assert m(np.array([[y]]))[0] == pytest.approx(ref(y), rel=1e-12)


def test_mollifier_rejects_nonpositive_epsilon():
    with pytest.raises(WeightError):
        Mollifier(0.0)


# ---------------------------------------------------------------- mollify


def test_mollify_constant_weight():
    one = custom(lambda x: np.ones(len(x)), c=1.0)
    ge = mollify(one, Mollifier(0.2))
    assert np.allclose(ge(np.linspace(-3, 3, 13)[:, None]), 1.0, atol=1e-12)


def test_mollify_exp_constant_and_sandwich():
    g = exp_beta(1.0)
    ge = mollify(g, Mollifier(0.1))
    c_eps = ge.extra["c_eps"]
    assert c_eps == pytest.approx(math.exp(0.1), rel=1e-12)
    x = np.array([0.0, 1.0, -1.0, 5.0, -5.0])[:, None]
    assert np.all(g(x) / c_eps <= ge(x)) and np.all(ge(x) <= c_eps * g(x))


def test_mollify_linear_weight_at_origin():
    ge = mollify(poly_p(1.0), Mollifier(0.5))
    j = bump_density(0.5)
    ref = 1.0 + integrate.quad(lambda y: abs(y) * j(y), -0.5, 0.5, epsabs=1e-14, points=[0.0])[0]
    assert ge.scalar([0.0]) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("name", list(catalog.WEIGHTS))
@pytest.mark.parametrize("x", [0.03, -0.7, 2.5, 11.0])
def test_mollify_value_matches_direct_convolution(name, x):
    g = catalog.weight(name)
    ge = catalog.mollified(name, 0.1)
    j = bump_density(0.1)
    f = lambda y: j(y) * g.scalar([x - y])
    ref = integrate.quad(f, -0.1, 0.1, points=[x] if abs(x) < 0.1 else None, epsabs=0, epsrel=1e-12)[0]
    assert ge.scalar([x]) == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("name", list(catalog.WEIGHTS))
@pytest.mark.parametrize("eps", [0.5, 0.1, 0.01])
def test_mollified_two_sided_bound_on_grid(name, eps):
    g = catalog.weight(name)
    ge = mollify(g, Mollifier(eps))
    c_eps = ge.extra["c_eps"]
    x = np.linspace(-20, 20, 1000)[:, None]
    gv, gev = g(x), ge(x)
    assert np.all(gv / c_eps <= gev * (1 + 1e-12))
    assert np.all(gev <= c_eps * gv * (1 + 1e-12))


@pytest.mark.parametrize("name", list(catalog.WEIGHTS))
def test_mollified_derivative_bounds(name):
    g = catalog.weight(name)
    ge = catalog.mollified(name, 0.1)
    x = np.linspace(-20, 20, 1000)[:, None]
    gv = g(x)
    assert np.all(np.abs(ge.grad(x)[:, 0]) <= ge.extra["c_grad"][0] * gv * (1 + 1e-9))
    assert np.all(np.abs(ge.hess(x)[:, 0, 0]) <= ge.extra["c_hess"][0, 0] * gv * (1 + 1e-9))


def test_mollified_derivatives_match_finite_differences():
    ge = catalog.mollified("poly3", 0.1)
    x = np.array([-3.2, -0.05, 0.0, 0.07, 1.4, 8.0])[:, None]
    h = 1e-5
    fd1 = (ge(x + h) - ge(x - h)) / (2 * h)
    fd2 = (ge.grad(x + h) - ge.grad(x - h))[:, 0] / (2 * h)
    assert np.allclose(ge.grad(x)[:, 0], fd1, rtol=1e-6)
    assert np.allclose(ge.hess(x)[:, 0, 0], fd2, rtol=1e-5)


# ---------------------------------------------------------------- submultiplicativity


def test_submult_exponential():
    res = check_submultiplicative(exp_beta(1.0))
    assert res.ok and res.c_est <= 1 + 1e-9


def test_submult_quadratic_polynomial():
    res = check_submultiplicative(poly_p(2.0))
    assert res.ok and res.c_est <= 1 + 1e-9


def test_submult_gaussian_growth_violates():
    res = check_submultiplicative(lambda x: np.exp(x[:, 0] ** 2), box=5.0, c_max=1e6)
    assert not res.ok
    x, y = res.violation
    assert math.exp((x[0] + y[0]) ** 2) > 1e6 * math.exp(x[0] ** 2 + y[0] ** 2)


@pytest.mark.parametrize("name", list(catalog.WEIGHTS))
def test_catalog_weights_submultiplicative_with_their_constant(name):
    g = catalog.weight(name)
    res = check_submultiplicative(g, samples=10_000, box=20.0, c_max=g.c * (1 + 1e-12))
    assert res.ok


def test_weights_are_at_least_one():
    x = np.linspace(-30, 30, 2001)[:, None]
    for name in catalog.WEIGHTS:
        assert np.all(catalog.weight(name)(x) >= 1.0)
    with pytest.raises(WeightError):
        WeightFunction(fn=lambda x: np.ones(len(x)), c=0.5)


def test_custom_is_shifted_to_stay_above_one():
    g = custom(lambda x: np.abs(x[:, 0]), c=2.0)
    assert g.scalar([0.0]) >= 1.0


# ---------------------------------------------------------------- cap


def test_cap_below_one_rejected():
    with pytest.raises(WeightError):
        cap(exp_beta(1.0), 1.0 - 1e-9)


def test_cap_value():
    assert cap(exp_beta(1.0), 10.0).scalar([5.0]) == 10.0


def test_cap_stays_submultiplicative():
    g = cap(exp_beta(1.0), 10.0)
    assert g.c == 1.0
    assert check_submultiplicative(g, c_max=1.0 + 1e-12).ok


def test_cap_at_exactly_one_is_allowed():
    g = cap(exp_beta(1.0), 1.0)
    assert g.scalar([3.0]) == 1.0


# ---------------------------------------------------------------- growth


@pytest.mark.parametrize("name", list(catalog.WEIGHTS))
def test_exponential_growth_ceiling(name):
    g = catalog.weight(name)
    radii = np.linspace(0, 50, 1000)
    a, b = growth_ceiling(g, radii)
    pts = np.concatenate([radii, -radii])[:, None]
    assert np.all(g(pts) <= a * np.exp(b * np.abs(pts[:, 0])) * (1 + 1e-12))
