import numpy as np
import pytest

from schrodinger_ula.errors import InverseDomain
from schrodinger_ula.forward import (ForwardModel, LinkFunction, forward, forward_gradient_apply,
                                     forward_hessian_apply, link_apply, link_d1, link_inverse)
from schrodinger_ula.pde import BoundaryData, Grid
from schrodinger_ula.spectral import Basis

from conftest import make_model


def test_link_examples():
    link = LinkFunction()
    assert link_apply(link, 0.0) == pytest.approx(np.log(2.0), abs=1e-15)
    for t in (-5.0, 0.0, 5.0):
        assert link_inverse(link, link(t)) == pytest.approx(t, abs=1e-12)
    assert link_d1(link, 0.0) == 0.5
    t = np.linspace(-30, 30, 301)
    d = link.d1(t)
    assert np.all((d > 0) & (d < 1))
    with pytest.raises(InverseDomain):
        link.inverse(0.0)


def test_link_derivatives_by_differences():
    link = LinkFunction(0.3)
    t = np.linspace(-4, 4, 17)
    h = 1e-5
    np.testing.assert_allclose(link.d1(t), (link(t + h) - link(t - h)) / (2 * h), rtol=1e-8)
    np.testing.assert_allclose(link.d2(t), (link.d1(t + h) - link.d1(t - h)) / (2 * h), rtol=1e-7)
    np.testing.assert_allclose(link.d3(t), (link.d2(t + h) - link.d2(t - h)) / (2 * h),
                               rtol=1e-6, atol=1e-10)


def test_forward_closed_form():
    model = make_model(D=3, n_interior=511, K_min=2.0 - np.log(2.0))
    u = forward(model, np.zeros(3))
    x = model.grid.axis
    exact = np.cosh(2 * (x - 0.5)) / np.cosh(1.0)
    assert np.max(np.abs(u.values - exact)) <= 1e-4


def test_forward_bounded_by_boundary():
    model = make_model(D=6)
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = forward(model, 3 * rng.standard_normal(6)).values
        assert np.all(u > 0) and np.all(u <= 1.0 + 1e-12)


def test_forward_lipschitz_in_potential_field():
    model = make_model(D=6)
    rng = np.random.default_rng(1)
    ratios = []
    for _ in range(100):
        a, b = rng.uniform(-2, 2, (2, 6))
        du = np.max(np.abs(forward(model, a).values - forward(model, b).values))
        dF = np.max(np.abs(model.basis.matrix @ (a - b)))
        ratios.append(du / dF)
    # u ≤ 1 and |V_f[·]| ≤ 1/4 give a constant of at most 1/4
    assert max(ratios) <= 0.25


def _fd_gradient_check(model, theta, v, eps=1e-5):
    analytic = forward_gradient_apply(model, theta, v).values
    fd = (forward(model, theta + eps * v).values - forward(model, theta - eps * v).values) / (2 * eps)
    return np.max(np.abs(analytic - fd)) / np.max(np.abs(analytic))


def test_gradient_apply_examples():
    model = make_model(D=5)
    rng = np.random.default_rng(2)
    theta = rng.standard_normal(5)
    assert np.all(forward_gradient_apply(model, theta, np.zeros(5)).values == 0)
    v = rng.standard_normal(5)
    np.testing.assert_allclose(forward_gradient_apply(model, theta, 2 * v).values,
                               2 * forward_gradient_apply(model, theta, v).values, rtol=1e-14)
    assert _fd_gradient_check(model, theta, v) <= 1e-5


def test_hessian_apply_examples():
    model = make_model(D=5)
    rng = np.random.default_rng(3)
    theta, v1, v2 = rng.standard_normal((3, 5))
    assert np.all(forward_hessian_apply(model, theta, np.zeros(5), v2).values == 0)
    h12 = forward_hessian_apply(model, theta, v1, v2).values
    h21 = forward_hessian_apply(model, theta, v2, v1).values
    assert np.max(np.abs(h12 - h21)) <= 1e-12 * max(1.0, np.max(np.abs(h12)))
    eps = 1e-4
    fd = (forward(model, theta + eps * v1).values + forward(model, theta - eps * v1).values
          - 2 * forward(model, theta).values) / eps**2
    h11 = forward_hessian_apply(model, theta, v1, v1).values
    assert np.max(np.abs(h11 - fd)) / np.max(np.abs(h11)) <= 1e-3


def test_point_forward_adjoint_identity():
    model = make_model(D=4)
    rng = np.random.default_rng(4)
    X = rng.uniform(0, 1, (30, 1))
    pf = model.at_points(X)
    st = pf.state(rng.standard_normal(4))
    r = rng.standard_normal(30)
    np.testing.assert_allclose(pf.vjp(st, r), pf.jacobian(st).T @ r, rtol=1e-10, atol=1e-14)


def test_gradient_fields_uniformly_bounded_in_D():
    rng = np.random.default_rng(5)
    sups = []
    for D in (4, 8, 16, 32, 64):
        model = make_model(D=D, n_interior=255)
        worst = 0.0
        for _ in range(5):
            theta = rng.standard_normal(D) / np.arange(1, D + 1)
            v = rng.standard_normal(D)
            v /= np.linalg.norm(v)
            worst = max(worst, np.max(np.abs(forward_gradient_apply(model, theta, v).values)))
        sups.append(worst)
    # no growth with D: the largest value is not at the top end of the range
    assert sups[-1] <= 2 * max(sups[:2])


def test_potential_stays_above_floor():
    model = make_model(D=4, K_min=0.5)
    assert np.all(model.state(np.array([-4.0, 1.0, -1.0, 0.5])).f > 0.5)
    # far in the tail softplus underflows below one ulp of K_min
    assert np.all(model.state(np.array([-40.0, 10.0, -10.0, 5.0])).f >= 0.5)


def test_model_validation():
    basis = Basis(Grid(2, 7), 3)
    with pytest.raises(ValueError):
        ForwardModel(basis, boundary=BoundaryData.tabulated(1.0, 2.0))
    with pytest.raises(ValueError):
        ForwardModel(basis, boundary=BoundaryData.constant(-1.0))
    with pytest.raises(ValueError):
        make_model(D=3).state(np.zeros(4))


def test_two_dimensional_gradient_matches_differences():
    model = make_model(D=4, n_interior=31, dim=2)
    rng = np.random.default_rng(6)
    theta, v = rng.standard_normal((2, 4))
    assert _fd_gradient_check(model, theta, v) <= 1e-5
