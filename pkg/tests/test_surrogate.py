import numpy as np
import pytest

from schrodinger_ula.errors import DegenerateN
from schrodinger_ula.likelihood import PriorSpec, likelihood_for, log_posterior_unnormalized
from schrodinger_ula.surrogate import (EllipsoidNorm, SurrogateLikelihood, SurrogateSpec,
                                       condition_23_params, cutoff_alpha_eta, gamma_eta,
                                       gamma_eta_d1, gamma_eta_d2, k_lower_bound, asymptotic_eta,
                                       penalty, surrogate_log_likelihood, surrogate_log_posterior)


def spec_for(eta=0.8, D=1, K=10.0, M=None):
    return SurrogateSpec(np.zeros(D), eta, K, EllipsoidNorm(M))


def test_gamma_eta_examples():
    spec = spec_for(0.8)
    assert gamma_eta(spec, 0.3) == 0.0
    assert gamma_eta_d1(spec, 1.0) == pytest.approx(1.0, abs=1e-12)
    t = np.linspace(0, 3, 3001)
    d = 1e-3
    second = gamma_eta(spec, t + d) + gamma_eta(spec, t - d) - 2 * gamma_eta(spec, t)
    assert second.min() >= -1e-12


def test_gamma_eta_derivatives_consistent():
    spec = spec_for(0.8)
    t = np.linspace(0.41, 1.2, 60)
    h = 1e-6
    np.testing.assert_allclose(gamma_eta_d1(spec, t),
                               (gamma_eta(spec, t + h) - gamma_eta(spec, t - h)) / (2 * h),
                               atol=1e-8)
    np.testing.assert_allclose(gamma_eta_d2(spec, t),
                               (gamma_eta_d1(spec, t + h) - gamma_eta_d1(spec, t - h)) / (2 * h),
                               atol=1e-5)


def test_gamma_eta_envelope():
    eta = 0.6
    spec = spec_for(eta)
    t = np.linspace(0, 2, 2001)
    g = gamma_eta(spec, t)
    upper = np.maximum(t - eta / 2, 0) ** 2 + np.maximum(t - 5 * eta / 8, 0) ** 2
    assert np.all(g >= 0) and np.all(g <= upper + 1e-15)


def test_cutoff_examples():
    eta = 0.8
    spec = spec_for(eta, D=2)
    assert cutoff_alpha_eta(spec, np.array([0.5 * eta, 0.0]))[0] == 1.0
    assert cutoff_alpha_eta(spec, np.array([0.0, eta]))[0] == 0.0
    rng = np.random.default_rng(0)
    for s in (0.76, 0.8, 0.85, 0.87):
        v = rng.standard_normal(2)
        theta = s * eta * v / np.linalg.norm(v)
        _, grad = cutoff_alpha_eta(spec, theta)
        h = 1e-7
        fd = np.array([(cutoff_alpha_eta(spec, theta + h * e)[0] - cutoff_alpha_eta(spec, theta - h * e)[0])
                       / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(grad, fd, rtol=1e-6)


def test_penalty_with_ellipsoid_gradient():
    M = np.array([[2.0, 0.3], [0.3, 1.0]])
    spec = SurrogateSpec(np.array([0.1, -0.2]), 0.5, 3.0, EllipsoidNorm(M))
    theta = np.array([0.6, 0.4])
    _, grad = penalty(spec, theta)
    h = 1e-6
    fd = np.array([(penalty(spec, theta + h * e)[0] - penalty(spec, theta - h * e)[0]) / (2 * h)
                   for e in np.eye(2)])
    np.testing.assert_allclose(grad, fd, rtol=1e-7)


def test_ellipsoid_norm_validation():
    with pytest.raises(ValueError):
        EllipsoidNorm(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        EllipsoidNorm(np.array([[1.0, 0.0], [0.0, -1.0]]))
    n = EllipsoidNorm(np.diag([4.0, 1.0]))
    assert n(np.array([1.0, 0.0])) == 2.0
    assert n.lambda_min == 1.0 and n.lambda_max == 4.0


def _setup(small_model, small_data, eta=0.4):
    theta_init = small_data.theta0.copy()
    spec = SurrogateSpec(theta_init, eta, 500.0)
    return spec, likelihood_for(small_model, small_data)


def test_identity_region_is_bit_exact(small_model, small_data):
    spec, lik = _setup(small_model, small_data)
    rng = np.random.default_rng(1)
    for _ in range(10):
        v = rng.standard_normal(4)
        theta = spec.theta_init + 0.49 * spec.eta * rng.uniform() * v / np.linalg.norm(v)
        value, grad = surrogate_log_likelihood(small_model, small_data, spec, theta)
        v2, g2 = lik.value_and_grad(theta)
        assert value == v2
        assert np.array_equal(grad, g2)


def test_outer_region_is_pure_penalty(small_model, small_data):
    spec, _ = _setup(small_model, small_data)
    theta = spec.theta_init + np.array([spec.eta, 0.0, 0.0, 0.0])
    value, _ = surrogate_log_likelihood(small_model, small_data, spec, theta)
    assert value == -spec.K * gamma_eta(spec, spec.distance(theta))


@pytest.mark.parametrize("radius", [0.2, 0.62, 0.8, 1.5])
def test_surrogate_gradient_matches_differences(small_model, small_data, radius):
    spec, lik = _setup(small_model, small_data)
    sl = SurrogateLikelihood(lik, spec)
    v = np.array([1.0, -0.5, 0.3, 0.2])
    theta = spec.theta_init + radius * spec.eta * v / np.linalg.norm(v)
    g = sl.grad(theta)
    h = 1e-6
    fd = np.array([(sl.value(theta + h * e) - sl.value(theta - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.max(np.abs(g - fd)) <= 1e-5 * np.abs(g).max()


def test_surrogate_posterior_examples(small_model, small_data):
    spec, lik = _setup(small_model, small_data)
    prior = PriorSpec(2.0, small_data.N, small_model.basis)
    rng = np.random.default_rng(2)
    for _ in range(20):
        theta = spec.theta_init + 0.3 * rng.standard_normal(4)
        value, _ = surrogate_log_posterior(small_model, small_data, prior, spec, theta)
        lv, _ = surrogate_log_likelihood(small_model, small_data, spec, theta)
        assert value == lv - 0.5 * float(np.sum(prior.precision_diag * theta**2))
    inside = spec.theta_init + np.array([0.1, 0.05, 0.0, 0.0])
    value, grad = surrogate_log_posterior(small_model, small_data, prior, spec, inside)
    assert value == log_posterior_unnormalized(small_model, small_data, prior, inside)
    theta = spec.theta_init + np.array([0.25, -0.1, 0.1, 0.0])
    h = 1e-6
    fd = np.array([(surrogate_log_posterior(small_model, small_data, prior, spec, theta + h * e)[0]
                    - surrogate_log_posterior(small_model, small_data, prior, spec, theta - h * e)[0])
                   / (2 * h) for e in np.eye(4)])
    _, g = surrogate_log_posterior(small_model, small_data, prior, spec, theta)
    np.testing.assert_allclose(g, fd, rtol=1e-5)


def test_condition_23_examples():
    eps, K, gmax = condition_23_params(1000, 8, 1)
    assert eps == pytest.approx(0.144765, abs=1e-6)
    assert K == pytest.approx(5.530e12, rel=1e-3, abs=0)
    # 1/(1000·8⁸·(log 1000)⁴) = 2.618e-14 (see the notes on the worked example)
    assert gmax == pytest.approx(2.6178e-14, rel=1e-4, abs=0)
    assert gmax == pytest.approx(1 / (1000 * 8.0**8 * np.log(1000) ** 4), rel=1e-14, abs=0)
    assert asymptotic_eta(1000, 8, 1) == pytest.approx(eps * 8.0**-4)
    with pytest.raises(DegenerateN):
        condition_23_params(2, 8, 1)


def test_k_lower_bound_examples():
    assert k_lower_bound(2.0, 100, 0.5) == pytest.approx(8 * 100 * 3 * (1 + 1 / 0.25))
    ratio = k_lower_bound(1.0, 100, 0.01) / k_lower_bound(1.0, 100, 0.02)
    assert ratio == pytest.approx(4.0, rel=1e-3, abs=0)
    M = EllipsoidNorm(np.diag([0.5, 2.0]))
    assert k_lower_bound(0.0, 10, 1.0, M, C=1.0) == pytest.approx(10 * 1 * (1 + 2.0) / 0.5)


def test_spec_json_round_trip():
    spec = SurrogateSpec(np.array([0.1, 0.2]), 0.3, 7.0, EllipsoidNorm(np.diag([1.0, 2.0])))
    back = SurrogateSpec.from_json(spec.to_json())
    np.testing.assert_array_equal(back.theta_init, spec.theta_init)
    np.testing.assert_array_equal(back.norm.M, spec.norm.M)
    assert (back.eta, back.K) == (0.3, 7.0)
    with pytest.raises(ValueError):
        SurrogateSpec(np.zeros(2), 0.0, 1.0)
