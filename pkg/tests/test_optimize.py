import numpy as np
import pytest

from schrodinger_ula.errors import MaxItersExceeded, NonFiniteIterate, NonPositiveU
from schrodinger_ula.likelihood import (Dataset, LinearPointModel, PriorSpec, generate_dataset)
from schrodinger_ula.optimize import (DescentConfig, InitializerConfig, compute_map,
                                      gradient_descent, initialize, next_power_of_two,
                                      ridge_fit, roughness_matrix)
from schrodinger_ula.spectral import mode_pairs
from schrodinger_ula.surrogate import SurrogateSpec

from conftest import make_model


def test_quadratic_recursion_example():
    seen = []

    def grad(t):
        seen.append(t.copy())
        return -t

    theta, trace = gradient_descent(grad, np.array([4.0, 0.0]), DescentConfig(gamma=0.5, max_iters=40,
                                                                              grad_tolerance=1e-9))
    for k, it in enumerate(seen):
        np.testing.assert_allclose(it, 0.5**k * np.array([4.0, 0.0]))
        assert it @ it <= 2 * 8 * 0.5**k
    assert trace[-1] <= 1e-9


def test_stationary_start_returns_immediately():
    theta, trace = gradient_descent(lambda t: np.zeros_like(t), np.ones(3), DescentConfig(gamma=1.0))
    np.testing.assert_array_equal(theta, np.ones(3))
    assert trace.size == 1


def test_descent_failures():
    with pytest.raises(NonFiniteIterate):
        gradient_descent(lambda t: 1e200 * t, np.ones(1), DescentConfig(gamma=1e200, max_iters=10))
    with pytest.raises(MaxItersExceeded) as info:
        gradient_descent(lambda t: -1e-3 * t, np.ones(2), DescentConfig(gamma=1.0, max_iters=3))
    assert info.value.trace.size == 4
    with pytest.raises(ValueError):
        DescentConfig(gamma=0.0)


def test_matrix_metric_is_newton_step():
    Q = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    cfg = DescentConfig(gamma=1.0, max_iters=2, grad_tolerance=1e-12, precondition=np.linalg.inv(Q))
    theta, trace = gradient_descent(lambda t: b - Q @ t, np.zeros(2), cfg)
    np.testing.assert_allclose(theta, np.linalg.solve(Q, b), rtol=1e-14)
    assert trace.size == 2


def test_map_on_linear_model_matches_ridge():
    rng = np.random.default_rng(0)
    Phi = rng.standard_normal((40, 3))
    Y = Phi @ np.array([0.3, -0.2, 0.5]) + rng.standard_normal(40)
    data = Dataset(rng.uniform(0.1, 0.9, 40), Y)
    prec = np.array([2.0, 3.0, 4.0])
    exact = np.linalg.solve(Phi.T @ Phi + np.diag(prec), Phi.T @ Y)
    spec = SurrogateSpec(exact + 0.01, 1.0, 1e4)
    theta, trace = compute_map(LinearPointModel(Phi), data, prec, spec, relative_tolerance=1e-14)
    np.testing.assert_allclose(theta, exact, atol=1e-8)


def test_map_noiseless_weak_prior_recovers_truth():
    model = make_model(D=3, n_interior=127)
    theta0 = np.array([0.4, -0.3, 0.2])
    data = generate_dataset(model, theta0, 300, seed=1, noise_scale=0.0)
    spec = SurrogateSpec(theta0 + np.array([0.02, -0.01, 0.01]), 0.5, 1e5)
    theta, trace = compute_map(model, data, np.full(3, 1e-10), spec, relative_tolerance=1e-12)
    np.testing.assert_allclose(theta, theta0, atol=1e-4)


def test_map_is_stationary(small_model, small_data):
    prior = PriorSpec(2.0, small_data.N, small_model.basis)
    spec = SurrogateSpec(small_data.theta0, 0.5, 1e4)
    theta, trace = compute_map(small_model, small_data, prior, spec)
    assert trace[-1] <= 1e-8 * max(1.0, trace[0])


def test_next_power_of_two():
    assert [next_power_of_two(x) for x in (0.3, 1, 2, 2.1, 9, 16)] == [1, 1, 2, 4, 16, 16]


def test_default_initializer_settings():
    cfg = InitializerConfig.default(2000, 1, 7.0, 8, min_basis=16)
    assert cfg.n_basis == 16
    assert cfg.delta_N == pytest.approx(2000 ** (-7 / 15))
    assert InitializerConfig.default(10_000, 1, 1.0, 4).n_basis == 32
    with pytest.raises(ValueError):
        InitializerConfig(4, 0.0, 2.0, 4)


def test_ridge_recovers_exact_sine_coefficients():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 1, (400, 1))
    c = np.array([0.7, -0.2, 0.1, 0.05])
    modes = mode_pairs(1, 4)
    R = sum(ck * np.sqrt(2) * np.sin((k + 1) * np.pi * X[:, 0]) for k, ck in enumerate(c))
    lam = np.array([0.5 * (k * np.pi) ** 2 for k in range(1, 5)])
    np.testing.assert_allclose(ridge_fit(X, R, modes, lam, 1e-8, 2.0), c, atol=1e-4)
    np.testing.assert_allclose(ridge_fit(X, R, modes, lam, 1e-8, 2.0, method="descent"), c, atol=1e-4)


def test_roughness_matrix_sine_block_is_diagonal():
    R = roughness_matrix(6, 3, True)
    lam = 0.5 * (np.arange(1, 7) * np.pi) ** 2
    np.testing.assert_allclose(np.diag(R)[:6], lam**3)
    # the quadrature part reproduces the analytic sine block off the diagonal
    full = roughness_matrix(6, 3, False)
    np.testing.assert_allclose(R[:6, :6], full)
    assert np.all(np.linalg.eigvalsh(R) >= -1e-9 * np.abs(R).max())
    # cubics have vanishing fourth derivative
    R4 = roughness_matrix(4, 4, True)
    np.testing.assert_allclose(R4[4:, :], 0.0, atol=1e-9 * np.abs(R4).max())


def test_initializer_closed_form_potential():
    K_min = 2.0 - np.log(2.0)
    model = make_model(D=8, n_interior=255, K_min=K_min)
    data = generate_dataset(model, np.zeros(8), 4000, seed=5, noise_scale=0.0)
    cfg = InitializerConfig(n_basis=16, delta_N=1e-8, alpha=7, D_out=8, K_min=K_min)
    res = initialize(model, data, cfg, full=True)
    assert np.max(np.abs(res.f - 2.0)) <= 0.05
    assert res.clipped_fraction == 0.0


def test_initializer_rejects_nonpositive_fit():
    model = make_model(D=2, n_interior=63)
    X = np.linspace(0.05, 0.95, 50)
    data = Dataset(X, np.full(50, -5.0))
    with pytest.raises(NonPositiveU):
        initialize(model, data, InitializerConfig(n_basis=8, delta_N=1e-3, alpha=4, D_out=2))


def test_initializer_close_to_truth_at_moderate_noise():
    model = make_model(D=4, n_interior=255, g=100.0)
    theta0 = np.array([1.0, -0.35, 0.19, -0.125])
    data = generate_dataset(model, theta0, 2000, seed=3)
    theta = initialize(model, data, InitializerConfig.default(2000, 1, 7.0, 4, min_basis=8))
    assert np.linalg.norm(theta - theta0) <= 0.125
