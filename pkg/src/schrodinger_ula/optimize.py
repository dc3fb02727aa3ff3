"""Gradient-ascent MAP computation and the regression-based initializer.

The initializer fits ``u`` by ridge regression in the Dirichlet eigenbasis,
reads off the potential from the PDE itself (``f = Δu/(2u)``) and projects
``Φ⁻¹(f)`` onto the first ``D`` eigenfunctions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import MaxItersExceeded, NonFiniteIterate, NonPositiveU
from .forward import ForwardModel
from .pde import Grid
from .spectral import Basis, eigenfunction, mode_pairs, project


@dataclass
class DescentConfig:
    """Fixed-step gradient ascent on a log-density.

    ``precondition`` is an optional fixed metric: either a vector (diagonal)
    or a symmetric positive-definite matrix ``P``; the step becomes
    ``ϑ + γ P ∇``.  The stopping test always uses the plain gradient norm.
    """

    gamma: float
    max_iters: int = 10_000
    grad_tolerance: float = 1e-8
    precondition: np.ndarray | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.grad_tolerance < 0:
            raise ValueError("grad_tolerance must be >= 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.precondition is not None:
            self.precondition = np.asarray(self.precondition, dtype=float)


def _apply_metric(P, g):
    if P is None:
        return g
    return P * g if P.ndim == 1 else P @ g


def gradient_descent(objective_grad, theta0, config: DescentConfig):
    """Iterate ``ϑ_{k+1} = ϑ_k + γ P ∇ log π(ϑ_k)`` until ``‖∇‖ ≤ tol``.

    Parameters
    ----------
    objective_grad : callable
        Gradient of the function being *maximized* (a log-density).
    theta0 : array_like
        Starting point.
    config : DescentConfig

    Returns
    -------
    theta : ndarray
        Final iterate.
    trace : ndarray
        ``‖∇‖`` at ϑ₀, ϑ₁, …, ϑ_k (length ``k + 1``).

    Raises
    ------
    NonFiniteIterate
        When an iterate or gradient stops being finite.
    MaxItersExceeded
        When ``max_iters`` steps do not reach the tolerance; carries the
        iterate with the smallest gradient norm seen and the trace.
    """
    theta = np.array(theta0, dtype=float)
    g = np.asarray(objective_grad(theta), dtype=float)
    trace = [float(np.linalg.norm(g))]
    best, best_norm = theta.copy(), trace[0]
    for k in range(config.max_iters + 1):
        if not np.isfinite(trace[-1]):
            raise NonFiniteIterate(f"non-finite gradient at iteration {k}", iteration=k)
        if trace[-1] <= config.grad_tolerance:
            return theta, np.array(trace)
        if k == config.max_iters:
            break
        theta = theta + config.gamma * _apply_metric(config.precondition, g)
        if not np.all(np.isfinite(theta)):
            raise NonFiniteIterate(f"non-finite iterate at iteration {k + 1}", iteration=k + 1,
                                   partial={"best": best, "trace": np.array(trace)})
        g = np.asarray(objective_grad(theta), dtype=float)
        trace.append(float(np.linalg.norm(g)))
        if trace[-1] < best_norm:
            best, best_norm = theta.copy(), trace[-1]
    raise MaxItersExceeded(
        f"gradient norm {best_norm:.3e} above tolerance {config.grad_tolerance:.3e} "
        f"after {config.max_iters} iterations",
        theta=best, trace=np.array(trace))


def _precision_of(prior):
    return np.asarray(getattr(prior, "precision_diag", prior), dtype=float)


def map_preconditioner(likelihood, precision_diag, theta):
    """Inverse Gauss–Newton matrix ``(JᵀJ + Σ⁻¹)⁻¹`` at ``theta``.

    Always positive definite, and for the Gaussian likelihood it is the
    exact inverse curvature up to residual-weighted terms.
    """
    pm = likelihood.pm
    J = pm.jacobian(pm.state(theta))
    H = J.T @ J + np.diag(precision_diag)
    return linalg.inv(H, overwrite_a=True, check_finite=False)


def compute_map(model, dataset, prior, spec, config: DescentConfig | None = None,
                theta_start=None, relative_tolerance: float = 1e-8):
    """Maximize the surrogate posterior by preconditioned gradient ascent.

    ``prior`` is a :class:`PriorSpec` or a precision-diagonal vector (the
    latter lets tests send the prior weight to zero).  Without a
    ``config`` the metric is the inverse Gauss–Newton matrix at the start,
    the step is ``1/(2Λ̂)`` with ``Λ̂`` the largest generalized eigenvalue of
    the exact Hessian in that metric, and the stopping tolerance is
    ``relative_tolerance · max(1, ‖∇ at start‖)``.  Should that local step
    diverge (the path can cross into the stiff penalty annulus), the
    descent restarts with the certified global step built from the
    surrogate's gradient-Lipschitz bound.

    Returns the maximizer and the gradient-norm trace.
    """
    from .likelihood import likelihood_for
    from .surrogate import SurrogateLikelihood, SurrogatePosterior

    precision = _precision_of(prior)
    lik = likelihood_for(model, dataset)
    target = SurrogatePosterior(SurrogateLikelihood(lik, spec), precision)
    start = spec.theta_init if theta_start is None else np.asarray(theta_start, dtype=float)
    g0 = target.grad(start)
    tol = relative_tolerance * max(1.0, float(np.linalg.norm(g0)))
    if config is not None:
        return gradient_descent(target.grad, start, config)
    P = map_preconditioner(lik, precision, start)
    H = -(lik.hessian(start) - np.diag(precision))
    # Λ̂ = λ_max(P H), computed from the congruent symmetric matrix LᵀHL
    L = linalg.cholesky(P, lower=True)
    lam = float(linalg.eigvalsh(L.T @ H @ L)[-1])
    local = DescentConfig(gamma=0.5 / lam, max_iters=20_000, grad_tolerance=tol, precondition=P)
    try:
        return gradient_descent(target.grad, start, local)
    except (NonFiniteIterate, MaxItersExceeded):
        pass
    # restart with the global bound Λ = 7Kλ_max(M) + λ_max(Σ⁻¹) + ‖∇²ℓ(start)‖
    lam_cert = (7.0 * spec.K * spec.norm.lambda_max + float(np.max(precision))
                + float(np.linalg.norm(lik.hessian(start), 2)))
    p_max = float(linalg.eigvalsh(P)[-1])
    certified = DescentConfig(gamma=0.5 / (lam_cert * p_max), max_iters=100_000,
                              grad_tolerance=tol, precondition=P)
    return gradient_descent(target.grad, start, certified)


# ---------------------------------------------------------------------------
# initializer


def next_power_of_two(x: float) -> int:
    return 1 << max(0, math.ceil(math.log2(max(x, 1.0))))


@dataclass
class InitializerConfig:
    """Settings of the four-stage regression initializer.

    ``alpha`` and ``delta_N`` define the ridge penalty ``δ_N² Σ λ_k^α c_k²``
    on the fitted coefficients of ``u``; ``kappa`` is the clipping margin
    above ``K_min`` and ``u_floor`` the smallest admissible fitted ``u``.
    ``boundary_correction`` (1D only) adds the two cubics vanishing at the
    end points to the dictionary, so that ``u − g`` with nonzero curvature
    at the boundary does not produce Gibbs oscillations in ``Δu``.
    """

    n_basis: int
    delta_N: float
    alpha: float
    D_out: int
    K_min: float = 0.0
    kappa: float = 1e-3
    u_floor: float = 0.0
    boundary_correction: bool = True
    method: str = "direct"

    def __post_init__(self):
        if self.n_basis < 1 or self.D_out < 1:
            raise ValueError("n_basis and D_out must be >= 1")
        if not self.delta_N > 0:
            raise ValueError("delta_N must be positive")
        if self.method not in ("direct", "descent"):
            raise ValueError("method must be 'direct' or 'descent'")

    @classmethod
    def default(cls, N: int, d: int, alpha: float, D_out: int, K_min: float = 0.0,
                min_basis: int = 0, **kw) -> "InitializerConfig":
        """``n_J`` = next power of two above ``max(N^{d/(2α+d)}, min_basis)``, ``δ_N = N^{−α/(2α+d)}``."""
        n_basis = next_power_of_two(max(N ** (d / (2 * alpha + d)), min_basis))
        delta = N ** (-alpha / (2 * alpha + d))
        return cls(n_basis=n_basis, delta_N=delta, alpha=alpha, D_out=D_out, K_min=K_min, **kw)


def harmonic_lift(boundary, points):
    """Harmonic extension of the boundary datum at ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if boundary.kind == "constant":
        return np.full(pts.shape[0], float(boundary.values[0]))
    left, right = boundary.left_right()
    x = pts[:, 0]
    return left + (right - left) * x


def _cubics(x):
    """Two cubics vanishing at 0 and 1, and their second derivatives."""
    b1 = x * (1.0 - x)
    b2 = b1 * (2.0 * x - 1.0)
    return np.column_stack([b1, b2]), np.column_stack([np.full_like(x, -2.0), 6.0 - 12.0 * x])


def _design(modes, points):
    return np.column_stack([eigenfunction(m)(points) for m in modes])


def _cubic_derivative(j: int, order: int, x):
    coeffs = [np.array([0.0, 1.0, -1.0]), np.array([0.0, -1.0, 3.0, -2.0])][j]
    return np.polynomial.polynomial.polyval(x, np.polynomial.polynomial.polyder(coeffs, order)) \
        if order <= len(coeffs) - 1 else np.zeros_like(x)


def roughness_matrix(n_basis: int, alpha: int, with_cubics: bool) -> np.ndarray:
    """Gram matrix of ``2^{−α/2} ∂^α`` over ``[0, 1]`` for the 1D dictionary.

    On the sine block this is exactly ``diag(λ_k^α)``, so the penalty agrees
    with ``‖·‖²_{h^α}`` on sine series; with the cubics appended it stays a
    property of the fitted *function* rather than of its representation.
    """
    k = np.arange(1, n_basis + 1)
    if not with_cubics:
        return np.diag((0.5 * (k * np.pi) ** 2) ** alpha)
    x, w = np.polynomial.legendre.leggauss(8 * n_basis + 64)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    phase = 0.5 * np.pi * alpha
    cols = [np.sqrt(2.0) * (k * np.pi) ** alpha * np.sin(np.outer(x, k * np.pi) + phase)]
    cols.append(np.column_stack([_cubic_derivative(j, alpha, x) for j in (0, 1)]))
    Dm = np.column_stack(cols) * 2.0 ** (-0.5 * alpha)
    R = Dm.T @ (w[:, None] * Dm)
    R[:n_basis, :n_basis] = np.diag((0.5 * (k * np.pi) ** 2) ** alpha)
    return 0.5 * (R + R.T)


def ridge_fit(X, R, modes, eigenvalues, delta_N, alpha, extra=None, penalty=None,
              method="direct"):
    """Penalized least squares in the dictionary ``[e_k | extra]``.

    Solves ``(GᵀG/N + δ² P) c = GᵀR/N`` with ``P = Λ_α`` unless a full
    penalty matrix is supplied.  Returns the coefficients (sines first).
    """
    G = _design(modes, X)
    if penalty is None:
        penalty = np.diag(np.asarray(eigenvalues, dtype=float) ** alpha)
    if extra is not None:
        G = np.column_stack([G, extra])
    N = G.shape[0]
    A = G.T @ G / N + delta_N**2 * penalty
    b = G.T @ R / N
    if method == "direct":
        # symmetric Jacobi scaling keeps the Cholesky solve well conditioned
        # when the penalty spans many orders of magnitude
        s = 1.0 / np.sqrt(np.diag(A))
        return s * linalg.solve(s[:, None] * A * s[None, :], s * b, assume_a="pos")
    # plain gradient ascent on −½cᵀAc + bᵀc with the certified step 1/λ_max
    lam_max = float(linalg.eigvalsh(A, subset_by_index=[A.shape[0] - 1, A.shape[0] - 1])[0])
    cfg = DescentConfig(gamma=1.0 / lam_max, max_iters=200_000,
                        grad_tolerance=1e-12 * max(1.0, float(np.linalg.norm(b))))
    c, _ = gradient_descent(lambda c: b - A @ c, np.zeros_like(b), cfg)
    return c


@dataclass
class InitializerResult:
    theta: np.ndarray
    coefficients: np.ndarray
    u: np.ndarray
    f: np.ndarray
    clipped_fraction: float


def initialize(model: ForwardModel, dataset, cfg: InitializerConfig, full: bool = False):
    """Polynomial-time starting point ``θ_init``.

    Stage 1 fits ``Y − L_g(X)`` by ridge regression, stage 2 forms
    ``u_init`` on the model grid, stage 3 evaluates ``f_init = Δu/(2u)``
    from the spectral coefficients (``Δe_k = −2λ_k e_k``) and clips it to
    ``K_min + κ``, stage 4 projects ``Φ⁻¹(f_init)`` onto ``D_out`` modes.

    Returns ``θ_init``, or an :class:`InitializerResult` when ``full``.

    Raises
    ------
    NonPositiveU
        If ``min u_init ≤ u_floor``.
    """
    grid: Grid = model.grid
    d = grid.dim
    modes = mode_pairs(d, cfg.n_basis)
    lam = np.array([0.5 * np.pi**2 * sum(j * j for j in m) for m in modes])
    X = dataset.X
    R = dataset.Y - harmonic_lift(model.boundary, X)
    poly = cfg.boundary_correction and d == 1
    extra = _cubics(X[:, 0])[0] if poly else None
    pen = roughness_matrix(cfg.n_basis, int(cfg.alpha), True) if poly else None
    c = ridge_fit(X, R, modes, lam, cfg.delta_N, cfg.alpha, extra, pen, cfg.method)

    nodes = grid.nodes
    E = Basis(grid, cfg.n_basis).matrix
    sines = c[: cfg.n_basis]
    u = harmonic_lift(model.boundary, nodes) + E @ sines
    lap = E @ (-2.0 * lam * sines)
    if poly:
        P, P2 = _cubics(nodes[:, 0])
        u = u + P @ c[cfg.n_basis:]
        lap = lap + P2 @ c[cfg.n_basis:]
    if u.min() <= cfg.u_floor:
        raise NonPositiveU(f"fitted u has minimum {u.min():.3e} <= floor {cfg.u_floor:.3e}")
    f = lap / (2.0 * u)
    floor = cfg.K_min + cfg.kappa
    clipped = float(np.mean(f < floor))
    f = np.maximum(f, floor)
    link = model.link if model.link.K_min == cfg.K_min else type(model.link)(cfg.K_min)
    F = link.inverse(f)
    theta = project(F, model.basis.with_dimension(cfg.D_out))
    if full:
        return InitializerResult(theta, c, u, f, clipped)
    return theta
