"""Globally log-concave surrogate for the log-likelihood.

``ℓ̃(θ) = α_η(θ) ℓ_N(θ) − K γ_η(|θ − θ_init|_M)`` where

* ``γ_η = φ_{η/8} ∗ γ̃_η`` with ``γ̃_η(t) = (t − 5η/8)₊²`` and ``φ`` the
  normalized bump ``c·exp(−1/(1−x²))`` on ``[−1, 1]``;
* ``α_η(θ) = α(|θ − θ_init|_M / η)`` with ``α = 1`` on ``[0, 3/4]``, ``0`` on
  ``[7/8, ∞)`` and a quintic smoothstep in between.

Writing ``a = (t − 5η/8)/h`` with ``h = η/8`` and ``I_j(a) = ∫_{−1}^a x^j φ(x) dx``,
the convolution reduces to::

    γ_η(t)   = h² (a² I₀ − 2a I₁ + I₂)
    γ_η'(t)  = 2h (a I₀ − I₁)
    γ_η''(t) = 2 I₀ ≥ 0

The partial moments ``I_j`` are tabulated once and interpolated with cubic
Hermite splines using their exact derivatives ``x^j φ(x)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import DegenerateN

TABLE_POINTS = 4096
QUAD_NODES = 64


def bump(x):
    """Unnormalized mollifier ``exp(−1/(1−x²))`` on ``(−1, 1)``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    return out


class MollifierTable:
    """Partial moments of the normalized bump on ``[−1, 1]``."""

    def __init__(self, n_points: int = TABLE_POINTS, n_nodes: int = QUAD_NODES):
        grid = np.linspace(-1.0, 1.0, n_points)
        nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
        lo, hi = grid[:-1], grid[1:]
        half = 0.5 * (hi - lo)
        x = (0.5 * (hi + lo))[:, None] + half[:, None] * nodes[None, :]
        w = half[:, None] * weights[None, :]
        phi = bump(x)
        cells = np.stack([np.sum(w * phi * x**j, axis=1) for j in range(3)])
        cum = np.concatenate([np.zeros((3, 1)), np.cumsum(cells, axis=1)], axis=1)
        self.normalizer = cum[0, -1]
        cum /= self.normalizer
        phi_grid = bump(grid) / self.normalizer
        self.second_moment = float(cum[2, -1])
        self._splines = [
            CubicHermiteSpline(grid, cum[j], grid**j * phi_grid) for j in range(3)
        ]

    def density(self, x):
        return bump(x) / self.normalizer

    def moments(self, a):
        """``(I₀, I₁, I₂)`` at ``a``, clamped to the support."""
        a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
        return tuple(s(a) for s in self._splines)


@lru_cache(maxsize=1)
def default_table() -> MollifierTable:
    return MollifierTable()


def smoothstep(x):
    """C² quintic ramp from 0 (x ≤ 0) to 1 (x ≥ 1)."""
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10.0 - 15.0 * x + 6.0 * x * x)


def smoothstep_d1(x):
    x = np.clip(x, 0.0, 1.0)
    return 30.0 * x * x * (1.0 - x) ** 2


def cutoff(s):
    """``α(s)``: 1 on ``[0, 3/4]``, 0 on ``[7/8, ∞)``."""
    return 1.0 - smoothstep((np.asarray(s, dtype=float) - 0.75) * 8.0)


def cutoff_d1(s):
    return -8.0 * smoothstep_d1((np.asarray(s, dtype=float) - 0.75) * 8.0)


@dataclass(frozen=True)
class EllipsoidNorm:
    """``|θ|_M = sqrt(θᵀ M θ)``; ``M=None`` means the identity."""

    M: np.ndarray | None = None

    def __post_init__(self):
        if self.M is not None:
            M = np.asarray(self.M, dtype=float)
            if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
                raise ValueError("M must be a symmetric square matrix")
            if np.linalg.eigvalsh(M)[0] <= 0:
                raise ValueError("M must be positive definite")
            object.__setattr__(self, "M", M)

    @property
    def lambda_min(self) -> float:
        return 1.0 if self.M is None else float(np.linalg.eigvalsh(self.M)[0])

    @property
    def lambda_max(self) -> float:
        return 1.0 if self.M is None else float(np.linalg.eigvalsh(self.M)[-1])

    def apply(self, v):
        return v if self.M is None else self.M @ v

    def __call__(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(v @ self.apply(v)))

    def gradient(self, v):
        """``Mv/|v|_M``; zero at the origin by convention."""
        n = self(v)
        return np.zeros_like(v) if n == 0 else self.apply(v) / n


@dataclass(frozen=True)
class SurrogateSpec:
    theta_init: np.ndarray
    eta: float
    K: float
    norm: EllipsoidNorm = field(default_factory=EllipsoidNorm)
    table: MollifierTable = field(default_factory=default_table, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "theta_init", np.asarray(self.theta_init, dtype=float))
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.K > 0:
            raise ValueError("K must be positive")

    @property
    def D(self) -> int:
        return self.theta_init.size

    @property
    def ball_radius(self) -> float:
        """Radius ``η/2`` of the localization ball around ``θ_init``."""
        return 0.5 * self.eta

    def distance(self, theta) -> float:
        return self.norm(np.asarray(theta, dtype=float) - self.theta_init)

    def to_json(self) -> str:
        return json.dumps({
            "theta_init": self.theta_init.tolist(),
            "eta": self.eta,
            "K": self.K,
            "M": "identity" if self.norm.M is None else self.norm.M.tolist(),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SurrogateSpec":
        info = json.loads(text)
        M = info.get("M", "identity")
        norm = EllipsoidNorm(None if M == "identity" else np.asarray(M))
        return cls(np.asarray(info["theta_init"]), info["eta"], info["K"], norm)


def gamma_eta(spec: SurrogateSpec, t):
    """Mollified one-sided square ``γ_η(t)``."""
    t = np.asarray(t, dtype=float)
    h = spec.eta / 8.0
    a = (t - 5.0 * spec.eta / 8.0) / h
    I0, I1, I2 = spec.table.moments(a)
    inner = h * h * (a * a * I0 - 2.0 * a * I1 + I2)
    # beyond the mollifier window the convolution is an exact quadratic
    tail = (t - 5.0 * spec.eta / 8.0) ** 2 + h * h * spec.table.second_moment
    out = np.where(a >= 1.0, tail, np.where(a <= -1.0, 0.0, inner))
    return float(out) if out.ndim == 0 else out


def gamma_eta_d1(spec: SurrogateSpec, t):
    t = np.asarray(t, dtype=float)
    h = spec.eta / 8.0
    a = (t - 5.0 * spec.eta / 8.0) / h
    I0, I1, _ = spec.table.moments(a)
    inner = 2.0 * h * (a * I0 - I1)
    out = np.where(a >= 1.0, 2.0 * (t - 5.0 * spec.eta / 8.0), np.where(a <= -1.0, 0.0, inner))
    return float(out) if out.ndim == 0 else out


def gamma_eta_d2(spec: SurrogateSpec, t):
    t = np.asarray(t, dtype=float)
    a = (t - 5.0 * spec.eta / 8.0) / (spec.eta / 8.0)
    out = 2.0 * spec.table.moments(a)[0]
    return float(out) if out.ndim == 0 else out


def cutoff_alpha_eta(spec: SurrogateSpec, theta):
    """``(α_η(θ), ∇α_η(θ))``."""
    diff = np.asarray(theta, dtype=float) - spec.theta_init
    t = spec.norm(diff)
    s = t / spec.eta
    if s <= 0.75:
        return 1.0, np.zeros_like(diff)
    if s >= 0.875:
        return 0.0, np.zeros_like(diff)
    value = float(cutoff(s))
    slope = float(cutoff_d1(s))
    if slope == 0.0:
        return value, np.zeros_like(diff)
    return value, (slope / spec.eta) * spec.norm.gradient(diff)


def penalty(spec: SurrogateSpec, theta):
    """``(g_η(θ), ∇g_η(θ))`` with ``g_η(θ) = γ_η(|θ − θ_init|_M)``."""
    diff = np.asarray(theta, dtype=float) - spec.theta_init
    t = spec.norm(diff)
    if t <= 0.5 * spec.eta:
        return 0.0, np.zeros_like(diff)
    value = gamma_eta(spec, t)
    slope = gamma_eta_d1(spec, t)
    if slope == 0.0:
        return value, np.zeros_like(diff)
    return value, slope * spec.norm.gradient(diff)


class SurrogateLikelihood:
    """``ℓ̃ = α_η ℓ_N − K g_η`` around a likelihood object.

    Where ``α_η = 1`` and ``g_η = 0`` the likelihood value is returned
    untouched; where ``α_η = 0`` the likelihood is never evaluated.
    """

    def __init__(self, likelihood, spec: SurrogateSpec):
        if spec.D != likelihood.D:
            raise ValueError("surrogate centre and likelihood dimensions differ")
        self.likelihood = likelihood
        self.spec = spec

    @property
    def D(self) -> int:
        return self.likelihood.D

    def value(self, theta) -> float:
        return self.value_and_grad(theta, need_grad=False)[0]

    def grad(self, theta) -> np.ndarray:
        return self.value_and_grad(theta)[1]

    def value_and_grad(self, theta, need_grad: bool = True):
        theta = np.asarray(theta, dtype=float)
        spec = self.spec
        t = spec.distance(theta)
        if t <= 0.5 * spec.eta:
            # α = 1 and g = 0: the likelihood itself
            if need_grad:
                return self.likelihood.value_and_grad(theta)
            return self.likelihood.value(theta), None
        a_val, a_grad = cutoff_alpha_eta(spec, theta)
        g_val, g_grad = penalty(spec, theta)
        if a_val == 0.0:
            return -spec.K * g_val, -spec.K * g_grad
        if need_grad:
            l_val, l_grad = self.likelihood.value_and_grad(theta)
        else:
            l_val, l_grad = self.likelihood.value(theta), None
        if a_val == 1.0 and g_val == 0.0:
            return l_val, l_grad
        value = a_val * l_val - spec.K * g_val
        if not need_grad:
            return value, None
        return value, a_val * l_grad + l_val * a_grad - spec.K * g_grad


class SurrogatePosterior:
    """``log π̃ = ℓ̃ − ½ θᵀ Σ⁻¹ θ`` (constants dropped)."""

    def __init__(self, surrogate: SurrogateLikelihood, precision_diag):
        self.surrogate = surrogate
        self.precision_diag = np.asarray(precision_diag, dtype=float)

    @property
    def D(self) -> int:
        return self.surrogate.D

    @property
    def spec(self) -> SurrogateSpec:
        return self.surrogate.spec

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return self.surrogate.value(theta) - 0.5 * float(np.sum(self.precision_diag * theta**2))

    def grad(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.surrogate.grad(theta) - self.precision_diag * theta

    def value_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        v, g = self.surrogate.value_and_grad(theta)
        return (v - 0.5 * float(np.sum(self.precision_diag * theta**2)),
                g - self.precision_diag * theta)

    def hessian_fd(self, theta, step: float | None = None) -> np.ndarray:
        return fd_hessian(self.grad, theta, step)


def fd_hessian(grad, theta, step: float | None = None) -> np.ndarray:
    """Symmetrized central-difference Jacobian of an analytic gradient."""
    theta = np.asarray(theta, dtype=float)
    if step is None:
        step = 1e-5 * max(1.0, float(np.linalg.norm(theta)))
    cols = []
    for e in np.eye(theta.size):
        cols.append((grad(theta + step * e) - grad(theta - step * e)) / (2 * step))
    H = np.column_stack(cols)
    return 0.5 * (H + H.T)


def surrogate_log_likelihood(model, dataset, spec: SurrogateSpec, theta):
    """``(ℓ̃_N(θ), ∇ℓ̃_N(θ))``."""
    from .likelihood import likelihood_for

    return SurrogateLikelihood(likelihood_for(model, dataset), spec).value_and_grad(theta)


def surrogate_log_posterior(model, dataset, prior, spec: SurrogateSpec, theta):
    """``(log π̃(θ), ∇log π̃(θ))`` with constants dropped."""
    from .likelihood import likelihood_for

    sl = SurrogateLikelihood(likelihood_for(model, dataset), spec)
    return SurrogatePosterior(sl, prior.precision_diag).value_and_grad(theta)


def condition_23_params(N, D, d):
    """``(ε, K, γ_max) = (1/log N, N D^{8/d} (log N)³, 1/(N D^{8/d} (log N)⁴))``."""
    if N < 3:
        raise DegenerateN("N must be at least 3 so that log N > 1")
    logN = np.log(N)
    base = N * D ** (8.0 / d)
    return 1.0 / logN, base * logN**3, 1.0 / (base * logN**4)


def asymptotic_eta(N, D, d) -> float:
    """``η = ε D^{−4/d}`` with ``ε = 1/log N``."""
    eps, _, _ = condition_23_params(N, D, d)
    return eps * D ** (-4.0 / d)


def k_lower_bound(c_max_hat, N, eta, norm: EllipsoidNorm | None = None, C: float = 8.0):
    """``C N (c_max + 1)(1 + λ_max(M)/η²)/λ_min(M)``.

    ``C`` is a calibration constant, not a value fixed by the theory.
    """
    norm = norm or EllipsoidNorm()
    return C * N * (c_max_hat + 1.0) * (1.0 + norm.lambda_max / eta**2) / norm.lambda_min
