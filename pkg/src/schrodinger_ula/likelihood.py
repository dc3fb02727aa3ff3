"""Synthetic data, Gaussian log-likelihood, prior and posterior log-density.

The additive constants ``N log √(2π)`` and the prior normalizer are dropped
throughout, so ``log_likelihood`` is ``−½ Σ (Y_i − G(θ)(X_i))²`` exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .forward import ForwardModel, PointForward
from .spectral import Basis


@dataclass(eq=False)
class Dataset:
    """Observations ``Y_i = G(θ₀)(X_i) + ε_i`` with uniform design."""

    X: np.ndarray
    Y: np.ndarray
    theta0: np.ndarray | None = None
    seed: int | None = None
    noise_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y must have the same number of rows")
        if np.any(self.X <= 0) or np.any(self.X >= 1):
            raise ValueError("design points must lie strictly inside the domain")
        if self.theta0 is not None:
            self.theta0 = np.asarray(self.theta0, dtype=float)

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def with_responses(self, Y) -> "Dataset":
        return Dataset(self.X, Y, self.theta0, self.seed, self.noise_scale, dict(self.meta))

    def permuted(self, perm) -> "Dataset":
        return Dataset(self.X[perm], self.Y[perm], self.theta0, self.seed, self.noise_scale, dict(self.meta))

    def save(self, csv_path, alpha=None) -> tuple[Path, Path]:
        """Write ``x``/``x1,x2`` and ``y`` columns plus a JSON sidecar."""
        csv_path = Path(csv_path)
        header = "x,y" if self.dim == 1 else "x1,x2,y"
        np.savetxt(csv_path, np.column_stack([self.X, self.Y]), delimiter=",",
                   header=header, comments="", fmt="%.17g")
        sidecar = csv_path.with_suffix(".json")
        info = {
            "N": self.N,
            "D0": None if self.theta0 is None else int(self.theta0.size),
            "seed": self.seed,
            "theta0": None if self.theta0 is None else self.theta0.tolist(),
            "alpha": alpha,
            "noise_scale": self.noise_scale,
            **self.meta,
        }
        sidecar.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
        return csv_path, sidecar

    @classmethod
    def load(cls, csv_path) -> "Dataset":
        csv_path = Path(csv_path)
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
        sidecar = csv_path.with_suffix(".json")
        info = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        theta0 = info.pop("theta0", None)
        seed = info.pop("seed", None)
        noise = info.pop("noise_scale", 1.0)
        for key in ("N", "D0"):
            info.pop(key, None)
        return cls(data[:, :-1], data[:, -1], theta0, seed, noise, info)


def generate_dataset(model: ForwardModel, theta0, N: int, seed: int,
                     noise_scale: float = 1.0) -> Dataset:
    """Draw ``X_i ~ U(O)`` and ``Y_i = G(θ₀)(X_i) + noise_scale·ε_i``.

    ``theta0`` may be longer than ``model.D``; the truth is then evaluated
    with the matching number of basis functions on the same grid.
    ``noise_scale`` other than 1 is a test hook.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    theta0 = np.asarray(theta0, dtype=float)
    truth = model if theta0.size == model.D else model.with_dimension(theta0.size)
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(N, model.basis.dim))
    # uniform draws of exactly 0 are possible in principle; reflect them inside
    X = np.where(X <= 0.0, np.finfo(float).tiny, X)
    pf = truth.at_points(X)
    mean = pf.values(truth.state(theta0))
    Y = mean + noise_scale * rng.standard_normal(N)
    return Dataset(X, Y, theta0, seed, noise_scale)


class LinearPointModel:
    """Linear test forward map ``G(θ)(X_i) = (Φ θ)_i`` with a fixed design matrix."""

    def __init__(self, design):
        self.design = np.atleast_2d(np.asarray(design, dtype=float))

    @property
    def D(self) -> int:
        return self.design.shape[1]

    @property
    def n_points(self) -> int:
        return self.design.shape[0]

    def state(self, theta):
        return np.asarray(theta, dtype=float)

    def values(self, state):
        return self.design @ state

    def jacobian(self, state):
        return self.design

    def vjp(self, state, r, z=None):
        return self.design.T @ r

    def residual_hessian(self, state, r, fields=None, z=None):
        return np.zeros((self.D, self.D))


class GaussianLikelihood:
    """``ℓ_N(θ) = −½ Σ (Y_i − G(θ)(X_i))²`` for a point model."""

    def __init__(self, point_model, Y):
        self.pm = point_model
        self.Y = np.asarray(Y, dtype=float)
        if self.Y.shape != (point_model.n_points,):
            raise ValueError("response length does not match the design")

    @property
    def D(self) -> int:
        return self.pm.D

    @property
    def N(self) -> int:
        return self.Y.size

    def residual(self, theta, state=None):
        st = self.pm.state(theta) if state is None else state
        return self.Y - self.pm.values(st)

    def value(self, theta) -> float:
        r = self.residual(theta)
        return -0.5 * float(r @ r)

    def grad(self, theta) -> np.ndarray:
        return self.value_and_grad(theta)[1]

    def value_and_grad(self, theta):
        st = self.pm.state(theta)
        r = self.Y - self.pm.values(st)
        return -0.5 * float(r @ r), self.pm.vjp(st, r)

    def grad_directional(self, theta) -> np.ndarray:
        """``Jᵀr`` through the full Jacobian (D source solves); cross-check path."""
        st = self.pm.state(theta)
        r = self.Y - self.pm.values(st)
        return self.pm.jacobian(st).T @ r

    def hessian(self, theta) -> np.ndarray:
        """``∇²ℓ_N = −JᵀJ + Σ_i r_i ∇²G(X_i)``."""
        st = self.pm.state(theta)
        r = self.Y - self.pm.values(st)
        fields = None
        if isinstance(self.pm, PointForward):
            fields = self.pm.model.gradient_fields(st)
            J = self.pm.interp.matrix @ fields
        else:
            J = self.pm.jacobian(st)
        H = -J.T @ J + self.pm.residual_hessian(st, r, fields=fields)
        return 0.5 * (H + H.T)

    def sup_terms(self, theta) -> float:
        """``|ℓ_N| + ‖∇ℓ_N‖ + ‖∇²ℓ_N‖_op`` at θ."""
        value, grad = self.value_and_grad(theta)
        H = self.hessian(theta)
        return abs(value) + float(np.linalg.norm(grad)) + float(np.linalg.norm(H, 2))


@dataclass(frozen=True)
class PriorSpec:
    """Gaussian prior ``N(0, N_ref^{−d/(2α+d)} Λ_α^{−1})``."""

    alpha: float
    N_ref: float
    basis: Basis

    @property
    def D(self) -> int:
        return self.basis.D

    @property
    def scale(self) -> float:
        """``N_ref^{d/(2α+d)}``, the multiplier of ``Λ_α`` in the precision."""
        d = self.basis.dim
        return float(self.N_ref) ** (d / (2 * self.alpha + d))

    @property
    def precision_diag(self) -> np.ndarray:
        return self.scale * self.basis.eigenvalues**self.alpha

    @property
    def covariance_diag(self) -> np.ndarray:
        return 1.0 / self.precision_diag

    @property
    def delta_N(self) -> float:
        d = self.basis.dim
        return float(self.N_ref) ** (-self.alpha / (2 * self.alpha + d))

    def sample(self, rng, size=None) -> np.ndarray:
        shape = (self.D,) if size is None else (size, self.D)
        return rng.standard_normal(shape) * np.sqrt(self.covariance_diag)


def log_prior(prior: PriorSpec, theta) -> float:
    theta = np.asarray(theta, dtype=float)
    return -0.5 * float(np.sum(prior.precision_diag * theta**2))


def grad_log_prior(prior: PriorSpec, theta) -> np.ndarray:
    return -prior.precision_diag * np.asarray(theta, dtype=float)


class Posterior:
    """Unnormalized log posterior ``ℓ_N + log π``."""

    def __init__(self, likelihood: GaussianLikelihood, prior: PriorSpec | None = None,
                 precision_diag=None):
        self.likelihood = likelihood
        self.prior = prior
        if precision_diag is None:
            precision_diag = prior.precision_diag
        self.precision_diag = np.asarray(precision_diag, dtype=float)

    @property
    def D(self) -> int:
        return self.likelihood.D

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return self.likelihood.value(theta) - 0.5 * float(np.sum(self.precision_diag * theta**2))

    def grad(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.likelihood.grad(theta) - self.precision_diag * theta

    def value_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        v, g = self.likelihood.value_and_grad(theta)
        return (v - 0.5 * float(np.sum(self.precision_diag * theta**2)),
                g - self.precision_diag * theta)

    def hessian(self, theta) -> np.ndarray:
        return self.likelihood.hessian(theta) - np.diag(self.precision_diag)


@lru_cache(maxsize=16)
def _cached_likelihood(model, dataset) -> GaussianLikelihood:
    return GaussianLikelihood(model.at_points(dataset.X), dataset.Y)


def likelihood_for(model, dataset: Dataset) -> GaussianLikelihood:
    """Bind a model (forward or linear point model) to a dataset."""
    if isinstance(model, ForwardModel):
        return _cached_likelihood(model, dataset)
    return GaussianLikelihood(model, dataset.Y)


def log_likelihood(model, dataset: Dataset, theta) -> float:
    return likelihood_for(model, dataset).value(theta)


def grad_log_likelihood(model, dataset: Dataset, theta) -> np.ndarray:
    return likelihood_for(model, dataset).grad(theta)


def hessian_log_likelihood(model, dataset: Dataset, theta) -> np.ndarray:
    return likelihood_for(model, dataset).hessian(theta)


def log_posterior_unnormalized(model, dataset: Dataset, prior: PriorSpec, theta) -> float:
    return likelihood_for(model, dataset).value(theta) + log_prior(prior, theta)


def grad_log_posterior(model, dataset: Dataset, prior: PriorSpec, theta) -> np.ndarray:
    return likelihood_for(model, dataset).grad(theta) + grad_log_prior(prior, theta)
