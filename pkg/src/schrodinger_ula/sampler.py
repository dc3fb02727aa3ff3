"""Unadjusted Langevin chain, ergodic averages and step-size formulas."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyWindow, NonFiniteIterate

RNG_NAME = "numpy.random.Generator(PCG64)"
MAX_STORED_ENTRIES = 10**8
NOISE_BLOCK = 4096


@dataclass
class ChainConfig:
    gamma: float
    J: int
    J_in: int = 0
    seed: int = 0
    precondition: np.ndarray | None = None
    thin: int = 1
    store: bool | None = None

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if self.J < 1 or self.J_in < 0:
            raise ValueError("need J >= 1 and J_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.precondition is not None:
            self.precondition = np.asarray(self.precondition, dtype=float)
            if np.any(self.precondition <= 0):
                raise ValueError("preconditioner entries must be positive")


@dataclass
class ChainState:
    theta: np.ndarray
    k: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    sum_theta: np.ndarray | None = None
    sum_sq: np.ndarray | None = None
    n_accumulated: int = 0
    exits: int = 0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.sum_theta is None:
            self.sum_theta = np.zeros_like(self.theta)
        if self.sum_sq is None:
            self.sum_sq = np.zeros_like(self.theta)

    def accumulate(self):
        self.sum_theta += self.theta
        self.sum_sq += self.theta**2
        self.n_accumulated += 1

    @property
    def mean(self) -> np.ndarray:
        if self.n_accumulated == 0:
            raise EmptyWindow("no iterates accumulated")
        return self.sum_theta / self.n_accumulated

    @property
    def variance(self) -> np.ndarray:
        m = self.mean
        return self.sum_sq / self.n_accumulated - m**2


def ula_step(state: ChainState, grad_log_target, gamma: float, rng=None,
             precondition=None) -> ChainState:
    """One Euler–Maruyama step ``θ + γ∇log π(θ) + √(2γ) ξ``.

    With a diagonal preconditioner ``A`` the step is taken in the
    coordinates ``ψ = A⁻¹(θ − θ_init)``, i.e. ``θ + γA²∇ + √(2γ)Aξ``.
    Works on a single iterate or a batch of replicas (leading axis).
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    rng = state.rng if rng is None else rng
    xi = rng.standard_normal(state.theta.shape)
    # overflow is detected explicitly below, so the FP warning is noise
    with np.errstate(over="ignore", invalid="ignore"):
        drift = grad_log_target(state.theta)
        if precondition is None:
            new = state.theta + gamma * drift + math.sqrt(2.0 * gamma) * xi
        else:
            new = state.theta + gamma * precondition**2 * drift + math.sqrt(2.0 * gamma) * precondition * xi
    if not np.all(np.isfinite(new)):
        raise NonFiniteIterate(f"non-finite iterate at step {state.k + 1}", iteration=state.k + 1)
    return ChainState(new, state.k + 1, rng, state.sum_theta, state.sum_sq,
                      state.n_accumulated, state.exits)


@dataclass
class ChainResult:
    samples: np.ndarray | None
    state: ChainState
    exit_fraction: float
    wall_time: float
    thinned: np.ndarray | None = None
    rng_name: str = RNG_NAME

    @property
    def mean(self) -> np.ndarray:
        return self.state.mean

    def manifest(self, config: ChainConfig, mode: str = "practical") -> dict:
        return {
            "seed": config.seed,
            "gamma": config.gamma,
            "J_in": config.J_in,
            "J": config.J,
            "exit_fraction": self.exit_fraction,
            "wall_time": self.wall_time,
            "parameter_mode": mode,
            "rng": self.rng_name,
            "preconditioned": config.precondition is not None,
        }


def run_langevin(grad_log_target, theta_init, config: ChainConfig,
                 ball_radius: float | None = None) -> ChainResult:
    """Run ``J_in + J`` ULA steps from ``theta_init``.

    The J post-burn-in iterates are stored when ``J·D ≤ 10⁸`` (or
    ``config.store``), otherwise only running moments and every
    ``config.thin``-th iterate are kept.  ``ball_radius`` enables counting
    how often the chain sits outside the Euclidean ball around the start.
    """
    theta_init = np.asarray(theta_init, dtype=float)
    D = theta_init.size
    total = config.J_in + config.J
    store = config.store if config.store is not None else config.J * D <= MAX_STORED_ENTRIES
    samples = np.empty((config.J, D)) if store else None
    thinned = [] if not store else None
    rng = np.random.default_rng(config.seed)
    gamma = config.gamma
    noise_scale = math.sqrt(2.0 * gamma)
    A = config.precondition
    drift_scale = gamma if A is None else gamma * A**2
    if A is not None:
        noise_scale = noise_scale * A
    theta = theta_init.copy()
    sum_theta = np.zeros(D)
    sum_sq = np.zeros(D)
    exits = 0
    r2 = None if ball_radius is None else float(ball_radius) ** 2
    isfinite = math.isfinite
    start = time.perf_counter()
    k = 0
    # overflow is detected explicitly, so numpy FP warnings are noise here
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            while k < total:
                block = rng.standard_normal((min(NOISE_BLOCK, total - k), D))
                for xi in block:
                    new = theta + drift_scale * grad_log_target(theta) + noise_scale * xi
                    k += 1
                    # a scalar check is much cheaper than np.isfinite on every step;
                    # an overflowing sum of finite entries is confirmed elementwise
                    if not isfinite(new.sum()) and not np.all(np.isfinite(new)):
                        raise NonFiniteIterate(f"non-finite iterate at step {k}", iteration=k)
                    theta = new
                    if r2 is not None:
                        diff = theta - theta_init
                        if diff @ diff > r2:
                            exits += 1
                    j = k - config.J_in - 1
                    if j >= 0:
                        if store:
                            samples[j] = theta
                        else:
                            sum_theta += theta
                            sum_sq += theta * theta
                            if j % config.thin == 0:
                                thinned.append(theta.copy())
        except NonFiniteIterate as exc:
            done = max(0, k - config.J_in - 1)
            exc.partial = {
                "samples": None if samples is None else samples[:done].copy(),
                "last_finite": theta.copy(),
                "steps": k,
                "exits": exits,
            }
            raise
    if store:
        sum_theta = samples.sum(axis=0)
        sum_sq = np.einsum("ij,ij->j", samples, samples)
    wall = time.perf_counter() - start
    state = ChainState(theta, k, rng, sum_theta, sum_sq, config.J, exits)
    return ChainResult(
        samples=samples,
        state=state,
        exit_fraction=exits / total if ball_radius is not None else float("nan"),
        wall_time=wall,
        thinned=None if thinned is None else np.array(thinned),
    )


def run_chain(model, dataset, prior, spec, config: ChainConfig) -> ChainResult:
    """Sample the surrogate posterior starting from ``spec.theta_init``."""
    from .likelihood import likelihood_for
    from .surrogate import SurrogateLikelihood, SurrogatePosterior

    target = SurrogatePosterior(SurrogateLikelihood(likelihood_for(model, dataset), spec),
                                prior.precision_diag)
    return run_langevin(target.grad, spec.theta_init, config, ball_radius=spec.ball_radius)


def _window(samples, J_in: int, J: int):
    samples = np.asarray(samples, dtype=float)
    if J == 0:
        raise EmptyWindow("empty averaging window")
    if J_in < 0 or J_in + J > samples.shape[0]:
        raise IndexError("averaging window exceeds the available samples")
    return samples[J_in:J_in + J]


def ergodic_average(samples, H, J_in: int, J: int) -> float:
    """``(1/J) Σ_{k=J_in+1}^{J_in+J} H(ϑ_k)``; row ``k−1`` of ``samples`` is ``ϑ_k``."""
    window = _window(samples, J_in, J)
    return float(np.mean([H(row) for row in window]))


def posterior_mean_estimate(samples, J_in: int, J: int) -> np.ndarray:
    return _window(samples, J_in, J).mean(axis=0)


def burn_in_lower_bound(N, D, d, gamma, B_gamma) -> int:
    """``ceil( log N / (γ N D^{−4/d}) · log(D + 1/B(γ)) )``."""
    value = math.log(N) / (gamma * N * D ** (-4.0 / d)) * math.log(D + 1.0 / B_gamma)
    return int(math.ceil(value))


def gamma_epsilon(N, D, d, epsilon_target) -> float:
    """Step size achieving precision ``ε`` for the posterior mean."""
    if epsilon_target <= 0:
        raise ValueError("epsilon_target must be positive")
    if N < 3:
        raise ValueError("N must be at least 3")
    eps = epsilon_target
    terms = (
        eps**2 / D ** ((d + 24.0) / d),
        eps / (math.sqrt(N) * D ** ((22.0 + d / 2.0) / d)),
        1.0 / (N * D ** (8.0 / d)),
    )
    return min(terms) * math.log(N) ** -7
