"""Wasserstein estimators, curvature probes, oracles and bound certificates.

Constants that the theory leaves unspecified (``c1``, ``c2`` and the
curvature scale ``c_min``) are inputs with default 1; reports label them as
calibration values.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.optimize import linear_sum_assignment

from .errors import BoxTooSmall, EmptySample, SingularSystem
from .likelihood import likelihood_for

ASSIGNMENT_MAX = 512


# ---------------------------------------------------------------------------
# Wasserstein distances


def w2_1d(samples_a, samples_b) -> float:
    """Empirical ``W₂`` on the line by pairing order statistics.

    Samples of different sizes are compared through their quantile
    functions on the merged grid of probability levels, which is the exact
    ``W₂`` between the two empirical measures.
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise EmptySample("both samples must be nonempty")
    if a.size == b.size:
        return float(np.sqrt(np.mean((a - b) ** 2)))
    levels = np.union1d(np.arange(1, a.size + 1) / a.size, np.arange(1, b.size + 1) / b.size)
    weights = np.diff(np.concatenate([[0.0], levels]))
    # quantile at the right end of each level cell
    qa = a[np.minimum(np.ceil(levels * a.size - 1e-9).astype(int) - 1, a.size - 1)]
    qb = b[np.minimum(np.ceil(levels * b.size - 1e-9).astype(int) - 1, b.size - 1)]
    return float(np.sqrt(np.sum(weights * (qa - qb) ** 2)))


def w2_gaussian_proxy(mean_a, cov_diag_a, mean_b, cov_diag_b) -> float:
    """``sqrt(‖μ_a − μ_b‖² + Σ_k (√v_{a,k} − √v_{b,k})²)``."""
    mean_a, mean_b = np.asarray(mean_a, dtype=float), np.asarray(mean_b, dtype=float)
    va, vb = np.asarray(cov_diag_a, dtype=float), np.asarray(cov_diag_b, dtype=float)
    if np.any(va < 0) or np.any(vb < 0):
        raise ValueError("variances must be nonnegative")
    return float(np.sqrt(np.sum((mean_a - mean_b) ** 2) + np.sum((np.sqrt(va) - np.sqrt(vb)) ** 2)))


def w2_empirical(samples_a, samples_b) -> float:
    """Exact ``W₂`` between two equal-size point clouds (``n ≤ 512``)."""
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise EmptySample("both samples must be nonempty")
    if a.shape != b.shape:
        raise ValueError("samples must have the same shape")
    if a.shape[0] > ASSIGNMENT_MAX:
        raise ValueError(f"assignment solve limited to {ASSIGNMENT_MAX} points")
    cost = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].mean()))


def ula_gaussian_moments(precision, target_mean, mean0, cov0, gamma, n_steps):
    """Exact mean and covariance of ULA on ``N(μ, H⁻¹)`` for ``n_steps`` steps.

    ``m_{k+1} − μ = (I − γH)(m_k − μ)`` and
    ``C_{k+1} = (I − γH) C_k (I − γH) + 2γI``.  Returns arrays of shape
    ``(n_steps + 1, D)`` and ``(n_steps + 1, D, D)``.
    """
    H = np.atleast_2d(np.asarray(precision, dtype=float))
    mu = np.asarray(target_mean, dtype=float)
    T = np.eye(H.shape[0]) - gamma * H
    means = [np.asarray(mean0, dtype=float)]
    covs = [np.atleast_2d(np.asarray(cov0, dtype=float))]
    for _ in range(n_steps):
        means.append(mu + T @ (means[-1] - mu))
        covs.append(T @ covs[-1] @ T.T + 2.0 * gamma * np.eye(H.shape[0]))
    return np.array(means), np.array(covs)


def fit_log_rate(values, start: int = 0, stop: int | None = None) -> float:
    """Per-step geometric rate ``exp(slope)`` of ``log values`` by least squares."""
    v = np.asarray(values, dtype=float)[start:stop]
    k = np.arange(v.size)
    slope = np.polyfit(k, np.log(v), 1)[0]
    return float(np.exp(slope))


# ---------------------------------------------------------------------------
# curvature


@dataclass
class CurvatureReport:
    D: int
    N: int
    lambda_min_hat: float
    lambda_max_hat: float
    c_min_hat: float
    c_max_hat: float
    n_probe: int
    seeds: list = field(default_factory=list)
    note: str = "c_max_hat is the sup of (|l| + |grad l| + |hess l|_op)/N over probes"

    def to_dict(self) -> dict:
        return asdict(self)


def ball_points(center, radius, n, rng) -> np.ndarray:
    """``n`` points uniform in the Euclidean ball."""
    center = np.asarray(center, dtype=float)
    D = center.size
    z = rng.standard_normal((n, D))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / D)
    return center + r * z


def estimate_curvature(model, dataset, theta_center, radius: float, n_probe: int,
                       seed: int = 0) -> CurvatureReport:
    """Extreme eigenvalues of ``−∇²ℓ_N`` over the center and ``n_probe`` ball points."""
    if n_probe < 1:
        raise ValueError("n_probe must be >= 1")
    lik = likelihood_for(model, dataset)
    rng = np.random.default_rng(seed)
    theta_center = np.asarray(theta_center, dtype=float)
    probes = np.vstack([theta_center, ball_points(theta_center, radius, n_probe, rng)])
    lo, hi, sup = np.inf, -np.inf, 0.0
    for theta in probes:
        value, grad = lik.value_and_grad(theta)
        H = -lik.hessian(theta)
        ev = linalg.eigvalsh(H)
        lo, hi = min(lo, ev[0]), max(hi, ev[-1])
        sup = max(sup, abs(value) + float(np.linalg.norm(grad)) + float(np.abs(ev).max()))
    N = lik.N
    return CurvatureReport(D=theta_center.size, N=N, lambda_min_hat=float(lo),
                           lambda_max_hat=float(hi), c_min_hat=float(lo) / N,
                           c_max_hat=sup / N, n_probe=n_probe, seeds=[seed])


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)),
                            np.log(np.asarray(y, dtype=float)), 1)[0])


# ---------------------------------------------------------------------------
# bound certificate


@dataclass
class BoundCertificate:
    m: float
    Lambda: float
    b_gamma: float
    B_gamma: float
    tau: float
    k_mix_estimate: float
    rho: float
    log_rho: float
    gamma: float
    gamma_certified: bool
    constants: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["k_mix_estimate"] = _json_number(self.k_mix_estimate)
        return out


def _json_number(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _prior_extremes(N, D, d, alpha):
    from .spectral import mode_pairs

    modes = mode_pairs(d, D)
    lam = np.array([0.5 * np.pi**2 * sum(j * j for j in m) for m in modes])
    scale = float(N) ** (d / (2 * alpha + d))
    return scale * lam.min() ** alpha, scale * lam.max() ** alpha


def big_b(gamma, N, D, d, alpha, c1: float = 1.0) -> float:
    """``c1[γD^{(d+24)/d}(log N)⁶ + γ²ND^{(d+44)/d}(log N)¹²] + exp(−N^{d/(2α+d)})``."""
    L = math.log(N)
    return (c1 * (gamma * D ** ((d + 24.0) / d) * L**6
                  + gamma**2 * N * D ** ((d + 44.0) / d) * L**12)
            + math.exp(-float(N) ** (d / (2.0 * alpha + d))))


def small_b(gamma, D, m, Lam, c1: float = 1.0) -> float:
    """``c1[γDΛ²/m² + γ²DΛ⁴/m³]``."""
    return c1 * (gamma * D * Lam**2 / m**2 + gamma**2 * D * Lam**4 / m**3)


def bound_certificate(N, D, d, alpha, K, M=None, gamma=1e-6, rho=None, R=1.0,
                      c_min=None, eta=None, c1: float = 1.0, c2: float = 1.0) -> BoundCertificate:
    """Evaluate the Wasserstein bound for ULA on the surrogate posterior.

    Parameters
    ----------
    N, D, d, alpha : problem sizes and prior regularity (prior precision
        ``N^{d/(2α+d)} Λ_α`` on ``D`` modes).
    K : penalty weight of the surrogate.
    M : matrix of the ellipsoid norm (identity when ``None``).
    gamma : step size.
    rho : target accuracy of the mixing term; defaults to
        ``exp(−N^{d/(2α+d)})``, carried in log form because it underflows.
    R : radius entering ``τ``.
    c_min : curvature scale; defaults to ``D^{−4/d}``.
    eta : surrogate radius; defaults to ``D^{−4/d}/log N``.
    c1, c2 : unspecified universal constants (calibration, default 1).

    Notes
    -----
    ``m = Nc_min/2 + λ_min(Σ⁻¹)``, ``Λ = 7Kλ_max(M) + λ_max(Σ⁻¹)``,
    ``τ = c2 κ(Σ)(1 + η²/λ_min(M) + R²)`` and ``k_mix`` is the smallest
    ``k`` with ``4(τ + D/m)(1 − γm/2)^k ≤ ρ``.
    """
    if M is None:
        mmin = mmax = 1.0
    else:
        ev = linalg.eigvalsh(np.asarray(M, dtype=float))
        mmin, mmax = float(ev[0]), float(ev[-1])
    if c_min is None:
        c_min = D ** (-4.0 / d)
    if eta is None:
        eta = D ** (-4.0 / d) / math.log(N)
    pmin, pmax = _prior_extremes(N, D, d, alpha)
    m = N * c_min / 2.0 + pmin
    Lam = 7.0 * K * mmax + pmax
    tau = c2 * (pmax / pmin) * (1.0 + eta**2 / mmin + R**2)
    if rho is None:
        log_rho = -float(N) ** (d / (2.0 * alpha + d))
        rho_val = math.exp(log_rho)
    else:
        rho_val = float(rho)
        log_rho = math.log(rho_val)
    log_lead = math.log(4.0 * (tau + D / m))
    contraction = gamma * m / 2.0
    if log_lead <= log_rho:
        k_mix = 0.0
    elif contraction <= 0.0:
        k_mix = math.inf
    elif contraction >= 1.0:
        k_mix = math.nan
    else:
        k_mix = float(math.ceil((log_rho - log_lead) / math.log1p(-contraction)))
    return BoundCertificate(
        m=m, Lambda=Lam, b_gamma=small_b(gamma, D, m, Lam, c1),
        B_gamma=big_b(gamma, N, D, d, alpha, c1), tau=tau, k_mix_estimate=k_mix,
        rho=rho_val, log_rho=log_rho, gamma=gamma, gamma_certified=gamma <= 1.0 / Lam,
        constants={"c1": c1, "c2": c2, "c_min": c_min, "eta": eta,
                   "label": "calibration, not a derived value"})


# ---------------------------------------------------------------------------
# oracles


def conjugate_oracle(Phi, Y, prior_cov=None, prior_precision=None):
    """Posterior mean and covariance of ``Y = Φθ + ε``, ``ε ~ N(0, I)``, ``θ ~ N(0, Σ)``.

    The prior is given either as a covariance (vector = diagonal) or as a
    precision.  Returns ``((ΦᵀΦ + Σ⁻¹)⁻¹ΦᵀY, (ΦᵀΦ + Σ⁻¹)⁻¹)``.
    """
    Phi = np.asarray(Phi, dtype=float)
    if Phi.ndim == 1:
        Phi = Phi[:, None]
    Y = np.asarray(Y, dtype=float)
    if prior_precision is None:
        if prior_cov is None:
            raise ValueError("give prior_cov or prior_precision")
        C = np.asarray(prior_cov, dtype=float)
        P = np.diag(1.0 / C) if C.ndim <= 1 else linalg.inv(C)
    else:
        P = np.asarray(prior_precision, dtype=float)
        P = np.diag(np.atleast_1d(P)) if P.ndim <= 1 else P
    A = Phi.T @ Phi + P
    try:
        c, low = linalg.cho_factor(A)
    except linalg.LinAlgError as exc:
        raise SingularSystem("posterior precision is not positive definite") from exc
    mean = linalg.cho_solve((c, low), Phi.T @ Y)
    cov = linalg.cho_solve((c, low), np.eye(A.shape[0]))
    return mean, 0.5 * (cov + cov.T)


@dataclass
class QuadratureResult:
    mean: np.ndarray
    error_estimate: np.ndarray
    nodes: int
    box: np.ndarray
    boundary_mass: float


def _log_density_grid(log_density, axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in mesh])
    vals = np.array([log_density(p) for p in pts])
    return pts, vals.reshape(mesh[0].shape)


def _trapezoid_mean(axes, logv):
    w = [np.full(a.size, a[1] - a[0]) for a in axes]
    for wi in w:
        wi[[0, -1]] *= 0.5
    W = w[0]
    for wi in w[1:]:
        W = np.multiply.outer(W, wi)
    dens = np.exp(logv - logv.max()) * W
    Z = dens.sum()
    mesh = np.meshgrid(*axes, indexing="ij")
    mean = np.array([(g * dens).sum() / Z for g in mesh])
    var = np.array([((g - mu) ** 2 * dens).sum() / Z for g, mu in zip(mesh, mean)])
    edge = np.zeros(dens.shape, dtype=bool)
    for ax in range(dens.ndim):
        idx = [slice(None)] * dens.ndim
        idx[ax] = [0, -1]
        edge[tuple(idx)] = True
    return mean, var, float(dens[edge].sum() / Z)


def quadrature_posterior_mean(model, dataset, prior, nodes: int = 61, box=None,
                              tol: float = 1e-4, max_nodes: int = 1921,
                              boundary_tol: float = 1e-8) -> QuadratureResult:
    """Posterior mean by tensor trapezoid quadrature for ``D ≤ 3``.

    ``box`` is a ``(D, 2)`` array of bounds; by default ``±8`` prior standard
    deviations around 0.  The grid is refined by halving the spacing
    (nested nodes) until successive means agree to
    ``tol · max(|mean_k|, sd_k)`` in every coordinate.

    Raises
    ------
    BoxTooSmall
        If the density mass on the box boundary exceeds ``boundary_tol``.
    """
    from .likelihood import Posterior

    D = model.D
    if D > 3:
        raise ValueError("quadrature oracle is limited to D <= 3")
    if nodes < 61:
        raise ValueError("at least 61 nodes per axis are required")
    post = Posterior(likelihood_for(model, dataset), prior)
    if box is None:
        sd = np.sqrt(prior.covariance_diag)
        box = np.column_stack([-8.0 * sd, 8.0 * sd])
    box = np.asarray(box, dtype=float).reshape(D, 2)
    n = nodes
    previous = None
    while True:
        axes = [np.linspace(lo, hi, n) for lo, hi in box]
        _, logv = _log_density_grid(post.value, axes)
        mean, var, edge = _trapezoid_mean(axes, logv)
        if edge > boundary_tol:
            raise BoxTooSmall(f"boundary mass fraction {edge:.2e} exceeds {boundary_tol:.0e}")
        if previous is not None:
            err = np.abs(mean - previous)
            if np.all(err <= tol * np.maximum(np.abs(mean), np.sqrt(var))):
                return QuadratureResult(mean, err, n, box, edge)
        if 2 * n - 1 > max_nodes:
            err = np.full(D, np.inf) if previous is None else np.abs(mean - previous)
            return QuadratureResult(mean, err, n, box, edge)
        previous = mean
        n = 2 * n - 1
