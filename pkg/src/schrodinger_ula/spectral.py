"""Dirichlet eigenbasis of Δ/2 on the unit interval and square.

With the Δ/2 convention the 1D eigenpairs are ``e_k(x) = √2 sin(kπx)`` and
``λ_k = (kπ)²/2``.  In 2D the basis consists of products of 1D sines indexed
by pairs ``(j, l)``, sorted by ``j² + l²`` with ties broken lexicographically.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .pde import Grid, GridFunction


def mode_pairs(dim: int, count: int) -> list[tuple[int, ...]]:
    """The first ``count`` modes in eigenvalue order."""
    if dim == 1:
        return [(k,) for k in range(1, count + 1)]
    # every pair with j² + l² ≤ r² is enumerated; r chosen so at least `count` exist
    r = int(np.ceil(np.sqrt(4 * count / np.pi))) + 2
    while True:
        pairs = [(j, l) for j in range(1, r + 1) for l in range(1, r + 1)]
        pairs.sort(key=lambda p: (p[0] ** 2 + p[1] ** 2, p))
        # pairs beyond radius r may be missing, so only trust those inside it
        trusted = [p for p in pairs if p[0] ** 2 + p[1] ** 2 <= r**2]
        if len(trusted) >= count:
            return trusted[:count]
        r *= 2


def eigenvalue(k: int, dim: int = 1) -> float:
    """``λ_k`` of −Δ/2 with Dirichlet conditions (k counted from 1)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    mode = mode_pairs(dim, k)[-1]
    return 0.5 * np.pi**2 * sum(j * j for j in mode)


def eigenfunction(mode: tuple[int, ...]):
    """Analytic eigenfunction for a mode tuple, evaluated on ``(n, dim)`` points."""

    def e(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.ones(x.shape[0])
        for axis, j in enumerate(mode):
            out = out * np.sqrt(2.0) * np.sin(j * np.pi * x[:, axis])
        return out

    return e


def eigenpair(k: int, dim: int = 1):
    """Return ``(λ_k, e_k)`` with ``e_k`` a callable on points."""
    mode = mode_pairs(dim, k)[-1]
    return 0.5 * np.pi**2 * sum(j * j for j in mode), eigenfunction(mode)


@dataclass(frozen=True)
class Basis:
    """The first ``D`` eigenfunctions sampled on ``grid``."""

    grid: Grid
    D: int

    def __post_init__(self):
        if self.D < 1:
            raise ValueError("D must be >= 1")

    @property
    def dim(self) -> int:
        return self.grid.dim

    @cached_property
    def modes(self) -> list[tuple[int, ...]]:
        return mode_pairs(self.dim, self.D)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.array([0.5 * np.pi**2 * sum(j * j for j in m) for m in self.modes])

    @cached_property
    def matrix(self) -> np.ndarray:
        """``E[i, k] = e_k(node_i)``, shape ``(grid.size, D)``."""
        axis = self.grid.axis
        if self.dim == 1:
            k = np.arange(1, self.D + 1)
            return np.sqrt(2.0) * np.sin(np.pi * np.outer(axis, k))
        cols = []
        for j, l in self.modes:
            sx = np.sqrt(2.0) * np.sin(j * np.pi * axis)
            sy = np.sqrt(2.0) * np.sin(l * np.pi * axis)
            cols.append(np.outer(sx, sy).ravel())
        return np.column_stack(cols)

    def with_dimension(self, D: int) -> "Basis":
        return Basis(self.grid, D)

    def evaluate(self, theta, points) -> np.ndarray:
        """Exact ``F_θ`` at arbitrary points (no grid involved)."""
        theta = np.asarray(theta, dtype=float)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dim == 1 and pts.shape[1] != 1:
            pts = pts.reshape(-1, 1)
        out = np.zeros(pts.shape[0])
        for coef, mode in zip(theta, self.modes):
            out += coef * eigenfunction(mode)(pts)
        return out


def synthesize(theta, basis: Basis) -> GridFunction:
    """``F_θ = Σ θ_k e_k`` on the basis grid (zero on the boundary)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.D,):
        raise ValueError(f"theta must have length {basis.D}")
    return GridFunction(basis.grid, basis.matrix @ theta)


def project(F, basis: Basis, D: int | None = None) -> np.ndarray:
    """First ``D`` coefficients ``⟨F, e_k⟩`` by trapezoidal quadrature.

    Boundary nodes carry zero weight because every ``e_k`` vanishes there.
    """
    values = np.asarray(F.values if isinstance(F, GridFunction) else F, dtype=float)
    b = basis if D is None or D == basis.D else basis.with_dimension(D)
    return basis.grid.cell_volume * (b.matrix.T @ values)


def h_alpha_norm(theta, basis: Basis, alpha: float) -> float:
    """``sqrt(Σ λ_k^α θ_k²)``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    theta = np.asarray(theta, dtype=float)
    lam = basis.eigenvalues[: theta.size]
    return float(np.sqrt(np.sum(lam**alpha * theta**2)))


def lambda_alpha_matrix(basis: Basis, alpha: float) -> np.ndarray:
    """``diag(λ_1^α, …, λ_D^α)``."""
    return np.diag(basis.eigenvalues**alpha)
