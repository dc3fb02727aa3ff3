"""Link function and the forward map θ ↦ u_{f_θ} with its derivatives.

The pipeline is ``F_θ = Ψ(θ)``, ``f_θ = Φ∘F_θ``, ``u = G(f_θ)``.  Derivatives
in θ come from source solves with the already factorized operator:

* ``vᵀ∇G = V_f[u Φ'(F) Ψv]``
* ``v₁ᵀ∇²G v₂ = V_f[u Φ''(F) Ψv₁ Ψv₂] + V_f[Φ'(F) Ψv₁ ∇G·v₂] + (1 ↔ 2)``

These are the exact derivatives of the *discrete* map, so finite-difference
checks agree to rounding error rather than discretization error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InverseDomain
from .pde import BoundaryData, GridFunction, Interpolator, SchrodingerOperator
from .spectral import Basis


@dataclass(frozen=True)
class LinkFunction:
    """Shifted softplus ``Φ(t) = K_min + log(1 + eᵗ)``."""

    K_min: float = 0.0

    def __call__(self, t):
        return self.K_min + np.logaddexp(0.0, t)

    def d1(self, t):
        return expit(t)

    def d2(self, t):
        s = expit(t)
        return s * (1.0 - s)

    def d3(self, t):
        s = expit(t)
        return s * (1.0 - s) * (1.0 - 2.0 * s)

    def inverse(self, y):
        y = np.asarray(y, dtype=float)
        s = y - self.K_min
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise InverseDomain(f"link inverse needs values above K_min={self.K_min}")
        # log(e^s − 1) = s + log(1 − e^{−s}), stable for large s
        out = s + np.log(-np.expm1(-s))
        return float(out) if out.ndim == 0 else out


def link_apply(link: LinkFunction, t):
    return link(t)


def link_d1(link: LinkFunction, t):
    return link.d1(t)


def link_d2(link: LinkFunction, t):
    return link.d2(t)


def link_inverse(link: LinkFunction, y):
    return link.inverse(y)


@dataclass
class ForwardState:
    """Everything computed at one θ; reused by all derivative evaluations."""

    theta: np.ndarray
    F: np.ndarray
    f: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    op: SchrodingerOperator
    u: np.ndarray


@dataclass(frozen=True)
class ForwardModel:
    basis: Basis
    link: LinkFunction = field(default_factory=LinkFunction)
    boundary: BoundaryData = field(default_factory=lambda: BoundaryData.constant(1.0))

    def __post_init__(self):
        if self.boundary.min <= 0:
            raise ValueError("boundary datum g must be positive")
        if self.basis.dim == 2 and self.boundary.kind != "constant":
            raise ValueError("2D models support constant boundary data only")

    @property
    def grid(self):
        return self.basis.grid

    @property
    def D(self) -> int:
        return self.basis.D

    def with_dimension(self, D: int) -> "ForwardModel":
        return ForwardModel(self.basis.with_dimension(D), self.link, self.boundary)

    def state(self, theta) -> ForwardState:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.D,):
            raise ValueError(f"theta must have length {self.D}, got shape {theta.shape}")
        F = self.basis.matrix @ theta
        f = self.link(F)
        op = SchrodingerOperator(f, self.grid)
        u = op.solve_boundary(self.boundary)
        return ForwardState(theta, F, f, self.link.d1(F), self.link.d2(F), op, u)

    def forward(self, theta) -> GridFunction:
        return GridFunction(self.grid, self.state(theta).u, self.boundary)

    def gradient_fields(self, state: ForwardState) -> np.ndarray:
        """Columns ``∂G/∂θ_k`` on the grid, shape ``(grid.size, D)``."""
        return state.op.solve_source((state.u * state.dphi)[:, None] * self.basis.matrix)

    def gradient_apply(self, theta, v) -> GridFunction:
        st = theta if isinstance(theta, ForwardState) else self.state(theta)
        h = self.basis.matrix @ np.asarray(v, dtype=float)
        return GridFunction(self.grid, st.op.solve_source(st.u * st.dphi * h))

    def hessian_apply(self, theta, v1, v2) -> GridFunction:
        st = theta if isinstance(theta, ForwardState) else self.state(theta)
        h1 = self.basis.matrix @ np.asarray(v1, dtype=float)
        h2 = self.basis.matrix @ np.asarray(v2, dtype=float)
        g1 = st.op.solve_source(st.u * st.dphi * h1)
        g2 = st.op.solve_source(st.u * st.dphi * h2)
        rhs = st.u * st.d2phi * h1 * h2 + st.dphi * h1 * g2 + st.dphi * h2 * g1
        return GridFunction(self.grid, st.op.solve_source(rhs))

    def at_points(self, points) -> "PointForward":
        return PointForward(self, points)


def forward(model: ForwardModel, theta) -> GridFunction:
    return model.forward(theta)


def forward_gradient_apply(model: ForwardModel, theta, v) -> GridFunction:
    return model.gradient_apply(theta, v)


def forward_hessian_apply(model: ForwardModel, theta, v1, v2) -> GridFunction:
    return model.hessian_apply(theta, v1, v2)


class PointForward:
    """The forward map restricted to fixed design points.

    Exposes what a Gaussian likelihood needs: values, Jacobian, the
    vector-Jacobian product ``Jᵀr`` and the residual-weighted Hessian
    ``Σ_i r_i ∇²G(θ)(X_i)``.  The last two use one adjoint solve each:
    with ``s = Pᵀr`` and ``z = V_f[s]``, symmetry of ``V_f`` turns every
    ``Σ_i r_i V_f[ψ](X_i)`` into the node sum ``zᵀψ``.
    """

    def __init__(self, model: ForwardModel, points):
        self.model = model
        self.interp = Interpolator(model.grid, points)
        self.n_points = self.interp.points.shape[0]
        self._offset = self.interp.offset(model.boundary)

    @property
    def D(self) -> int:
        return self.model.D

    def state(self, theta) -> ForwardState:
        return self.model.state(theta)

    def values(self, state: ForwardState) -> np.ndarray:
        return self.interp.matrix @ state.u + self._offset

    def jacobian(self, state: ForwardState) -> np.ndarray:
        return self.interp.matrix @ self.model.gradient_fields(state)

    def adjoint(self, state: ForwardState, r) -> np.ndarray:
        return state.op.solve_source(self.interp.matrix_t @ np.asarray(r, dtype=float))

    def vjp(self, state: ForwardState, r, z=None) -> np.ndarray:
        """``Σ_i r_i ∇G(θ)(X_i)``."""
        if z is None:
            z = self.adjoint(state, r)
        return self.model.basis.matrix.T @ (z * state.u * state.dphi)

    def residual_hessian(self, state: ForwardState, r, fields=None, z=None) -> np.ndarray:
        """``Σ_i r_i ∇²G(θ)(X_i)`` as a symmetric ``D×D`` matrix."""
        E = self.model.basis.matrix
        if z is None:
            z = self.adjoint(state, r)
        if fields is None:
            fields = self.model.gradient_fields(state)
        first = E.T @ ((z * state.u * state.d2phi)[:, None] * E)
        cross = E.T @ ((z * state.dphi)[:, None] * fields)
        out = first + cross + cross.T
        return 0.5 * (out + out.T)
