"""Finite-difference solvers for the Dirichlet Schrödinger problem.

Two problems are solved on the unit interval or unit square::

    ½Δu − f u = 0   in O,   u = g on ∂O      (solve_schrodinger)
    ½Δw − f w = ψ   in O,   w = 0 on ∂O      (solve_source, w = V_f[ψ])

Both share the matrix ``B = −(½L_h − diag f)`` where ``L_h`` is the 3-point
(1D) or 5-point (2D) Laplacian on the interior nodes.  For ``f ≥ 0`` the
matrix is a symmetric M-matrix, so the discrete maximum principle holds and
``V_f`` is self-adjoint in the node inner product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.linalg import cg, splu

from .errors import NonPositivePotential, OutOfDomain, SingularSystem

#: 2D grids up to this many points per axis are factorized directly.
DIRECT_SOLVE_MAX_N = 256
CG_TOLERANCE = 1e-10


@dataclass(frozen=True)
class Grid:
    """Uniform grid of interior nodes on ``(0, 1)**dim``."""

    dim: int
    n_interior: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n_interior < 3:
            raise ValueError(f"n_interior must be >= 3, got {self.n_interior}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n_interior + 1)

    @property
    def size(self) -> int:
        return self.n_interior**self.dim

    @property
    def axis(self) -> np.ndarray:
        """Interior coordinates along one axis."""
        return self.h * np.arange(1, self.n_interior + 1)

    @property
    def nodes(self) -> np.ndarray:
        """Interior node coordinates, shape ``(size, dim)``, C order (x fastest last)."""
        if self.dim == 1:
            return self.axis[:, None]
        x1, x2 = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.column_stack([x1.ravel(), x2.ravel()])

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet boundary values.

    ``constant`` holds one value on all of ∂O.  ``tabulated`` is 1D only and
    holds ``(g(0), g(1))``.
    """

    kind: str = "constant"
    values: tuple = (0.0,)

    @classmethod
    def constant(cls, value: float) -> "BoundaryData":
        return cls("constant", (float(value),))

    @classmethod
    def tabulated(cls, left: float, right: float) -> "BoundaryData":
        return cls("tabulated", (float(left), float(right)))

    def __post_init__(self):
        if self.kind not in ("constant", "tabulated"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "constant" and len(self.values) != 1:
            raise ValueError("constant boundary takes one value")
        if self.kind == "tabulated" and len(self.values) != 2:
            raise ValueError("tabulated boundary takes (left, right) values")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("boundary values must be finite")

    @property
    def min(self) -> float:
        return float(min(self.values))

    @property
    def max(self) -> float:
        return float(max(self.values))

    def left_right(self) -> tuple[float, float]:
        if self.kind == "constant":
            return self.values[0], self.values[0]
        return self.values


ZERO_BOUNDARY = BoundaryData.constant(0.0)


@dataclass
class GridFunction:
    """Values at the interior nodes of ``grid`` plus boundary data."""

    grid: Grid
    values: np.ndarray
    boundary: BoundaryData = field(default=ZERO_BOUNDARY)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.size,):
            raise ValueError(
                f"expected {self.grid.size} values, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function values must be finite")
        if self.grid.dim == 2 and self.boundary.kind != "constant":
            raise ValueError("2D grids support constant boundary data only")

    def extended(self) -> np.ndarray:
        """Values on the grid including boundary nodes."""
        n = self.grid.n_interior
        if self.grid.dim == 1:
            left, right = self.boundary.left_right()
            return np.concatenate([[left], self.values, [right]])
        out = np.full((n + 2, n + 2), self.boundary.values[0])
        out[1:-1, 1:-1] = self.values.reshape(n, n)
        return out

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.cell_volume * np.sum(self.values**2)))


def _check_potential(f: np.ndarray):
    lo = f.min()
    if not np.isfinite(lo + f.max()):
        raise NonPositivePotential("potential has non-finite values")
    if lo < 0:
        raise NonPositivePotential(f"potential has negative values (min {f.min():.3g})")


class SchrodingerOperator:
    """Factorized ``B = f − ½L_h`` for one potential.

    The factorization is reused for the boundary solve and any number of
    source solves, which is what makes gradients and Hessians cheap.
    """

    def __init__(self, f, grid: Grid):
        f = np.asarray(f.values if isinstance(f, GridFunction) else f, dtype=float)
        if f.shape != (grid.size,):
            raise ValueError(f"potential must have {grid.size} values")
        _check_potential(f)
        self.grid = grid
        self.f = f
        inv2h2 = 0.5 / grid.h**2
        n = grid.n_interior
        if grid.dim == 1:
            d = f + 2.0 * inv2h2
            e = np.full(n - 1, -inv2h2)
            d_fac, e_fac, info = lapack.dpttrf(d, e)
            if info != 0:
                raise SingularSystem(f"tridiagonal factorization failed (info={info})")
            self._d, self._e = d_fac, e_fac
            self._solver = None
        else:
            lap1 = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
            eye = sp.identity(n)
            mat = inv2h2 * (sp.kron(lap1, eye) + sp.kron(eye, lap1)) + sp.diags(f)
            self._matrix = mat.tocsc()
            if n <= DIRECT_SOLVE_MAX_N:
                try:
                    self._solver = splu(self._matrix)
                except RuntimeError as exc:
                    raise SingularSystem(str(exc)) from exc
            else:
                self._solver = "cg"

    def _solve_b(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``B x = rhs`` for one or several right-hand sides (columns)."""
        rhs = np.asarray(rhs, dtype=float)
        if self.grid.dim == 1:
            x, info = lapack.dpttrs(self._d, self._e, rhs)
            if info != 0:
                raise SingularSystem(f"tridiagonal solve failed (info={info})")
            return x
        if self._solver == "cg":
            cols = rhs if rhs.ndim == 2 else rhs[:, None]
            out = np.empty_like(cols)
            for j in range(cols.shape[1]):
                sol, info = cg(self._matrix, cols[:, j], rtol=CG_TOLERANCE, atol=0.0)
                if info != 0:
                    raise SingularSystem(f"conjugate gradient did not converge (info={info})")
                out[:, j] = sol
            return out if rhs.ndim == 2 else out[:, 0]
        return self._solver.solve(rhs)

    def boundary_rhs(self, g: BoundaryData) -> np.ndarray:
        grid = self.grid
        n = grid.n_interior
        inv2h2 = 0.5 / grid.h**2
        if grid.dim == 1:
            left, right = g.left_right()
            rhs = np.zeros(n)
            rhs[0] += inv2h2 * left
            rhs[-1] += inv2h2 * right
            return rhs
        if g.kind != "constant":
            raise ValueError("2D grids support constant boundary data only")
        count = np.zeros((n, n))
        count[0, :] += 1
        count[-1, :] += 1
        count[:, 0] += 1
        count[:, -1] += 1
        return inv2h2 * g.values[0] * count.ravel()

    def solve_boundary(self, g: BoundaryData) -> np.ndarray:
        """Interior values of the solution with boundary data ``g``."""
        return self._solve_b(self.boundary_rhs(g))

    def solve_source(self, psi: np.ndarray) -> np.ndarray:
        """``V_f[ψ]`` for ``psi`` of shape ``(size,)`` or ``(size, k)``."""
        return -self._solve_b(psi)


def solve_schrodinger(f, g: BoundaryData, grid: Grid) -> GridFunction:
    """Solve ``½Δu − fu = 0`` with ``u = g`` on the boundary.

    Raises NonPositivePotential if ``f`` has negative entries.
    """
    if g.min <= 0:
        raise ValueError("boundary datum must be positive for the Schrödinger problem")
    op = SchrodingerOperator(f, grid)
    return GridFunction(grid, op.solve_boundary(g), g)


def solve_source(f, psi, grid: Grid) -> GridFunction:
    """Return ``w = V_f[ψ]``, i.e. ``½Δw − fw = ψ`` with zero boundary values."""
    psi = np.asarray(psi.values if isinstance(psi, GridFunction) else psi, dtype=float)
    op = SchrodingerOperator(f, grid)
    return GridFunction(grid, op.solve_source(psi))


class Interpolator:
    """Multilinear interpolation from grid values to fixed points.

    The map is affine in the interior values: ``P @ values + offset(boundary)``,
    with ``P`` a sparse ``(n_points, grid.size)`` matrix.  Keeping it explicit
    lets the likelihood apply ``Pᵀ`` for adjoint solves.
    """

    def __init__(self, grid: Grid, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if grid.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
            pts = pts.T
        if pts.shape[1] != grid.dim:
            raise ValueError(f"points must have {grid.dim} coordinates")
        if np.any(pts < 0) or np.any(pts > 1) or not np.all(np.isfinite(pts)):
            raise OutOfDomain("interpolation point outside the closed unit domain")
        self.grid = grid
        self.points = pts
        n = grid.n_interior
        m = n + 2  # extended nodes per axis
        scaled = pts / grid.h
        idx = np.clip(np.floor(scaled).astype(int), 0, n)
        w = scaled - idx
        npts = pts.shape[0]
        if grid.dim == 1:
            cols = np.column_stack([idx[:, 0], idx[:, 0] + 1])
            weights = np.column_stack([1 - w[:, 0], w[:, 0]])
        else:
            i, j = idx[:, 0], idx[:, 1]
            wx, wy = w[:, 0], w[:, 1]
            cols = np.column_stack([i * m + j, i * m + j + 1, (i + 1) * m + j, (i + 1) * m + j + 1])
            weights = np.column_stack(
                [(1 - wx) * (1 - wy), (1 - wx) * wy, wx * (1 - wy), wx * wy]
            )
        rows = np.repeat(np.arange(npts), cols.shape[1])
        ext = sp.csr_matrix(
            (weights.ravel(), (rows, cols.ravel())), shape=(npts, m**grid.dim)
        )
        interior = self._interior_index(grid)
        self.matrix = ext[:, interior].tocsr()
        self.matrix_t = self.matrix.T.tocsr()
        boundary_mask = np.ones(m**grid.dim, dtype=bool)
        boundary_mask[interior] = False
        if grid.dim == 1:
            self._left = np.asarray(ext[:, 0].todense()).ravel()
            self._right = np.asarray(ext[:, m - 1].todense()).ravel()
        self._boundary_weight = np.asarray(ext[:, boundary_mask].sum(axis=1)).ravel()

    @staticmethod
    def _interior_index(grid: Grid) -> np.ndarray:
        n = grid.n_interior
        m = n + 2
        if grid.dim == 1:
            return np.arange(1, n + 1)
        ii, jj = np.meshgrid(np.arange(1, n + 1), np.arange(1, n + 1), indexing="ij")
        return (ii * m + jj).ravel()

    def offset(self, boundary: BoundaryData) -> np.ndarray:
        if boundary.kind == "tabulated":
            left, right = boundary.values
            return left * self._left + right * self._right
        return boundary.values[0] * self._boundary_weight

    def __call__(self, values, boundary: BoundaryData = ZERO_BOUNDARY) -> np.ndarray:
        """Interpolate interior ``values`` (``(size,)`` or ``(size, k)``)."""
        out = self.matrix @ values
        if boundary.kind == "constant" and boundary.values[0] == 0.0:
            return out
        off = self.offset(boundary)
        return out + (off[:, None] if out.ndim == 2 else off)


def interpolate(u: GridFunction, x) -> float:
    """Multilinear interpolation of ``u`` at one point of the closed domain."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, u.grid.dim)
    return float(Interpolator(u.grid, x)(u.values, u.boundary)[0])
