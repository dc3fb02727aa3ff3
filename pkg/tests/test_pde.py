import numpy as np
import pytest

from schrodinger_ula.errors import NonPositivePotential, OutOfDomain
from schrodinger_ula.pde import (BoundaryData, Grid, GridFunction, SchrodingerOperator,
                                 interpolate, solve_schrodinger, solve_source)


def cosh_solution(x):
    return np.cosh(2.0 * (x - 0.5)) / np.cosh(1.0)


def test_grid_contract():
    g = Grid(1, 9)
    assert g.h == pytest.approx(0.1)
    assert g.size == 9
    assert Grid(2, 5).size == 25
    assert Grid(2, 5).nodes.shape == (25, 2)
    with pytest.raises(ValueError):
        Grid(1, 2)
    with pytest.raises(ValueError):
        Grid(3, 8)


def test_zero_potential_gives_constant():
    grid = Grid(1, 63)
    u = solve_schrodinger(np.zeros(grid.size), BoundaryData.constant(1.0), grid)
    np.testing.assert_allclose(u.values, 1.0, atol=1e-12)


def test_constant_potential_closed_form():
    grid = Grid(1, 511)
    u = solve_schrodinger(np.full(grid.size, 2.0), BoundaryData.constant(1.0), grid)
    assert np.max(np.abs(u.values - cosh_solution(grid.axis))) <= 1e-4
    assert interpolate(u, 0.5) == pytest.approx(0.648054, abs=1e-5)


def test_tabulated_boundary_linear_profile():
    grid = Grid(1, 31)
    u = solve_schrodinger(np.zeros(grid.size), BoundaryData.tabulated(1.0, 3.0), grid)
    np.testing.assert_allclose(u.values, 1.0 + 2.0 * grid.axis, atol=1e-12)


def test_two_dimensional_constant_solution():
    grid = Grid(2, 15)
    u = solve_schrodinger(np.zeros(grid.size), BoundaryData.constant(2.5), grid)
    np.testing.assert_allclose(u.values, 2.5, atol=1e-12)


def test_negative_potential_rejected():
    grid = Grid(1, 7)
    f = np.zeros(grid.size)
    f[3] = -1e-3
    with pytest.raises(NonPositivePotential):
        solve_schrodinger(f, BoundaryData.constant(1.0), grid)


def test_nonpositive_boundary_rejected():
    grid = Grid(1, 7)
    with pytest.raises(ValueError):
        solve_schrodinger(np.zeros(grid.size), BoundaryData.constant(0.0), grid)


def test_source_solve_examples():
    grid = Grid(1, 99)
    zero = solve_source(np.zeros(grid.size), np.zeros(grid.size), grid)
    assert np.all(zero.values == 0.0)
    w = solve_source(np.zeros(grid.size), np.ones(grid.size), grid)
    x = grid.axis
    # the 3-point stencil is exact on quadratics
    np.testing.assert_allclose(w.values, x * x - x, atol=1e-12)
    assert interpolate(w, 0.5) == pytest.approx(-0.25, abs=1e-12)


@pytest.mark.parametrize("dim,n", [(1, 200), (2, 20)])
def test_source_operator_is_symmetric(dim, n):
    rng = np.random.default_rng(1)
    grid = Grid(dim, n)
    op = SchrodingerOperator(rng.uniform(0, 5, grid.size), grid)
    p1, p2 = rng.standard_normal((2, grid.size))
    lhs = op.solve_source(p1) @ p2
    rhs = p1 @ op.solve_source(p2)
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(p1) * np.linalg.norm(p2)


def test_source_bound_independent_of_potential():
    # |V_f[ψ]| ≤ |V_0[1]|·‖ψ‖∞ ≤ ‖ψ‖∞/4 in 1D (the f ≡ 0 worst case)
    rng = np.random.default_rng(2)
    grid = Grid(1, 127)
    for _ in range(20):
        f = rng.uniform(0, 10, grid.size) * rng.integers(0, 2)
        psi = rng.uniform(-1, 1, grid.size)
        w = solve_source(f, psi, grid)
        assert np.max(np.abs(w.values)) <= 0.25 * np.max(np.abs(psi)) + 1e-12


def test_interpolation_examples():
    grid = Grid(1, 99)
    const = GridFunction(grid, np.full(grid.size, 3.0), BoundaryData.constant(3.0))
    assert interpolate(const, 0.731) == pytest.approx(3.0, abs=1e-14)
    lin = GridFunction(grid, grid.axis, BoundaryData.tabulated(0.0, 1.0))
    assert interpolate(lin, 0.3) == pytest.approx(0.3, abs=1e-14)
    quad = GridFunction(grid, grid.axis**2, BoundaryData.tabulated(0.0, 1.0))
    assert abs(interpolate(quad, 0.3) - 0.09) <= grid.h**2
    with pytest.raises(OutOfDomain):
        interpolate(quad, 1.5)


def test_interpolation_2d_bilinear_exact():
    grid = Grid(2, 9)
    nodes = grid.nodes
    u = GridFunction(grid, 1.0 + nodes[:, 0] + 2.0 * nodes[:, 1] + 3.0 * nodes[:, 0] * nodes[:, 1],
                     BoundaryData.constant(1.0))
    # bilinear data with a nonconstant boundary would need tabulated 2D data;
    # interior cells away from the boundary are still exact
    x = np.array([0.37, 0.52])
    assert interpolate(u, x) == pytest.approx(1 + 0.37 + 1.04 + 3 * 0.37 * 0.52, abs=1e-12)


def test_grid_function_validation():
    grid = Grid(1, 5)
    with pytest.raises(ValueError):
        GridFunction(grid, np.zeros(4))
    with pytest.raises(ValueError):
        GridFunction(grid, np.array([0, 1, np.nan, 0, 0]))
    ext = GridFunction(grid, np.ones(5), BoundaryData.tabulated(2.0, 3.0)).extended()
    assert ext[0] == 2.0 and ext[-1] == 3.0 and ext.size == 7
