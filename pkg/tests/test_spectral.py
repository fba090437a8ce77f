"""The fast solvers against dense assemblies of the same linear systems."""

import numpy as np
import pytest

from stochem._spectral import (solve_poisson_neumann, solve_scalar_diffusion,
                               solve_velocity_diffusion)
from stochem.grid import make_grid

from conftest import random_scalar, random_vector


def dense_neumann_laplacian(grid):
    nx, ny = grid.nx, grid.ny
    n = nx * ny
    a = np.zeros((n, n))

    def idx(i, j):
        return i * ny + j

    for i in range(nx):
        for j in range(ny):
            row = idx(i, j)
            for di, dj, h2 in ((1, 0, grid.dx ** 2), (-1, 0, grid.dx ** 2),
                               (0, 1, grid.dy ** 2), (0, -1, grid.dy ** 2)):
                ii, jj = i + di, j + dj
                if 0 <= ii < nx and 0 <= jj < ny:
                    a[row, idx(ii, jj)] += 1.0 / h2
                    a[row, row] -= 1.0 / h2
    return a


def test_poisson_dct_matches_dense_lstsq(rng):
    g = make_grid(8, 6, 1.0, 1.3)
    rhs = random_scalar(g, rng).values
    rhs -= rhs.mean()
    p_fast, info = solve_poisson_neumann(g, rhs)
    a = dense_neumann_laplacian(g)
    p_dense, *_ = np.linalg.lstsq(a, rhs.ravel(), rcond=None)
    p_dense = p_dense.reshape(g.nx, g.ny)
    p_dense -= p_dense.mean()
    assert np.max(np.abs(p_fast - p_dense)) < 1e-11
    assert info["iterations"] == 0


def test_poisson_cg_matches_dct(rng):
    g = make_grid(12, 12, 1.0, 1.0)
    rhs = random_scalar(g, rng).values
    rhs -= rhs.mean()
    p_fast, _ = solve_poisson_neumann(g, rhs, method="dct")
    p_cg, info = solve_poisson_neumann(g, rhs, method="cg")
    assert info["iterations"] > 0
    assert np.max(np.abs(p_fast - p_cg)) < 1e-9


def test_scalar_diffusion_solver_exact(rng):
    g = make_grid(7, 9, 1.1, 0.9)
    rhs = random_scalar(g, rng)
    coef = 0.37
    sol = solve_scalar_diffusion(g, rhs, coef)
    a = np.eye(g.nx * g.ny) - coef * dense_neumann_laplacian(g)
    ref = np.linalg.solve(a, rhs.values.ravel()).reshape(g.nx, g.ny)
    assert np.max(np.abs(sol.values - ref)) < 1e-12


def test_scalar_diffusion_preserves_mean(rng):
    g = make_grid(16, 16, 1.0, 1.0)
    rhs = random_scalar(g, rng)
    sol = solve_scalar_diffusion(g, rhs, 1.7)
    assert sol.values.mean() == pytest.approx(rhs.values.mean(), abs=1e-15)


def dense_velocity_systems(grid, coef):
    """Assemble (I - coef*lap) for each component with no-slip conventions.

    Along the component's own axis the boundary faces are Dirichlet zeros;
    across it the wall ghost reflects (u_ghost = -u_first), which turns the
    usual 2 on the diagonal into a 3 at wall-adjacent rows.
    """
    nx, ny = grid.nx, grid.ny
    dx2, dy2 = grid.dx ** 2, grid.dy ** 2

    def assemble(m_along, m_across, h2_along, h2_across):
        size = m_along * m_across
        a = np.eye(size)
        for i in range(m_along):
            for j in range(m_across):
                row = i * m_across + j
                a[row, row] += coef * 2.0 / h2_along
                if i > 0:
                    a[row, row - m_across] -= coef / h2_along
                if i < m_along - 1:
                    a[row, row + m_across] -= coef / h2_along
                a[row, row] += coef * (3.0 if j in (0, m_across - 1) else 2.0) / h2_across
                if j > 0:
                    a[row, row - 1] -= coef / h2_across
                if j < m_across - 1:
                    a[row, row + 1] -= coef / h2_across
        return a

    # u_x: along = x (nx-1 interior faces), across = y (ny cells)
    ax = assemble(nx - 1, ny, dx2, dy2)
    # u_y: along = y (ny-1 interior faces), across = x (nx cells); note the
    # ordering below keeps (i, j) -> i*(ny-1)+j row-major like the field
    my = nx * (ny - 1)
    ay = np.eye(my)
    for i in range(nx):
        for j in range(ny - 1):
            row = i * (ny - 1) + j
            ay[row, row] += coef * 2.0 / dy2
            if j > 0:
                ay[row, row - 1] -= coef / dy2
            if j < ny - 2:
                ay[row, row + 1] -= coef / dy2
            ay[row, row] += coef * (3.0 if i in (0, nx - 1) else 2.0) / dx2
            if i > 0:
                ay[row, row - (ny - 1)] -= coef / dx2
            if i < nx - 1:
                ay[row, row + (ny - 1)] -= coef / dx2
    return ax, ay


def test_velocity_diffusion_solver_matches_dense(rng):
    g = make_grid(6, 5, 1.0, 0.8)
    rhs = random_vector(g, rng)
    coef = 0.21
    sol = solve_velocity_diffusion(g, rhs, coef)
    ax, ay = dense_velocity_systems(g, coef)
    ref_x = np.linalg.solve(ax, rhs.u_x[1:-1, :].ravel()).reshape(g.nx - 1, g.ny)
    ref_y = np.linalg.solve(ay, rhs.u_y[:, 1:-1].ravel()).reshape(g.nx, g.ny - 1)
    assert np.max(np.abs(sol.u_x[1:-1, :] - ref_x)) < 1e-12
    assert np.max(np.abs(sol.u_y[:, 1:-1] - ref_y)) < 1e-12
    assert np.all(sol.u_x[0, :] == 0.0) and np.all(sol.u_x[-1, :] == 0.0)
    assert np.all(sol.u_y[:, 0] == 0.0) and np.all(sol.u_y[:, -1] == 0.0)
