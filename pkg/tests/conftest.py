import numpy as np
import pytest

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from stochem.dynamics import State, linear_consumption, make_params
from stochem.grid import ScalarField, VectorField, zeros_scalar, zeros_vector
from stochem.noise import (make_transport_sigma, make_velocity_noise,
                           zero_transport_sigma)
from stochem.operators import helmholtz_project


@pytest.fixture
def rng():
    return np.random.default_rng(20240809)


def random_scalar(grid, rng, positive=False, scale=1.0):
    v = rng.standard_normal((grid.nx, grid.ny)) * scale
    if positive:
        v = np.abs(v) + 0.1 * scale
    return ScalarField(grid, v)


def random_vector(grid, rng, scale=1.0):
    v = VectorField(grid, rng.standard_normal((grid.nx + 1, grid.ny)) * scale,
                    rng.standard_normal((grid.nx, grid.ny + 1)) * scale)
    v.u_x[0, :] = v.u_x[-1, :] = 0.0
    v.u_y[:, 0] = v.u_y[:, -1] = 0.0
    return v


def random_solenoidal(grid, rng, scale=1.0):
    return helmholtz_project(random_vector(grid, rng, scale))


def default_params(grid, *, eta=1.0, mu=1.0, delta=1.0, chi=1.0, gamma=0.0,
                   amplitude=0.0, k_modes=4, cutoff=1, phi_values=None,
                   f=None, **extra):
    if phi_values is None:
        phi = zeros_scalar(grid)
    else:
        phi = ScalarField(grid, phi_values)
    if gamma == 0.0 and min(grid.nx, grid.ny) < 8:
        sigma = zero_transport_sigma(grid)
    else:
        sigma = make_transport_sigma(grid, cutoff)
    return make_params(grid, eta=eta, mu=mu, delta=delta, chi=chi, gamma=gamma,
                       phi=phi, f=f or linear_consumption(),
                       vnoise=make_velocity_noise(grid, k_modes, amplitude),
                       sigma=sigma, **extra)


def quiescent_state(grid, n=1.0, c=0.0):
    return State(u=zeros_vector(grid),
                 c=ScalarField(grid, np.full((grid.nx, grid.ny), float(c))),
                 n=ScalarField(grid, np.full((grid.nx, grid.ny), float(n))),
                 t=0.0)
