"""Discrete transport, diffusion, coupling, and projection operators.

Everything is flux-form on the staggered grid so the conservation and
energy-pairing identities hold by telescoping rather than by approximation:

* scalar advection sums face fluxes that vanish on walls, so its total
  integral is zero for any velocity field;
* the skew-symmetric convection operator is the exact average of the
  advective and divergence forms, which kills the kinetic-energy pairing
  (B(u,v), v) to round-off whenever the advecting field has zero wall-normal
  faces;
* the chemotaxis flux upwinds the cell density by the sign of the face
  gradient of the attractant, which is what keeps the density nonnegative
  without clipping;
* the projection subtracts the gradient of a Neumann-Poisson solve, making
  the post-projection divergence exactly the solver residual.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import _spectral
from .grid import (ScalarField, VectorField, divergence, gradient, norm,
                   require_same_grid, scalar_face_gradients, zeros_vector)


class AdvectionMode(Enum):
    CENTERED_SKEW = "CenteredSkew"
    UPWIND_FLUX = "UpwindFlux"


def laplacian_neumann(phi: ScalarField) -> ScalarField:
    """Flux-form five-point Laplacian with zero boundary flux.

    Returns lap(phi); the positive diffusion operator of the abstract setting
    is minus this.  The boundary fluxes being identically zero makes the
    integral of the result vanish by telescoping.
    """
    return divergence(gradient(phi))


def helmholtz_project(v: VectorField, method: str = "dct") -> VectorField:
    """Project a face field onto the discretely divergence-free subspace.

    Solves the Neumann-Poisson problem lap(p) = div(v) and subtracts grad(p).
    Wall-normal face values are untouched (the gradient vanishes there), so
    inputs with no-slip walls keep them.
    """
    g = v.grid
    rhs = divergence(v)
    p, _info = _spectral.solve_poisson_neumann(g, rhs.values, method=method)
    gp = gradient(ScalarField(g, p))
    return VectorField(g, v.u_x - gp.u_x, v.u_y - gp.u_y)


def stokes_apply(u: VectorField) -> VectorField:
    """Componentwise five-point Laplacian of a no-slip staggered field.

    Wall-normal boundary faces of the output are zero (those values are
    boundary data, not unknowns); tangential walls use the reflected ghost
    u_ghost = -u_first so the interpolated wall velocity vanishes.
    """
    g = u.grid
    dx2, dy2 = g.dx ** 2, g.dy ** 2
    out = zeros_vector(g)

    ux = u.u_x
    lap_x = np.zeros_like(ux)
    lap_x[1:-1, :] = (ux[2:, :] - 2.0 * ux[1:-1, :] + ux[:-2, :]) / dx2
    pad = np.empty((g.nx + 1, g.ny + 2))
    pad[:, 1:-1] = ux
    pad[:, 0] = -ux[:, 0]
    pad[:, -1] = -ux[:, -1]
    lap_x += (pad[:, 2:] - 2.0 * pad[:, 1:-1] + pad[:, :-2]) / dy2
    out.u_x[1:-1, :] = lap_x[1:-1, :]

    uy = u.u_y
    lap_y = np.zeros_like(uy)
    lap_y[:, 1:-1] = (uy[:, 2:] - 2.0 * uy[:, 1:-1] + uy[:, :-2]) / dy2
    pad = np.empty((g.nx + 2, g.ny + 1))
    pad[1:-1, :] = uy
    pad[0, :] = -uy[0, :]
    pad[-1, :] = -uy[-1, :]
    lap_y += (pad[2:, :] - 2.0 * pad[1:-1, :] + pad[:-2, :]) / dx2
    out.u_y[:, 1:-1] = lap_y[:, 1:-1]
    return out


def _face_value(left: np.ndarray, right: np.ndarray, carrier: np.ndarray,
                mode: AdvectionMode) -> np.ndarray:
    if mode is AdvectionMode.CENTERED_SKEW:
        return 0.5 * (left + right)
    return np.where(carrier > 0.0, left, right)


def convect_velocity(u: VectorField, v: VectorField,
                     mode: AdvectionMode = AdvectionMode.CENTERED_SKEW) -> VectorField:
    """Discrete (u . grad) v on the staggered layout.

    CenteredSkew evaluates the exact average of the advective and divergence
    forms, 1/2[(u.grad)v + div(u x v)]; its pairing against v is identically
    zero for any u with vanishing wall-normal faces.  UpwindFlux is the
    conservative flux form with donor-cell face values.
    """
    g = require_same_grid(u, v)
    dx, dy = g.dx, g.dy
    out = zeros_vector(g)

    # --- x component: dual cells around interior vertical faces ---
    ubar = 0.5 * (u.u_x[:-1, :] + u.u_x[1:, :])            # advecting u at cell centers
    vctr = _face_value(v.u_x[:-1, :], v.u_x[1:, :], ubar, mode)
    fx = ubar * vctr                                        # x-flux at cell centers
    # advecting v interpolated to interior nodes (i=1..nx-1, j=0..ny)
    vtil = 0.5 * (u.u_y[:-1, :] + u.u_y[1:, :])
    vnode = np.zeros((g.nx - 1, g.ny + 1))
    vnode[:, 1:-1] = _face_value(v.u_x[1:-1, :-1], v.u_x[1:-1, 1:],
                                 vtil[:, 1:-1], mode)
    fy = vtil * vnode                                       # y-flux at nodes
    div_flux = (fx[1:, :] - fx[:-1, :]) / dx + (fy[:, 1:] - fy[:, :-1]) / dy
    if mode is AdvectionMode.CENTERED_SKEW:
        divd = (ubar[1:, :] - ubar[:-1, :]) / dx + (vtil[:, 1:] - vtil[:, :-1]) / dy
        out.u_x[1:-1, :] = div_flux - 0.5 * v.u_x[1:-1, :] * divd
    else:
        out.u_x[1:-1, :] = div_flux

    # --- y component, mirrored ---
    vbar = 0.5 * (u.u_y[:, :-1] + u.u_y[:, 1:])
    vctr = _face_value(v.u_y[:, :-1], v.u_y[:, 1:], vbar, mode)
    fy = vbar * vctr
    util = 0.5 * (u.u_x[:, :-1] + u.u_x[:, 1:])
    vnode = np.zeros((g.nx + 1, g.ny - 1))
    vnode[1:-1, :] = _face_value(v.u_y[:-1, 1:-1], v.u_y[1:, 1:-1],
                                 util[1:-1, :], mode)
    fx = util * vnode
    div_flux = (fx[1:, :] - fx[:-1, :]) / dx + (fy[:, 1:] - fy[:, :-1]) / dy
    if mode is AdvectionMode.CENTERED_SKEW:
        divd = (util[1:, :] - util[:-1, :]) / dx + (vbar[:, 1:] - vbar[:, :-1]) / dy
        out.u_y[:, 1:-1] = div_flux - 0.5 * v.u_y[:, 1:-1] * divd
    else:
        out.u_y[:, 1:-1] = div_flux
    return out


def scalar_advect(u: VectorField, phi: ScalarField,
                  mode: AdvectionMode = AdvectionMode.UPWIND_FLUX) -> ScalarField:
    """Flux-form div(u phi) for a cell scalar; zero wall fluxes.

    The total integral of the result vanishes by telescoping for any u.  With
    centered face values the pairing (result, phi) equals half the pairing of
    div(u) against phi^2, hence vanishes to the divergence residual of u;
    donor-cell face values make the induced update monotone instead.
    """
    g = require_same_grid(u, phi)
    p = phi.values
    fx = np.zeros((g.nx + 1, g.ny))
    fy = np.zeros((g.nx, g.ny + 1))
    fx[1:-1, :] = u.u_x[1:-1, :] * _face_value(p[:-1, :], p[1:, :],
                                               u.u_x[1:-1, :], mode)
    fy[:, 1:-1] = u.u_y[:, 1:-1] * _face_value(p[:, :-1], p[:, 1:],
                                               u.u_y[:, 1:-1], mode)
    d = (fx[1:, :] - fx[:-1, :]) / g.dx + (fy[:, 1:] - fy[:, :-1]) / g.dy
    return ScalarField(g, d)


def chemotaxis_div(n: ScalarField, c: ScalarField, chi: float) -> ScalarField:
    """Flux-form div(chi * n * grad c) with the density upwinded along grad c.

    The drift velocity of the cells is chi * grad c, so each face takes the
    density from the cell the flux leaves.  Wall fluxes are zero (Neumann c).
    """
    g = require_same_grid(n, c)
    if chi < 0.0:
        raise ValueError(f"chemotactic constant must be >= 0, got {chi}")
    gx, gy = scalar_face_gradients(c)
    nv = n.values
    fx = np.zeros_like(gx)
    fy = np.zeros_like(gy)
    fx[1:-1, :] = chi * gx[1:-1, :] * np.where(gx[1:-1, :] > 0.0,
                                               nv[:-1, :], nv[1:, :])
    fy[:, 1:-1] = chi * gy[:, 1:-1] * np.where(gy[:, 1:-1] > 0.0,
                                               nv[:, :-1], nv[:, 1:])
    d = (fx[1:, :] - fx[:-1, :]) / g.dx + (fy[:, 1:] - fy[:, :-1]) / g.dy
    return ScalarField(g, d)


def consumption(n: ScalarField, c: ScalarField, f) -> ScalarField:
    """Pointwise uptake n * f(c); f is a consumption law with f(0) = 0."""
    g = require_same_grid(n, c)
    return ScalarField(g, n.values * f.eval(c.values))


def buoyancy(n: ScalarField, phi: ScalarField) -> VectorField:
    """Forcing n * grad(potential) on faces; density interpolated to faces.

    Wall-normal boundary faces are zero, matching the no-slip target space of
    the projection.
    """
    g = require_same_grid(n, phi)
    gpx, gpy = scalar_face_gradients(phi)
    out = zeros_vector(g)
    out.u_x[1:-1, :] = 0.5 * (n.values[:-1, :] + n.values[1:, :]) * gpx[1:-1, :]
    out.u_y[:, 1:-1] = 0.5 * (n.values[:, :-1] + n.values[:, 1:]) * gpy[:, 1:-1]
    return out


def recover_pressure(state, params, method: str = "dct") -> ScalarField:
    """Diagnostic pressure from the instantaneous momentum balance.

    Solves the Neumann-Poisson problem lap(p) = div(f) with
    f = -convection + viscous + buoyancy evaluated at the current state,
    normalized to zero mean.  The time stepper never needs this field; it is
    reconstructed for inspection only.
    """
    u, n = state.u, state.n
    g = u.grid
    f = zeros_vector(g)
    conv = convect_velocity(u, u, AdvectionMode.CENTERED_SKEW)
    visc = stokes_apply(u)
    buoy = buoyancy(n, params.phi)
    f.u_x = -conv.u_x + params.eta * visc.u_x + buoy.u_x
    f.u_y = -conv.u_y + params.eta * visc.u_y + buoy.u_y
    rhs = divergence(f)
    p, _info = _spectral.solve_poisson_neumann(g, rhs.values, method=method)
    p = p - p.mean()
    return ScalarField(g, p)


def divergence_residual(v: VectorField) -> float:
    """Max-norm of the discrete divergence, the projection quality measure."""
    return norm(divergence(v), "Linf")
