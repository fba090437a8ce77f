"""Staggered rectangular grid, discrete fields, and the integral calculus on them.

Scalars (cell density, oxygen concentration, pressure) live at cell centers.
Velocity components live on cell faces in the marker-and-cell arrangement:
``u_x`` on the (nx+1, ny) vertical faces, ``u_y`` on the (nx, ny+1) horizontal
faces.  This makes the discrete divergence a per-cell balance of face values,
which is what the projection step and the flux-form conservation proofs need.

Boundary conventions are fixed once here and honored by every operator:
homogeneous Neumann for scalars (mirror ghosts, zero boundary-face gradient)
and no-slip for velocity (zero wall-normal faces, reflected tangential ghosts).
All integrals use midpoint (cell-average) quadrature with weight dx*dy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Raised for invalid grid construction or mismatched-grid operands."""


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    lx: float
    ly: float
    dx: float
    dy: float
    bc_scalar: str = "neumann"
    bc_velocity: str = "no_slip"

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy

    @property
    def area(self) -> float:
        return self.lx * self.ly


def make_grid(nx: int, ny: int, lx: float, ly: float) -> Grid:
    """Build a uniform rectangular grid; spacings are derived, never stored twice.

    Requires at least 4 cells per direction so every interior stencil has two
    interior neighbors.
    """
    if nx < 4 or ny < 4:
        raise GridError(f"grid needs nx, ny >= 4, got nx={nx}, ny={ny}")
    if not (lx > 0.0 and ly > 0.0):
        raise GridError(f"domain lengths must be positive, got lx={lx}, ly={ly}")
    return Grid(nx=int(nx), ny=int(ny), lx=float(lx), ly=float(ly),
                dx=float(lx) / int(nx), dy=float(ly) / int(ny))


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray  # shape (nx, ny), cell centers

    def __post_init__(self):
        expected = (self.grid.nx, self.grid.ny)
        if self.values.shape != expected:
            raise GridError(f"scalar field shape {self.values.shape} != {expected}")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


@dataclass
class VectorField:
    grid: Grid
    u_x: np.ndarray  # shape (nx+1, ny), vertical faces
    u_y: np.ndarray  # shape (nx, ny+1), horizontal faces

    def __post_init__(self):
        g = self.grid
        if self.u_x.shape != (g.nx + 1, g.ny):
            raise GridError(f"u_x shape {self.u_x.shape} != {(g.nx + 1, g.ny)}")
        if self.u_y.shape != (g.nx, g.ny + 1):
            raise GridError(f"u_y shape {self.u_y.shape} != {(g.nx, g.ny + 1)}")

    def copy(self) -> "VectorField":
        return VectorField(self.grid, self.u_x.copy(), self.u_y.copy())


Field = ScalarField | VectorField


def zeros_scalar(grid: Grid) -> ScalarField:
    return ScalarField(grid, np.zeros((grid.nx, grid.ny)))


def full_scalar(grid: Grid, value: float) -> ScalarField:
    return ScalarField(grid, np.full((grid.nx, grid.ny), float(value)))


def zeros_vector(grid: Grid) -> VectorField:
    return VectorField(grid, np.zeros((grid.nx + 1, grid.ny)),
                       np.zeros((grid.nx, grid.ny + 1)))


def cell_centers(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Meshgrids (indexing 'ij') of cell-center coordinates."""
    x = (np.arange(grid.nx) + 0.5) * grid.dx
    y = (np.arange(grid.ny) + 0.5) * grid.dy
    return np.meshgrid(x, y, indexing="ij")


def scalar_from_function(grid: Grid, f) -> ScalarField:
    x, y = cell_centers(grid)
    return ScalarField(grid, np.asarray(f(x, y), dtype=float))


def require_same_grid(a: Field, b: Field) -> Grid:
    if a.grid is not b.grid and a.grid != b.grid:
        raise GridError("fields live on different grids")
    return a.grid


def enforce_no_slip(v: VectorField) -> VectorField:
    """Zero the wall-normal faces in place and return the field."""
    v.u_x[0, :] = 0.0
    v.u_x[-1, :] = 0.0
    v.u_y[:, 0] = 0.0
    v.u_y[:, -1] = 0.0
    return v


def inner_product(a: Field, b: Field) -> float:
    """Discrete L2 pairing: sum of pointwise products weighted by cell volume.

    Vector fields pair face-by-face, each face carrying the full cell volume,
    which is the quadrature under which the projection is an orthogonal one.
    """
    g = require_same_grid(a, b)
    if isinstance(a, ScalarField) and isinstance(b, ScalarField):
        return float(np.sum(a.values * b.values)) * g.cell_volume
    if isinstance(a, VectorField) and isinstance(b, VectorField):
        s = np.sum(a.u_x * b.u_x) + np.sum(a.u_y * b.u_y)
        return float(s) * g.cell_volume
    raise GridError("inner_product needs two fields of the same kind")


def scalar_face_gradients(f: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Face-normal gradients of a cell scalar; zero on boundary faces (Neumann)."""
    g = f.grid
    gx = np.zeros((g.nx + 1, g.ny))
    gy = np.zeros((g.nx, g.ny + 1))
    gx[1:-1, :] = (f.values[1:, :] - f.values[:-1, :]) / g.dx
    gy[:, 1:-1] = (f.values[:, 1:] - f.values[:, :-1]) / g.dy
    return gx, gy


def gradient(f: ScalarField) -> VectorField:
    gx, gy = scalar_face_gradients(f)
    return VectorField(f.grid, gx, gy)


def divergence(v: VectorField) -> ScalarField:
    g = v.grid
    d = (v.u_x[1:, :] - v.u_x[:-1, :]) / g.dx + (v.u_y[:, 1:] - v.u_y[:, :-1]) / g.dy
    return ScalarField(g, d)


def _velocity_gradient_sq_sum(v: VectorField) -> float:
    """Sum over quadrature points of |grad u|^2 for a no-slip staggered field.

    Tangential derivatives at walls use the reflected ghost (u_ghost = -u_wall
    row), equivalent to a one-sided difference against the zero wall value at
    half spacing.
    """
    g = v.grid
    dx, dy = g.dx, g.dy
    total = 0.0
    # u_x: d/dx lives on cells, d/dy on nodes
    dux_dx = (v.u_x[1:, :] - v.u_x[:-1, :]) / dx
    total += float(np.sum(dux_dx ** 2))
    dux_dy = np.empty((g.nx + 1, g.ny + 1))
    dux_dy[:, 1:-1] = (v.u_x[:, 1:] - v.u_x[:, :-1]) / dy
    dux_dy[:, 0] = 2.0 * v.u_x[:, 0] / dy
    dux_dy[:, -1] = -2.0 * v.u_x[:, -1] / dy
    total += float(np.sum(dux_dy ** 2))
    # u_y: d/dy on cells, d/dx on nodes
    duy_dy = (v.u_y[:, 1:] - v.u_y[:, :-1]) / dy
    total += float(np.sum(duy_dy ** 2))
    duy_dx = np.empty((g.nx + 1, g.ny + 1))
    duy_dx[1:-1, :] = (v.u_y[1:, :] - v.u_y[:-1, :]) / dx
    duy_dx[0, :] = 2.0 * v.u_y[0, :] / dx
    duy_dx[-1, :] = -2.0 * v.u_y[-1, :] / dx
    total += float(np.sum(duy_dx ** 2))
    return total


def norm(f: Field, kind: str) -> float:
    """Discrete norms: 'L2', 'Linf', and the gradient seminorm 'H1_semi'."""
    g = f.grid
    if kind == "L2":
        return float(np.sqrt(inner_product(f, f)))
    if kind == "Linf":
        if isinstance(f, ScalarField):
            return float(np.max(np.abs(f.values))) if f.values.size else 0.0
        return float(max(np.max(np.abs(f.u_x)), np.max(np.abs(f.u_y))))
    if kind == "H1_semi":
        if isinstance(f, ScalarField):
            gx, gy = scalar_face_gradients(f)
            s = np.sum(gx ** 2) + np.sum(gy ** 2)
            return float(np.sqrt(s * g.cell_volume))
        return float(np.sqrt(_velocity_gradient_sq_sum(f) * g.cell_volume))
    raise GridError(f"unknown norm kind {kind!r}")
