"""Direct spectral solvers for the constant-coefficient elliptic systems.

Cell-centered scalars with homogeneous Neumann walls diagonalize under the
type-2 cosine transform; the flux-form five-point Laplacian has eigenvalues
-(2/dx^2)(1 - cos(pi i/nx)) - (2/dy^2)(1 - cos(pi j/ny)) on that basis, exactly.
Velocity components with no-slip walls diagonalize under a sine transform:
type 1 along the component's own direction (Dirichlet on boundary faces) and
type 2 across it (reflected ghost, zero tangential velocity at the wall).

A conjugate-gradient fallback for the Neumann-Poisson problem is kept both as
an alternative code path and as an independent cross-check of the fast path.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dctn, idctn, dst, idst
from scipy.sparse.linalg import LinearOperator, cg

from .grid import Grid, ScalarField, VectorField

_POISSON_CG_TOL = 1e-12
_POISSON_CG_MAXITER_PER_CELL = 10


class SolverError(RuntimeError):
    """An iterative solve failed to reach its tolerance within the cap."""


def neumann_eigenvalues(grid: Grid) -> np.ndarray:
    """Nonnegative eigenvalues of minus the Neumann Laplacian, shape (nx, ny)."""
    lx = (2.0 / grid.dx ** 2) * (1.0 - np.cos(np.pi * np.arange(grid.nx) / grid.nx))
    ly = (2.0 / grid.dy ** 2) * (1.0 - np.cos(np.pi * np.arange(grid.ny) / grid.ny))
    return lx[:, None] + ly[None, :]


def solve_poisson_neumann(grid: Grid, rhs: np.ndarray, method: str = "dct"):
    """Solve lap(p) = rhs with zero-flux walls; the mean of p is pinned to zero.

    The compatible part of rhs is solved exactly; any mean component (absent
    for divergence data up to round-off) is dropped and reported.

    Returns (p_values, info) where info carries the dropped-mean magnitude and
    iteration count (0 for the direct path).
    """
    if method == "dct":
        lam = neumann_eigenvalues(grid)
        rhat = dctn(rhs, type=2, norm="ortho")
        dropped = float(abs(rhat[0, 0]))
        with np.errstate(divide="ignore", invalid="ignore"):
            phat = np.where(lam > 0.0, -rhat / lam, 0.0)
        phat[0, 0] = 0.0
        p = idctn(phat, type=2, norm="ortho")
        return p, {"iterations": 0, "dropped_mean": dropped}
    if method == "cg":
        return _solve_poisson_cg(grid, rhs)
    raise ValueError(f"unknown poisson method {method!r}")


def _apply_neumann_laplacian(grid: Grid, p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    dx2, dy2 = grid.dx ** 2, grid.dy ** 2
    out[1:, :] += (p[:-1, :] - p[1:, :]) / dx2
    out[:-1, :] += (p[1:, :] - p[:-1, :]) / dx2
    out[:, 1:] += (p[:, :-1] - p[:, 1:]) / dy2
    out[:, :-1] += (p[:, 1:] - p[:, :-1]) / dy2
    return out


def _solve_poisson_cg(grid: Grid, rhs: np.ndarray):
    n = grid.nx * grid.ny
    b = rhs - rhs.mean()
    dropped = float(abs(rhs.mean())) * np.sqrt(n)

    def matvec(x):
        # minus Laplacian, projected onto mean-zero: SPD on that subspace
        xm = x - x.mean()
        y = -_apply_neumann_laplacian(grid, xm.reshape(grid.nx, grid.ny))
        return y.ravel()

    op = LinearOperator((n, n), matvec=matvec)
    bnorm = np.linalg.norm(b.ravel())
    if bnorm == 0.0:
        return np.zeros_like(rhs), {"iterations": 0, "dropped_mean": dropped}
    count = [0]

    def cb(_):
        count[0] += 1

    x, code = cg(op, -b.ravel(), rtol=_POISSON_CG_TOL, atol=0.0,
                 maxiter=_POISSON_CG_MAXITER_PER_CELL * n, callback=cb)
    if code != 0:
        raise SolverError(f"Neumann-Poisson CG did not converge (code {code}, "
                          f"{count[0]} iterations)")
    p = x.reshape(grid.nx, grid.ny)
    p -= p.mean()
    return p, {"iterations": count[0], "dropped_mean": dropped}


def solve_scalar_diffusion(grid: Grid, rhs: ScalarField, coef: float) -> ScalarField:
    """Solve (I - coef*lap) c = rhs with Neumann walls; exact direct solve.

    coef = dt * diffusivity.  The zero mode passes through with factor one, so
    the field mean (and hence total mass) is preserved to round-off.
    """
    if coef == 0.0:
        return rhs.copy()
    lam = neumann_eigenvalues(grid)
    rhat = dctn(rhs.values, type=2, norm="ortho")
    chat = rhat / (1.0 + coef * lam)
    out = idctn(chat, type=2, norm="ortho")
    # the exact solve preserves the zero mode; pin it so the transform
    # round-trip cannot leak mass
    out += rhs.values.mean() - out.mean()
    return ScalarField(grid, out)


def _dirichlet_face_eigenvalues(n: int, h: float) -> np.ndarray:
    # DST-I modes sin(pi k i / n), k = 1..n-1, on the n-1 interior faces
    k = np.arange(1, n)
    return (2.0 / h ** 2) * (1.0 - np.cos(np.pi * k / n))


def _wall_offset_eigenvalues(n: int, h: float) -> np.ndarray:
    # DST-II modes sin(pi (k+1) (j+1/2) / n); reflected ghost is built in
    k = np.arange(1, n + 1)
    return (2.0 / h ** 2) * (1.0 - np.cos(np.pi * k / n))


def solve_velocity_diffusion(grid: Grid, rhs: VectorField, coef: float) -> VectorField:
    """Solve (I - coef*lap) u = rhs componentwise with no-slip walls.

    Wall-normal boundary faces stay exactly zero; the tangential ghost
    reflection of the stencil is what the DST-II direction encodes.
    """
    out_x = np.zeros_like(rhs.u_x)
    out_y = np.zeros_like(rhs.u_y)
    if coef == 0.0:
        out_x[1:-1, :] = rhs.u_x[1:-1, :]
        out_y[:, 1:-1] = rhs.u_y[:, 1:-1]
        return VectorField(grid, out_x, out_y)

    lam_x = (_dirichlet_face_eigenvalues(grid.nx, grid.dx)[:, None]
             + _wall_offset_eigenvalues(grid.ny, grid.dy)[None, :])
    bx = rhs.u_x[1:-1, :]
    bhat = dst(dst(bx, type=1, axis=0, norm="ortho"), type=2, axis=1, norm="ortho")
    bhat /= (1.0 + coef * lam_x)
    out_x[1:-1, :] = idst(idst(bhat, type=2, axis=1, norm="ortho"),
                          type=1, axis=0, norm="ortho")

    lam_y = (_wall_offset_eigenvalues(grid.nx, grid.dx)[:, None]
             + _dirichlet_face_eigenvalues(grid.ny, grid.dy)[None, :])
    by = rhs.u_y[:, 1:-1]
    bhat = dst(dst(by, type=2, axis=0, norm="ortho"), type=1, axis=1, norm="ortho")
    bhat /= (1.0 + coef * lam_y)
    out_y[:, 1:-1] = idst(idst(bhat, type=1, axis=1, norm="ortho"),
                          type=2, axis=0, norm="ortho")
    return VectorField(grid, out_x, out_y)
