"""Finite-difference time marching on the unit square.

An independent cross-check for the spline solver. Each step solves

    -nu Lap_h u_{k+1} = -nu Lap_h u_k + (u_xx u_yy - u_xy^2)_h - f

with the 5-point Laplacian and central differences for all second
derivatives. Nothing here touches the spline assembly; ``compare_to_spline``
only calls the spline function on points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class FDNonConvergence(RuntimeError):
    def __init__(self, message, grid=None, updates=None):
        super().__init__(message)
        self.grid = grid
        self.updates = updates or []


@dataclass
class Grid2D:
    """Nodal values on an ``N x N`` grid of the unit square, ``values[i, j] = u(x_i, y_j)``."""

    N: int
    values: np.ndarray
    iterations: int = 0

    @property
    def h(self) -> float:
        return 1.0 / (self.N - 1)

    @property
    def coords(self):
        s = np.linspace(0.0, 1.0, self.N)
        return np.meshgrid(s, s, indexing="ij")

    @property
    def boundary_mask(self) -> np.ndarray:
        m = np.zeros((self.N, self.N), dtype=bool)
        m[0, :] = m[-1, :] = m[:, 0] = m[:, -1] = True
        return m

    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1]


def _laplacian(n: int, h: float) -> sp.csc_matrix:
    """Negative 5-point Laplacian on the ``n x n`` interior nodes."""
    T = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    I = sp.identity(n)
    return ((sp.kron(T, I) + sp.kron(I, T)) / h**2).tocsc()


def _second_derivatives(U: np.ndarray, h: float):
    uxx = (U[2:, 1:-1] - 2 * U[1:-1, 1:-1] + U[:-2, 1:-1]) / h**2
    uyy = (U[1:-1, 2:] - 2 * U[1:-1, 1:-1] + U[1:-1, :-2]) / h**2
    uxy = (U[2:, 2:] - U[2:, :-2] - U[:-2, 2:] + U[:-2, :-2]) / (4 * h**2)
    return uxx, uyy, uxy


def _neg_lap(U: np.ndarray, h: float) -> np.ndarray:
    uxx, uyy, _ = _second_derivatives(U, h)
    return -(uxx + uyy)


def _boundary_grid(g, N: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, N)
    X, Y = np.meshgrid(s, s, indexing="ij")
    U = np.zeros((N, N))
    mask = np.zeros((N, N), dtype=bool)
    mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
    U[mask] = np.broadcast_to(np.asarray(g(X[mask], Y[mask]), dtype=float), (mask.sum(),))
    return U


def _dirichlet_lift(U: np.ndarray, h: float) -> np.ndarray:
    """Contribution of the boundary values to ``-Lap_h`` at interior nodes."""
    b = np.zeros((U.shape[0] - 2, U.shape[1] - 2))
    b[0, :] += U[0, 1:-1]
    b[-1, :] += U[-1, 1:-1]
    b[:, 0] += U[1:-1, 0]
    b[:, -1] += U[1:-1, -1]
    return b / h**2


def fd_march(f, g, N: int, nu: float = 50.0, tol: float = 1e-11, max_iter: int = 20000,
             u0: np.ndarray | None = None) -> Grid2D:
    """Time marching for ``det D2u = f``, ``u = g`` on the boundary of the unit square.

    Parameters
    ----------
    f, g : callable
        Source and Dirichlet data, vectorized in ``(x, y)``.
    N : int
        Grid points per side (``N >= 5``).
    nu : float
        Pseudo-time parameter, positive.
    tol : float
        Stop when the max-norm update falls below ``tol``.
    max_iter : int
        Step budget.
    u0 : ndarray, optional
        Starting grid; by default the Poisson solve ``Lap_h u = 2 sqrt(f)``.

    Returns
    -------
    Grid2D

    Raises
    ------
    FDNonConvergence
        On a non-finite iterate or when ``max_iter`` is exhausted.
    """
    if N < 5:
        raise ValueError("N must be at least 5")
    if not nu > 0:
        raise ValueError("nu must be positive")
    h = 1.0 / (N - 1)
    n = N - 2
    s = np.linspace(0.0, 1.0, N)
    X, Y = np.meshgrid(s, s, indexing="ij")
    F = np.broadcast_to(np.asarray(f(X[1:-1, 1:-1], Y[1:-1, 1:-1]), dtype=float), (n, n))
    if F.min() < 0:
        raise ValueError("f must be non-negative")
    U = _boundary_grid(g, N)
    lu = spla.splu(_laplacian(n, h))
    lift = _dirichlet_lift(U, h)

    if u0 is None:
        # -Lap_h u = -2 sqrt(f)
        U[1:-1, 1:-1] = lu.solve((-2.0 * np.sqrt(F) + lift).ravel()).reshape(n, n)
    else:
        U[1:-1, 1:-1] = np.asarray(u0, dtype=float)[1:-1, 1:-1]

    updates = []
    for k in range(1, max_iter + 1):
        uxx, uyy, uxy = _second_derivatives(U, h)
        rhs = nu * _neg_lap(U, h) + uxx * uyy - uxy**2 - F
        # the interior solve sees boundary values through the lift
        new = lu.solve((rhs / nu + lift).ravel()).reshape(n, n)
        if not np.all(np.isfinite(new)):
            raise FDNonConvergence(f"non-finite iterate at step {k}", Grid2D(N, U, k), updates)
        step = float(np.abs(new - U[1:-1, 1:-1]).max())
        U[1:-1, 1:-1] = new
        updates.append(step)
        if step <= tol:
            return Grid2D(N, U, k)
    raise FDNonConvergence(f"no convergence in {max_iter} steps (last update {updates[-1]:.3e})",
                           Grid2D(N, U, max_iter), updates)


def grid_error(grid: Grid2D, exact) -> float:
    """Max-norm error against an exact solution at the grid nodes."""
    X, Y = grid.coords
    return float(np.abs(grid.values - exact(X, Y)).max())


def compare_to_spline(grid: Grid2D, u_h) -> float:
    """Max absolute difference between grid values and ``u_h`` at interior nodes."""
    X, Y = grid.coords
    x, y = X[1:-1, 1:-1].ravel(), Y[1:-1, 1:-1].ravel()
    vals = np.asarray(u_h(x, y), dtype=float)
    return float(np.abs(grid.interior().ravel() - vals).max())
