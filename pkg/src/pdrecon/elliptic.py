"""Dirichlet Poisson problem ``lap v = f`` with the 7-point Laplacian."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import Grid3, GridError, ScalarField, VectorField, div
from .linsolve import SPDSolver


def _second_difference(m, h):
    main = np.full(m, 2.0)
    off = np.full(m - 1, -1.0)
    return sp.diags([off, main, off], [-1, 0, 1]) / h ** 2


@lru_cache(maxsize=4)
def _negative_laplacian(n: tuple) -> tuple:
    """Interior SPD matrix ``-lap_h`` and its solver for grid size ``n``."""
    grid = Grid3(n)
    m = [k - 2 for k in n]
    h = grid.spacing
    I = [sp.identity(k) for k in m]
    D = [_second_difference(k, hk) for k, hk in zip(m, h)]
    # unknowns ordered like a C-ravel of the interior block: x slowest
    L = (sp.kron(sp.kron(D[0], I[1]), I[2])
         + sp.kron(sp.kron(I[0], D[1]), I[2])
         + sp.kron(sp.kron(I[0], I[1]), D[2])).tocsr()
    return L, SPDSolver(L)


def solve_poisson_array(f: np.ndarray, g: np.ndarray, grid: Grid3, tol=1e-10, maxiter=None):
    """Solve ``lap v = f`` inside, ``v = g`` on the boundary (arrays on ``grid``)."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape != grid.shape or g.shape != grid.shape:
        raise GridError("right-hand side / boundary data do not match the grid")
    L, solver = _negative_laplacian(grid.n)
    hx, hy, hz = grid.spacing
    gb = np.where(grid.boundary_mask(), g, 0.0)
    # boundary neighbours of interior nodes move to the right-hand side
    r = -f[1:-1, 1:-1, 1:-1].copy()
    r[0, :, :] += gb[0, 1:-1, 1:-1] / hx ** 2
    r[-1, :, :] += gb[-1, 1:-1, 1:-1] / hx ** 2
    r[:, 0, :] += gb[1:-1, 0, 1:-1] / hy ** 2
    r[:, -1, :] += gb[1:-1, -1, 1:-1] / hy ** 2
    r[:, :, 0] += gb[1:-1, 1:-1, 0] / hz ** 2
    r[:, :, -1] += gb[1:-1, 1:-1, -1] / hz ** 2
    if maxiter is None:
        maxiter = 20 * max(grid.n)
    x, _ = solver.solve(r.ravel(), tol=tol, maxiter=maxiter)
    v = gb.copy()
    v[1:-1, 1:-1, 1:-1] = x.reshape(r.shape)
    return v


def solve_poisson(f: ScalarField, g_boundary: ScalarField, tol=1e-10) -> ScalarField:
    """Field-level wrapper; only the boundary nodes of ``g_boundary`` are read."""
    if f.grid != g_boundary.grid:
        raise GridError("f and boundary data live on different grids")
    return ScalarField(f.grid, solve_poisson_array(f.data, g_boundary.data, f.grid, tol))


def integrate_gradient(w: np.ndarray, g: np.ndarray, grid: Grid3, tol=1e-10) -> np.ndarray:
    """Potential ``v`` with ``lap v = div w`` and ``v = g`` on the boundary.

    This is the least-squares reading of ``grad v = w``: any curl part of
    ``w`` is discarded.
    """
    return solve_poisson_array(div(w, grid), g, grid, tol)


def integrate_gradient_field(w: VectorField, g_boundary: ScalarField, tol=1e-10) -> ScalarField:
    return ScalarField(w.grid, integrate_gradient(w.data, g_boundary.data, w.grid, tol))
