"""Forward conductivity problem and power densities (synthetic data).

``div(gamma grad u) = 0`` in (-1, 1)^3 with ``u = g`` on the boundary is
discretized on the node grid by the energy (flux) form

    E(u) = sum over cells  int_cell grad(u_h) . gamma_cell grad(u_h)

with ``u_h`` the trilinear interpolant of the nodal values and ``gamma_cell``
the average of the 8 corner tensors.  The stencil is 27-point, symmetric
and positive definite for any SPD ``gamma``; cross terms of an anisotropic
tensor enter through the cell-averaged tangential differences.  Linear
functions are reproduced exactly for constant ``gamma``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .grid import Grid3, GridError, ScalarField, SymTensorField, VectorField, grad, six_to_sym
from .linsolve import SPDSolver
from .smalg import det3

# -- boundary data -----------------------------------------------------------

BOUNDARY_CATALOG: dict[str, Callable] = {
    "x": lambda x, y, z: x,
    "y": lambda x, y, z: y,
    "z": lambda x, y, z: z,
    "x+1.5(z+2)^2": lambda x, y, z: x + 1.5 * (z + 2) ** 2,
    "y+1.5(x+2)^2": lambda x, y, z: y + 1.5 * (x + 2) ** 2,
    "z+1.5(y+2)^2": lambda x, y, z: z + 1.5 * (y + 2) ** 2,
    "(x+2)(y+2)": lambda x, y, z: (x + 2) * (y + 2),
    "(y+2)(z+2)": lambda x, y, z: (y + 2) * (z + 2),
    "(z+2)(x+2)": lambda x, y, z: (z + 2) * (x + 2),
}

BoundaryDatum = Union[str, Callable, np.ndarray, ScalarField]


def boundary_values(g: BoundaryDatum, grid: Grid3) -> np.ndarray:
    """Nodal array holding the Dirichlet datum (interior values unspecified)."""
    if isinstance(g, str):
        if g not in BOUNDARY_CATALOG:
            raise KeyError(f"unknown boundary datum {g!r}; catalog: {sorted(BOUNDARY_CATALOG)}")
        g = BOUNDARY_CATALOG[g]
    if callable(g):
        return np.asarray(g(*grid.coords()), dtype=np.float64) * np.ones(grid.shape)
    if isinstance(g, ScalarField):
        if g.grid != grid:
            raise GridError("boundary field lives on a different grid")
        return np.array(g.data)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != grid.shape:
        raise GridError(f"boundary array shape {g.shape} != grid {grid.shape}")
    return g


# -- stencil assembly ----------------------------------------------------------

_GAUSS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))
_CORNERS = list(product((0, 1), repeat=3))


def _reference_integrals():
    """``W[p, q, a, b] = int_[0,1]^3 d_p phi_a d_q phi_b`` for trilinear phi."""
    def dphi(a, s):
        vals, ders = [], []
        for ax in range(3):
            t = s[ax]
            vals.append(t if a[ax] else 1.0 - t)
            ders.append(1.0 if a[ax] else -1.0)
        g = np.empty(3)
        for p in range(3):
            g[p] = np.prod([ders[ax] if ax == p else vals[ax] for ax in range(3)])
        return g

    W = np.zeros((3, 3, 8, 8))
    for s in product(_GAUSS, repeat=3):
        G = np.array([dphi(a, s) for a in _CORNERS])  # (8, 3)
        W += np.einsum("ap,bq->pqab", G, G) / 8.0
    return W


_W_REF = _reference_integrals()


def stiffness_matrix(gamma: np.ndarray, grid: Grid3) -> sp.csr_matrix:
    """Full-grid 27-point matrix of ``-div(gamma grad .)`` (times cell volume).

    ``gamma`` has shape ``grid.shape + (3, 3)``.
    """
    h = np.asarray(grid.spacing)
    vol = np.prod(h)
    gc = sum(gamma[a0:gamma.shape[0] - 1 + a0, a1:gamma.shape[1] - 1 + a1,
                   a2:gamma.shape[2] - 1 + a2] for a0, a1, a2 in _CORNERS) / 8.0
    scale = vol / np.outer(h, h)
    W = _W_REF * scale[:, :, None, None]
    nc = tuple(m - 1 for m in grid.n)
    stencil = {d: np.zeros(grid.shape) for d in product((-1, 0, 1), repeat=3)}
    for ia, a in enumerate(_CORNERS):
        for ib, b in enumerate(_CORNERS):
            coef = np.einsum("...pq,pq->...", gc, W[:, :, ia, ib])
            d = tuple(bb - aa for aa, bb in zip(a, b))
            stencil[d][a[0]:a[0] + nc[0], a[1]:a[1] + nc[1], a[2]:a[2] + nc[2]] += coef

    nx, ny, nz = grid.n
    idx = np.arange(grid.size).reshape(grid.shape)
    rows, cols, vals = [], [], []
    for d, s in stencil.items():
        src = tuple(slice(max(0, -o), m - max(0, o)) for o, m in zip(d, grid.n))
        dst = tuple(slice(max(0, o), m - max(0, -o)) for o, m in zip(d, grid.n))
        rows.append(idx[src].ravel())
        cols.append(idx[dst].ravel())
        vals.append(s[src].ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(grid.size, grid.size))
    A.eliminate_zeros()
    return A


class ConductivityOperator:
    """Interior Dirichlet system for one conductivity; reusable across data."""

    def __init__(self, gamma: SymTensorField):
        self.grid = gamma.grid
        A = stiffness_matrix(gamma.full(), self.grid)
        bmask = self.grid.boundary_mask().ravel()
        self.interior = np.flatnonzero(~bmask)
        self.A_full = A
        A_i = A[self.interior]
        self.A_ii = A_i[:, self.interior].tocsr()
        self.A_ib = A_i
        self._solver = None

    @property
    def solver(self):
        if self._solver is None:
            self._solver = SPDSolver(self.A_ii)
        return self._solver

    def solve(self, g: BoundaryDatum, tol=1e-10, maxiter=None):
        gb = boundary_values(g, self.grid).ravel().copy()
        gb[self.interior] = 0.0
        rhs = -(self.A_ib @ gb)
        if maxiter is None:
            maxiter = 20 * max(self.grid.n)
        xi, _ = self.solver.solve(rhs, tol=tol, maxiter=maxiter)
        u = gb
        u[self.interior] = xi
        return u.reshape(self.grid.shape)


def solve_conductivity(gamma: SymTensorField, g: BoundaryDatum, tol=1e-10) -> ScalarField:
    return ScalarField(gamma.grid, ConductivityOperator(gamma).solve(g, tol=tol))


# -- power densities ------------------------------------------------------------

@dataclass
class PowerDensitySet:
    """Basis matrix ``H`` (3x3 per voxel) plus cross densities of extra solutions."""

    grid: Grid3
    H: np.ndarray                         # (nx, ny, nz, 3, 3)
    cross: list = field(default_factory=list)   # each (nx, ny, nz, 3)
    labels: tuple = ()

    def __post_init__(self):
        if self.H.shape != self.grid.shape + (3, 3):
            raise GridError("H does not match the grid")
        for c in self.cross:
            if c.shape != self.grid.shape + (3,):
                raise GridError("cross density does not match the grid")

    def basis_field(self) -> SymTensorField:
        return SymTensorField.from_full(self.grid, self.H)

    def cross_field(self, k: int) -> VectorField:
        return VectorField(self.grid, self.cross[k])


@dataclass
class PowerDensityData:
    """All pairwise power densities ``H_ij`` of a list of labelled solutions."""

    grid: Grid3
    labels: list
    H: np.ndarray  # (nx, ny, nz, J, J), symmetric in the last two axes

    def index(self, label):
        return self.labels.index(label)

    def select(self, basis: Sequence[str], extras: Sequence[str] = ()) -> PowerDensitySet:
        ib = [self.index(b) for b in basis]
        if len(ib) != 3:
            raise ValueError("a basis has exactly three solutions")
        H = self.H[..., ib, :][..., :, ib]
        cross = [self.H[..., self.index(v), :][..., ib] for v in extras]
        return PowerDensitySet(self.grid, np.ascontiguousarray(H),
                               [np.ascontiguousarray(c) for c in cross],
                               tuple(basis) + tuple(extras))


def power_densities(gamma: SymTensorField, solutions: Sequence, labels=None) -> PowerDensityData:
    """``H_ij = gamma grad u_i . grad u_j`` for all pairs of solutions."""
    sols = [s.data if isinstance(s, ScalarField) else np.asarray(s) for s in solutions]
    for s in solutions:
        if isinstance(s, ScalarField) and s.grid != gamma.grid:
            raise GridError("solution and conductivity grids differ")
    if len(sols) < 3:
        raise ValueError("need at least three solutions")
    grads = [grad(u, gamma.grid) for u in sols]
    return power_densities_from_gradients(gamma.full(), grads, gamma.grid, labels)


def power_densities_from_gradients(gamma, grads, grid, labels=None) -> PowerDensityData:
    J = len(grads)
    labels = list(labels) if labels is not None else [f"u{i + 1}" for i in range(J)]
    fluxes = [np.einsum("...ij,...j->...i", gamma, g) for g in grads]
    H = np.empty(grid.shape + (J, J))
    for i in range(J):
        for j in range(i, J):
            H[..., i, j] = np.einsum("...i,...i->...", fluxes[i], grads[j])
            H[..., j, i] = H[..., i, j]
    return PowerDensityData(grid, labels, H)


@dataclass
class ForwardData:
    """Solutions, their gradients and power densities for one conductivity."""

    grid: Grid3
    gamma: np.ndarray        # (.., 3, 3)
    labels: list
    u: dict
    grads: dict
    pd: PowerDensityData


def generate(gamma_fn: Callable, grid: Grid3, data: Sequence[str], tol=1e-10,
             mode="same-grid") -> ForwardData:
    """Solve for every boundary datum and evaluate all power densities.

    ``gamma_fn`` maps points ``(..., 3)`` to tensors.  With
    ``mode="oversampled"`` the solves run on the grid with halved spacing
    and everything is restricted to ``grid`` afterwards.
    """
    if mode not in ("same-grid", "oversampled"):
        raise ValueError(f"unknown data mode {mode!r}")
    work = grid.refined() if mode == "oversampled" else grid
    gamma = gamma_fn(work.points())
    op = ConductivityOperator(SymTensorField.from_full(work, gamma))
    us = {k: op.solve(k, tol=tol) for k in data}
    grads = {k: grad(u, work) for k, u in us.items()}
    if mode == "oversampled":
        sub = (slice(None, None, 2),) * 3
        gamma = gamma[sub]
        us = {k: u[sub] for k, u in us.items()}
        grads = {k: g[sub] for k, g in grads.items()}
    pd = power_densities_from_gradients(gamma, [grads[k] for k in data], grid, data)
    return ForwardData(grid, gamma, list(data), us, grads, pd)


def det_gradients(grads: Sequence[np.ndarray]) -> np.ndarray:
    """``det(grad u1, grad u2, grad u3)`` per voxel."""
    return det3(np.stack(grads, axis=-1))
