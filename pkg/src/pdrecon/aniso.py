"""The 3+2 algorithm: pointwise anisotropy from two extra solutions, then tau.

For each extra solution ``v`` the coefficients ``mu`` of ``A grad v +
sum mu_i S_i = 0`` are known from ``H mu = -(H_v1, H_v2, H_v3)``.  The matrix
``Z = [grad mu_1 | grad mu_2 | grad mu_3]`` yields four matrices orthogonal
(Frobenius) to ``Atilde S``:

    Z,  Z H Omega_1,  Z H Omega_2,  Z H Omega_3,
    Omega_i = e_{i+1} e_{i+2}^T - e_{i+2} e_{i+1}^T.

Two extra solutions give eight constraints, whose common normal ``B`` is
``Atilde S`` up to scale; ``det B = sqrt(det H)`` fixes the scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import integrate_gradient
from .forward import PowerDensitySet
from .grid import Grid3, grad
from .smalg import SingularMatrixError, det3, inv3, null_direction, signed_cbrt, vec


class HypothesisViolation(RuntimeError):
    """The data do not satisfy the nondegeneracy conditions of the algorithm."""

    def __init__(self, message, index=None, detail=None):
        super().__init__(message)
        self.index = index
        self.detail = detail or {}


def omega(i: int) -> np.ndarray:
    """``Omega_i`` for ``i`` in 0, 1, 2 (cyclic indices)."""
    a, b = (i + 1) % 3, (i + 2) % 3
    m = np.zeros((3, 3))
    m[a, b] = 1.0
    m[b, a] = -1.0
    return m


OMEGAS = np.stack([omega(i) for i in range(3)])

# det H / (tr H / 3)^3 below this: H is numerically singular for 3+2
REL_DET_FLOOR = 1e-3


def relative_det(H):
    return det3(H) / (np.trace(H, axis1=-2, axis2=-1) / 3.0) ** 3


def check_basis(H, floor=REL_DET_FLOOR):
    """Abort if the basis gradients degenerate anywhere (3+2 hypothesis (i))."""
    rd = relative_det(H)
    i = np.unravel_index(np.argmin(rd), rd.shape)
    if not rd[i] > floor:
        raise HypothesisViolation(
            f"basis gradients nearly dependent: det H / (tr H/3)^3 = {rd[i]:.3e} "
            f"at voxel {tuple(int(v) for v in i)} (floor {floor:g}); "
            "use the stabilized pipeline", index=i,
            detail={"min_relative_det": float(rd[i])})


def mu_coefficients(pd: PowerDensitySet, floor=REL_DET_FLOOR):
    """``mu[j]`` of shape ``(..., 3)`` for every extra solution ``j``."""
    check_basis(pd.H, floor)
    try:
        Hinv = inv3(pd.H)
    except SingularMatrixError as exc:
        raise HypothesisViolation(str(exc), index=exc.index) from exc
    return [-np.einsum("...ij,...j->...i", Hinv, c) for c in pd.cross]


def z_matrix(mu, grid: Grid3):
    """``Z[..., p, i] = d_p mu_i``."""
    return np.swapaxes(grad(mu, grid), -1, -2)


def constraint_matrices(Z, H):
    """The four matrices ``Z, Z H Omega_1..3`` stacked as ``(..., 4, 3, 3)``."""
    ZH = Z @ H
    return np.stack([Z] + [ZH @ OMEGAS[i] for i in range(3)], axis=-3)


def constraint_field(mu, H, grid: Grid3):
    """All eight constraint matrices, ``(..., 8, 3, 3)``."""
    return np.concatenate([constraint_matrices(z_matrix(m, grid), H) for m in mu], axis=-3)


def stack_columns(mats):
    """``(..., 8, 3, 3)`` -> ``(..., 9, 8)`` with vectorized matrices as columns."""
    return np.swapaxes(vec(mats), -1, -2)


def normalize_det(B, target):
    """Rescale ``B`` so that ``det B == target`` (real cube root, sign kept)."""
    return signed_cbrt(target / det3(B))[..., None, None] * B


def recover_AS(mats, H, check_rank=True):
    """Normalized null direction ``B ~ Atilde S`` and the rank diagnostics."""
    nd = null_direction(stack_columns(mats))
    if check_rank and np.any(nd.deficient):
        i = tuple(int(v) for v in np.argwhere(nd.deficient)[0])
        raise HypothesisViolation(
            f"constraint matrices rank deficient at voxel {i}", index=i,
            detail={"deficient_voxels": int(nd.deficient.sum())})
    B = normalize_det(nd.b, np.sqrt(det3(H)))
    return B, nd


def orientation_flips(b):
    """Grid edges across which ``det`` of the null direction changes sign.

    ``b`` is only known up to sign per voxel, so each neighbour is first
    oriented to have positive Frobenius product with the other.  Since
    ``b`` is proportional to ``Atilde S``, a flip marks a crossing of the
    zero set of ``det(grad u)``, which ``det H >= 0`` cannot reveal.
    Returns a boolean array per axis (length ``n - 1`` along that axis).
    """
    d = det3(b)
    out = []
    for ax in range(3):
        b0 = np.moveaxis(b, ax, 0)
        d0 = np.moveaxis(d, ax, 0)
        s = np.sign(np.einsum("...ij,...ij->...", b0[:-1], b0[1:]))
        out.append(np.moveaxis(d0[:-1] * s * d0[1:] < 0, 0, ax))
    return out


def check_orientation(b):
    flips = orientation_flips(b)
    count = int(sum(f.sum() for f in flips))
    if count:
        ax = next(a for a, f in enumerate(flips) if f.any())
        i = tuple(int(v) for v in np.argwhere(flips[ax])[0])
        raise HypothesisViolation(
            f"det(grad u) changes sign: {count} grid edges cross its zero set "
            f"(first at voxel {i}, axis {'xyz'[ax]}); use the stabilized pipeline",
            index=i, detail={"sign_change_edges": count})


def symmetrize_unit_det(G):
    G = 0.5 * (G + np.swapaxes(G, -1, -2))
    return G / np.cbrt(det3(G))[..., None, None]


def gamma_tilde(B, H):
    """``B H^{-1} B^T``, symmetrized and renormalized to unit determinant."""
    G = B @ inv3(H) @ np.swapaxes(B, -1, -2)
    return symmetrize_unit_det(G)


def tau_gradient(B, G, H, grid: Grid3):
    """``grad log tau = 1/3 grad log|H| + 2/3 <grad H^jl, B_l> G^{-1} B_j``."""
    Hinv = inv3(H)
    dHinv = grad(Hinv, grid)                            # [..., j, l, p]
    c = np.einsum("...jlp,...pl->...j", dHinv, B)       # <grad H^jl, B_l>
    w = np.einsum("...j,...pj->...p", c, B)             # sum_j c_j B_j
    w = np.einsum("...pq,...q->...p", inv3(G), w)
    return grad(np.log(det3(H)), grid) / 3.0 + (2.0 / 3.0) * w


def recover_tau(B, G, H, tau_boundary, grid: Grid3, tol=1e-10):
    w = tau_gradient(B, G, H, grid)
    return np.exp(integrate_gradient(w, np.log(tau_boundary), grid, tol))


@dataclass
class AnisoResult:
    gamma_tilde: np.ndarray
    tau: np.ndarray
    B: np.ndarray
    smin: np.ndarray
    gap: np.ndarray

    @property
    def gamma(self):
        return self.tau[..., None, None] * self.gamma_tilde


def reconstruct(pd: PowerDensitySet, tau_boundary, tol=1e-10) -> AnisoResult:
    """Plain 3+2 pipeline; raises :class:`HypothesisViolation` where it cannot apply."""
    if len(pd.cross) != 2:
        raise ValueError("the 3+2 algorithm takes exactly two extra solutions")
    mu = mu_coefficients(pd)
    mats = constraint_field(mu, pd.H, pd.grid)
    B, nd = recover_AS(mats, pd.H)
    check_orientation(nd.b)
    G = gamma_tilde(B, pd.H)
    tau = recover_tau(B, G, pd.H, tau_boundary, pd.grid, tol)
    return AnisoResult(G, tau, B, nd.smin, nd.gap)
