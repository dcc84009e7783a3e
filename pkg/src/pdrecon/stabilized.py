"""Stabilized multi-basis reconstruction (no division by det H anywhere).

Per basis ``k`` the constraints are built from the cofactor numerators
``mu~ = -cof(H) h_v`` so that ``Z' = |H|^2 Z`` stays bounded where the
basis degenerates.  The unnormalized candidate ``B'`` (unit Frobenius norm,
arbitrary sign) gives ``G' = B' cof(H) B'^T``, proportional to the
anisotropy.  Summing the per-basis tau equations with weights ``|H|``
yields one globally invertible system

    M grad log tau = sum_k (2/3 |H| <grad cof(H)_jl, B'_l> B'_j - 1/3 G' grad|H|),
    M = sum_k |H| G',      gamma_tilde = M / det(M)^(1/3).

Only measured fields (``H`` and the cross densities) are differentiated by
grid stencils; derivatives of cofactors, determinants and ``mu~`` follow
from the exact product rule.  This keeps the pipeline division-free and
avoids differencing the cubic ``|H|``, whose stencil error is amplified
where ``M`` is poorly conditioned.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aniso import HypothesisViolation, constraint_matrices, stack_columns
from .elliptic import integrate_gradient
from .forward import PowerDensitySet
from .grid import Grid3, grad
from .smalg import (cofactor3, cofactor3_gradient, det3, det3_gradient, inv3, min_eig_sym3,
                    null_direction)

# M must satisfy lambda_min(M) > SPD_RTOL * trace(M)
SPD_RTOL = 1e-10


def stabilized_constraints(pd: PowerDensitySet, dH=None):
    """Eight division-free constraint matrices ``(..., 8, 3, 3)`` of one basis."""
    H = pd.H
    if dH is None:
        dH = grad(H, pd.grid)
    detH = det3(H)
    cof = cofactor3(H)
    ddet = det3_gradient(H, dH)
    dcof = cofactor3_gradient(H, dH)
    mats = []
    for h_v in pd.cross:
        mu_t = -np.einsum("...ij,...j->...i", cof, h_v)
        dmu_t = -(np.einsum("...ijp,...j->...ip", dcof, h_v)
                  + np.einsum("...ij,...jp->...ip", cof, grad(h_v, pd.grid)))
        # Z'[p, i] = |H| d_p mu~_i - mu~_i d_p |H|
        Zp = detH[..., None, None] * np.swapaxes(dmu_t, -1, -2) \
            - ddet[..., :, None] * mu_t[..., None, :]
        mats.append(constraint_matrices(Zp, H))
    return np.concatenate(mats, axis=-3)


def local_candidate(mats, H):
    """Sign-free unit candidate ``B'`` and ``G' = B' cof(H) B'^T``."""
    nd = null_direction(stack_columns(mats))
    Bp = nd.b
    Gp = Bp @ cofactor3(H) @ np.swapaxes(Bp, -1, -2)
    Gp = 0.5 * (Gp + np.swapaxes(Gp, -1, -2))
    return Bp, Gp, nd


@dataclass
class BasisBundle:
    """Per-basis quantities of the stabilized algorithm."""

    label: str
    H: np.ndarray
    detH: np.ndarray
    cof: np.ndarray
    Bp: np.ndarray
    Gp: np.ndarray
    dH: np.ndarray = field(repr=False, default=None)
    smin: np.ndarray = field(repr=False, default=None)

    def gamma_tilde(self, floor=1e-300):
        """Individual estimate ``G' / det(G')^(1/3)``; NaN where ``det G' <= floor``."""
        d = det3(self.Gp)
        ok = d > floor
        scale = np.where(ok, np.cbrt(np.where(ok, d, 1.0)), np.nan)
        return self.Gp / scale[..., None, None]

    def frobenius_of_estimate(self, floor=1e-300):
        """``||G'/det(G')^(1/3)||_F``, +inf where the estimate is undefined."""
        d = det3(self.Gp)
        nG = np.linalg.norm(self.Gp, axis=(-2, -1))
        ok = d > floor
        return np.where(ok, nG / np.cbrt(np.where(ok, d, 1.0)), np.inf)


def make_bundle(pd: PowerDensitySet, label="") -> BasisBundle:
    if len(pd.cross) < 2:
        raise ValueError("each basis needs two extra solutions")
    dH = grad(pd.H, pd.grid)
    mats = stabilized_constraints(pd, dH)
    Bp, Gp, nd = local_candidate(mats, pd.H)
    return BasisBundle(label, pd.H, det3(pd.H), cofactor3(pd.H), Bp, Gp, dH, nd.smin)


def global_system(bundles: Sequence[BasisBundle], grid: Grid3):
    """``M`` and the right-hand side of ``M grad log tau = rhs``."""
    M = np.zeros(grid.shape + (3, 3))
    rhs = np.zeros(grid.shape + (3,))
    for b in bundles:
        dH = grad(b.H, grid) if b.dH is None else b.dH
        dcof = cofactor3_gradient(b.H, dH)                    # [..., j, l, p]
        c = np.einsum("...jlp,...pl->...j", dcof, b.Bp)
        w = np.einsum("...j,...pj->...p", c, b.Bp)
        ddet = det3_gradient(b.H, dH)
        M += b.detH[..., None, None] * b.Gp
        rhs += (2.0 / 3.0) * b.detH[..., None] * w \
            - (1.0 / 3.0) * np.einsum("...pq,...q->...p", b.Gp, ddet)
    return M, rhs


def check_spd(M):
    lam = min_eig_sym3(M)
    tr = np.trace(M, axis1=-2, axis2=-1)
    ratio = lam / np.where(tr > 0, tr, 1.0)
    bad = ~(ratio > SPD_RTOL) | ~(tr > 0)
    if np.any(bad):
        i = np.unravel_index(np.argmin(np.where(tr > 0, ratio, -np.inf)), ratio.shape)
        raise HypothesisViolation(
            f"assembled matrix M not positive definite at voxel {tuple(int(v) for v in i)} "
            f"(lambda_min/trace = {ratio[i]:.3e}); the bases do not cover the domain",
            index=i, detail={"bad_voxels": int(bad.sum())})


def assemble_and_solve(bundles: Sequence[BasisBundle], tau_boundary, grid: Grid3, tol=1e-10):
    """``tau`` from one global Poisson solve and ``gamma_tilde_M = M / det(M)^(1/3)``."""
    if len(bundles) < 1:
        raise ValueError("need at least one basis")
    M, rhs = global_system(bundles, grid)
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    check_spd(M)
    w = np.einsum("...pq,...q->...p", inv3(M, floor=0.0), rhs)
    tau = np.exp(integrate_gradient(w, np.log(tau_boundary), grid, tol))
    gM = M / np.cbrt(det3(M))[..., None, None]
    return tau, gM


def _unit_det(S, what):
    d = det3(S)
    if np.any(~(d > 0)):
        i = tuple(int(v) for v in np.argwhere(~(d > 0))[0])
        raise HypothesisViolation(f"{what}: non-positive determinant at voxel {i}", index=i)
    return S / np.cbrt(d)[..., None, None]


def combine_det_weighted(bundles: Sequence[BasisBundle]):
    """``sum_j |H_j| gt_j``, normalized to unit determinant."""
    S = 0.0
    for b in bundles:
        gt = np.nan_to_num(b.gamma_tilde(), nan=0.0)
        S = S + b.detH[..., None, None] * gt
    return _unit_det(S, "det-weighted combination")


def combine_frobenius(bundles: Sequence[BasisBundle]):
    """Drop the estimate with the largest Frobenius norm, sum the others
    normalized by their Frobenius norms, renormalize to unit determinant.

    ``gt / ||gt||_F == G' / ||G'||_F``, so undefined estimates never need
    to be formed; they rank as +inf and are excluded first.
    """
    if len(bundles) < 2:
        raise ValueError("Frobenius weighting needs at least two bases")
    norms = np.stack([b.frobenius_of_estimate() for b in bundles], axis=-1)
    # argmax returns the first maximum: ties exclude the lowest index
    drop = np.argmax(norms, axis=-1)
    S = 0.0
    for k, b in enumerate(bundles):
        nG = np.linalg.norm(b.Gp, axis=(-2, -1))
        keep = (drop != k) & (nG > 0)
        unit = b.Gp / np.where(nG > 0, nG, 1.0)[..., None, None]
        S = S + np.where(keep[..., None, None], unit, 0.0)
    return _unit_det(S, "Frobenius-weighted combination")


@dataclass
class StabilizedResult:
    tau: np.ndarray
    gamma_tilde_M: np.ndarray
    gamma_tilde_H: np.ndarray
    gamma_tilde_F: np.ndarray
    bundles: list

    @property
    def gamma(self):
        return self.tau[..., None, None] * self.gamma_tilde_F


def reconstruct(pds: Sequence[PowerDensitySet], tau_boundary, tol=1e-10, labels=None) -> StabilizedResult:
    labels = labels or [f"U{k + 1}" for k in range(len(pds))]
    bundles = [make_bundle(pd, lab) for pd, lab in zip(pds, labels)]
    grid = pds[0].grid
    tau, gM = assemble_and_solve(bundles, tau_boundary, grid, tol)
    gH = combine_det_weighted(bundles)
    gF = combine_frobenius(bundles) if len(bundles) > 1 else gH
    return StabilizedResult(tau, gM, gH, gF, bundles)
