"""Isotropic reconstruction from the power densities of three solutions.

Pipeline: transition matrices ``T`` (``T H T^T = I``), connection
coefficients ``V_ik = (grad t_ij) t^jk``, a quaternion lift ``q`` of the
rotation ``R = S T^T`` integrated along grid lines with the exponential
stepper, and finally ``sigma = (det H)^(1/3) exp(v)`` from a Poisson solve.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import quat
from .elliptic import integrate_gradient
from .grid import AXES, Grid3, grad
from .smalg import det3, transition_matrix

# cyclic triples (i, j1, j2) used by the right-rate coefficients
_CYCLIC = ((0, 1, 2), (1, 2, 0), (2, 0, 1))


class NormDriftError(RuntimeError):
    pass


@dataclass
class ConnectionField:
    """``V[..., i, k, :]`` is the vector ``V_ik``; ``Vs``/``Va`` its (anti)symmetric parts in ``(i, k)``."""

    V: np.ndarray
    Vs: np.ndarray
    Va: np.ndarray


def transition_field(H):
    """``T`` and ``T^{-1}`` per voxel for an SPD field ``H`` of shape ``(..., 3, 3)``."""
    T = transition_matrix(H)
    Tinv = np.linalg.cholesky(H)
    return T, Tinv


def connection_field(T, Tinv, grid: Grid3) -> ConnectionField:
    dT = grad(T, grid)                                   # [..., i, j, m]
    V = np.einsum("...ijm,...jk->...ikm", dT, Tinv)
    Vt = np.swapaxes(V, -3, -2)
    return ConnectionField(V, 0.5 * (V + Vt), 0.5 * (V - Vt))


def log_det_gradient(H, grid: Grid3):
    """``G = (1/6) grad log det H``."""
    return grad(np.log(det3(H)), grid) / 6.0


def step_coefficients(q, Vs, Va, G, m: int) -> quat.StepMatrices:
    """Rate vectors ``a^m(q)`` and ``b^m`` for ``d_m q = (q a + b q)/2``.

    ``Vs, Va`` have shape ``(..., 3, 3, 3)``, ``G`` shape ``(..., 3)``.
    """
    R = quat.to_rotation(q, check=False)
    t = R[..., m, :]                                     # conj(q) e_m conj(q)^* = row m of R
    W = np.einsum("...pl,...ikp->...ikl", R, Vs)         # W[i,k,l] = (T_qbar Vs_ik)_l
    trW = np.einsum("...ikk->...i", W)
    a = np.empty(q.shape[:-1] + (3,))
    for i, j1, j2 in _CYCLIC:
        a[..., i] = (Va[..., j1, j2, m]
                     + np.einsum("...k,...k->...", t, W[..., j2, :, j1] - W[..., j1, :, j2])
                     + (2.0 / 3.0) * (trW[..., j1] * t[..., j2] - trW[..., j2] * t[..., j1]))
    e = np.zeros(3)
    e[m] = 1.0
    b = np.cross(G, e)
    return quat.StepMatrices(a, np.broadcast_to(b, a.shape))


def _orient(arr, axis, sign):
    arr = np.moveaxis(arr, axis, 0)
    return arr[::-1] if sign < 0 else arr


def integrate_rotation(conn: ConnectionField, G, seed, grid: Grid3, axis="x", sign=+1,
                       drift_tol=1e-10):
    """Integrate the quaternion system along every grid line of ``axis``.

    ``seed`` holds unit quaternions on the entry face (shape of the face
    plus ``(4,)``); lines are traversed in direction ``sign``.  Each step
    uses an explicit midpoint rule on the group: the data are averaged
    between neighbouring voxels, the ``q``-dependence is evaluated at a
    half-step predictor, and both factors are exact exponentials.
    """
    m = AXES[axis] if isinstance(axis, str) else int(axis)
    h = grid.spacing[m]
    Vs = _orient(conn.Vs, m, sign)
    Va = _orient(conn.Va, m, sign)
    Gs = _orient(G, m, sign)
    n = Vs.shape[0]
    q = np.empty((n,) + seed.shape)
    q[0] = seed
    for i in range(n - 1):
        c0 = step_coefficients(q[i], Vs[i], Va[i], Gs[i], m)
        c0 = quat.StepMatrices(sign * c0.a, sign * c0.b)
        q_half = quat.exp_step(q[i], c0, 0.5 * h)
        Vs_m = 0.5 * (Vs[i] + Vs[i + 1])
        Va_m = 0.5 * (Va[i] + Va[i + 1])
        G_m = 0.5 * (Gs[i] + Gs[i + 1])
        c1 = step_coefficients(q_half, Vs_m, Va_m, G_m, m)
        q[i + 1] = quat.exp_step(q[i], quat.StepMatrices(sign * c1.a, sign * c1.b), h)
    drift = np.max(np.abs(np.sum(q ** 2, axis=-1) - 1.0))
    if drift > drift_tol:
        raise NormDriftError(f"quaternion norm drift {drift:.3e} exceeds {drift_tol:g}")
    if sign < 0:
        q = q[::-1]
    return np.moveaxis(q, 0, m)


def sigma_rhs(conn: ConnectionField, R):
    """``w_m = (4/3) (T_qbar Vs_ij)_i (T_qbar e_m)_j = d_m log(sigma / det(H)^(1/3))``."""
    proj = np.einsum("...ijp,...pi->...j", conn.Vs, R)   # sum_i <Vs_ij, R_i>
    return (4.0 / 3.0) * np.einsum("...j,...mj->...m", proj, R)


def reconstruct_sigma(conn: ConnectionField, H, R, sigma_boundary, grid: Grid3, tol=1e-10):
    """Poisson solve for ``v = log(sigma / det(H)^(1/3))``; returns ``sigma``."""
    ldh = np.log(det3(H)) / 3.0
    w = sigma_rhs(conn, R)
    vb = np.log(sigma_boundary) - ldh
    v = integrate_gradient(w, vb, grid, tol)
    return np.exp(ldh + v)


def seed_from_truth(sigma, grads, T, axis="x", sign=+1):
    """Seed quaternions on the entry face from ``R = sqrt(sigma) [grad u] T^T``.

    The rotations are polar-projected, lifted with ``q0 >= 0``, then made
    sign-continuous across the face.
    """
    m = AXES[axis] if isinstance(axis, str) else int(axis)
    idx = 0 if sign > 0 else -1
    face = [slice(None)] * 3
    face[m] = idx
    face = tuple(face)
    S = np.sqrt(sigma[face])[..., None, None] * np.stack([g[face] for g in grads], axis=-1)
    R = quat.nearest_rotation(S @ np.swapaxes(T[face], -1, -2))
    return align_signs(quat.from_rotation(R))


def align_signs(q):
    """Flip quaternions on a 2-D face so that neighbours have positive inner product."""
    q = q.copy()
    for j in range(1, q.shape[0]):
        if np.dot(q[j, 0], q[j - 1, 0]) < 0:
            q[j, 0] *= -1
    for k in range(1, q.shape[1]):
        flip = np.einsum("jc,jc->j", q[:, k], q[:, k - 1]) < 0
        q[flip, k] *= -1
    return q


@dataclass
class IsoResult:
    sigma: np.ndarray
    q: np.ndarray
    R: np.ndarray
    T: np.ndarray
    conn: ConnectionField


def reconstruct(H, sigma_boundary, seed, grid: Grid3, axis="x", sign=+1, tol=1e-10,
                sweeps: Optional[list] = None, seeds: Optional[list] = None) -> IsoResult:
    """Full isotropic pipeline.

    ``sweeps``/``seeds`` optionally give extra (axis, sign) integrations whose
    rotation fields are averaged (chordally) with the main sweep.
    """
    T, Tinv = transition_field(H)
    conn = connection_field(T, Tinv, grid)
    G = log_det_gradient(H, grid)
    q = integrate_rotation(conn, G, seed, grid, axis, sign)
    R = quat.to_rotation(q, check=False)
    if sweeps:
        acc = R.copy()
        for (ax, sg), sd in zip(sweeps, seeds):
            qq = integrate_rotation(conn, G, sd, grid, ax, sg)
            acc += quat.to_rotation(qq, check=False)
        R = quat.nearest_rotation(acc)
        q = quat.from_rotation(R)
    sigma = reconstruct_sigma(conn, H, R, sigma_boundary, grid, tol)
    return IsoResult(sigma, q, R, T, conn)
