"""Batched 3x3 linear algebra and null directions of 9x8 constraint stacks.

All routines broadcast over leading axes: a "matrix" argument has shape
``(..., 3, 3)`` indexed ``[..., row, col]``.  3x3 matrices are vectorized
column-major, ``vec(M) = (M[:, 0], M[:, 1], M[:, 2])``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

DET_FLOOR = 1e-12
# sigma_8 / sigma_1 below this means the 8 constraints are not independent
RANK_TOL = 1e-8


class SingularMatrixError(ArithmeticError):
    """Raised when a per-voxel matrix cannot be inverted or factored."""

    def __init__(self, message, index=None, value=None):
        super().__init__(message)
        self.index = index
        self.value = value


def _where(mask):
    idx = np.argwhere(mask)
    return tuple(int(v) for v in idx[0]) if idx.size else None


def det3(m):
    m = np.asarray(m, dtype=np.float64)
    return (m[..., 0, 0] * (m[..., 1, 1] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 1])
            - m[..., 0, 1] * (m[..., 1, 0] * m[..., 2, 2] - m[..., 1, 2] * m[..., 2, 0])
            + m[..., 0, 2] * (m[..., 1, 0] * m[..., 2, 1] - m[..., 1, 1] * m[..., 2, 0]))


def cofactor3(m):
    """Cofactor matrix: ``m @ cofactor3(m).T == det3(m) * I``."""
    m = np.asarray(m, dtype=np.float64)
    c = np.empty_like(m)
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            # cyclic index order makes the sign (-1)^(i+j) implicit
            c[..., i, j] = m[..., i1, j1] * m[..., i2, j2] - m[..., i1, j2] * m[..., i2, j1]
    return c


def cofactor3_gradient(m, dm):
    """Derivatives of :func:`cofactor3` by the product rule.

    ``dm[..., i, j, p]`` holds ``d_p m_ij``; the result has the same layout.
    """
    m = np.asarray(m, dtype=np.float64)
    dm = np.asarray(dm, dtype=np.float64)
    c = np.empty(np.broadcast_shapes(m.shape + (1,), dm.shape))
    for i in range(3):
        i1, i2 = (i + 1) % 3, (i + 2) % 3
        for j in range(3):
            j1, j2 = (j + 1) % 3, (j + 2) % 3
            c[..., i, j, :] = (dm[..., i1, j1, :] * m[..., i2, j2, None]
                               + m[..., i1, j1, None] * dm[..., i2, j2, :]
                               - dm[..., i1, j2, :] * m[..., i2, j1, None]
                               - m[..., i1, j2, None] * dm[..., i2, j1, :])
    return c


def det3_gradient(m, dm):
    """``d_p det m = <cof m, d_p m>`` (Jacobi's formula)."""
    return np.einsum("...ab,...abp->...p", cofactor3(m), dm)


def inv3(m, floor=DET_FLOOR):
    m = np.asarray(m, dtype=np.float64)
    d = det3(m)
    bad = ~(np.abs(d) > floor)
    if np.any(bad):
        at = _where(bad)
        raise SingularMatrixError(
            f"singular 3x3 matrix (|det| <= {floor:g}) at index {at}",
            index=at, value=float(np.asarray(d)[at] if at else d))
    return np.swapaxes(cofactor3(m), -1, -2) / d[..., None, None]


def transition_matrix(h):
    """Lower-triangular ``T`` with ``T @ h @ T.T == I`` for SPD ``h``.

    Closed form in terms of the leading minors ``H11``, ``d^2 = H11 H22 -
    H12^2`` and ``D^2 = det h``; this is the inverse of the Cholesky factor.
    """
    h = np.asarray(h, dtype=np.float64)
    h11, h12, h13 = h[..., 0, 0], h[..., 0, 1], h[..., 0, 2]
    h22, h23 = h[..., 1, 1], h[..., 1, 2]
    d2 = h11 * h22 - h12 ** 2
    D2 = det3(h)
    for name, minor in (("H11", h11), ("H11*H22-H12^2", d2), ("det H", D2)):
        bad = ~(minor > 0)
        if np.any(bad):
            at = _where(bad)
            raise SingularMatrixError(
                f"matrix not positive definite: leading minor {name} <= 0 at index {at}",
                index=at)
    s11 = np.sqrt(h11)
    d = np.sqrt(d2)
    D = np.sqrt(D2)
    t = np.zeros_like(h)
    t[..., 0, 0] = 1.0 / s11
    t[..., 1, 0] = -h12 / (s11 * d)
    t[..., 1, 1] = s11 / d
    t[..., 2, 0] = (h12 * h23 - h22 * h13) / (d * D)
    t[..., 2, 1] = (h12 * h13 - h11 * h23) / (d * D)
    t[..., 2, 2] = d / D
    return t


def vec(m):
    m = np.asarray(m)
    return np.swapaxes(m, -1, -2).reshape(m.shape[:-2] + (9,))


def unvec(v):
    v = np.asarray(v)
    return np.swapaxes(v.reshape(v.shape[:-1] + (3, 3)), -1, -2)


class NullDirection(NamedTuple):
    b: np.ndarray          # (..., 3, 3), unit Frobenius norm, sign arbitrary
    smin: np.ndarray       # 8th singular value of the stack
    gap: np.ndarray        # smin / sigma_1
    deficient: np.ndarray  # bool, constraints not independent


def null_direction(stack, rank_tol=RANK_TOL) -> NullDirection:
    """Unit matrix orthogonal to the 8 columns of a ``(..., 9, 8)`` stack.

    ``b`` is the 9th left singular vector of the stack.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.shape[-2:] != (9, 8):
        raise ValueError(f"constraint stack must be (..., 9, 8), got {stack.shape}")
    if not np.all(np.isfinite(stack)):
        raise ValueError("constraint stack has non-finite entries")
    u, s, _ = np.linalg.svd(stack, full_matrices=True)
    b = unvec(u[..., :, 8])
    smin = s[..., 7]
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.where(s[..., 0] > 0, smin / s[..., 0], 0.0)
    return NullDirection(b, smin, gap, gap < rank_tol)


def signed_cbrt(x):
    """Real cube root extended to negative numbers, ``(-x)^(1/3) = -x^(1/3)``."""
    return np.cbrt(x)


def sym_sqrt(m):
    """Principal square root of symmetric positive semi-definite matrices."""
    w, v = np.linalg.eigh(m)
    return (v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(v, -1, -2)


def min_eig_sym3(m):
    """Smallest eigenvalue of symmetric 3x3 matrices via the closed-form cubic."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m, axis1=-2, axis2=-1)
    q = tr / 3.0
    p1 = m[..., 0, 1] ** 2 + m[..., 0, 2] ** 2 + m[..., 1, 2] ** 2
    p2 = ((m[..., 0, 0] - q) ** 2 + (m[..., 1, 1] - q) ** 2
          + (m[..., 2, 2] - q) ** 2 + 2.0 * p1)
    p = np.sqrt(p2 / 6.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        bmat = (m - q[..., None, None] * np.eye(3)) / p[..., None, None]
        r = np.clip(det3(bmat) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam_min = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    return np.where(p > 0, lam_min, q)
