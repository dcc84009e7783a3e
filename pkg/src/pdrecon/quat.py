"""Quaternions as ``(..., 4)`` arrays ``(q0, q1, q2, q3)`` and the
norm-preserving exponential stepper.

A unit quaternion ``q`` acts on vectors by ``v -> q v conj(q)``; the columns
``R_i = q e_i conj(q)`` form a rotation matrix, with ``q`` and ``-q`` giving
the same rotation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-10
# below this angle sin(x)/x is replaced by its Taylor series
SINC_SERIES_BELOW = 1e-4


class NotUnitQuaternion(ValueError):
    pass


def hmul(p, q):
    """Hamilton product, broadcasting over leading axes."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    p0, p1, p2, p3 = (p[..., i] for i in range(4))
    q0, q1, q2, q3 = (q[..., i] for i in range(4))
    return np.stack([
        p0 * q0 - p1 * q1 - p2 * q2 - p3 * q3,
        p0 * q1 + p1 * q0 + p2 * q3 - p3 * q2,
        p0 * q2 - p1 * q3 + p2 * q0 + p3 * q1,
        p0 * q3 + p1 * q2 - p2 * q1 + p3 * q0,
    ], axis=-1)


def conj(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def pure(v):
    """Embed 3-vectors as quaternions with zero scalar part."""
    v = np.asarray(v, dtype=np.float64)
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


def _check_unit(q, tol=UNIT_TOL):
    n2 = np.sum(np.asarray(q) ** 2, axis=-1)
    if not np.all(np.abs(n2 - 1.0) <= tol):
        worst = float(np.max(np.abs(n2 - 1.0)))
        raise NotUnitQuaternion(f"quaternion not unit (| |q|^2 - 1 | = {worst:.3e})")


def rotate(q, v, check=True):
    """``q v conj(q)`` for unit ``q`` and 3-vectors ``v``."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if check:
        _check_unit(q)
    w = q[..., :1]
    u = q[..., 1:]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def to_rotation(q, check=True):
    """Rotation matrix whose columns are ``q e_i conj(q)``."""
    q = np.asarray(q, dtype=np.float64)
    if check:
        _check_unit(q)
    w, x, y, z = (q[..., i] for i in range(4))
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def from_rotation(r):
    """Unit quaternion lift of rotation matrices, chosen with ``q0 >= 0``."""
    r = np.asarray(r, dtype=np.float64)
    # Shepperd: branch on the largest of the four squared components
    tr = np.trace(r, axis1=-2, axis2=-1)
    cand = np.stack([tr, r[..., 0, 0], r[..., 1, 1], r[..., 2, 2]], axis=-1)
    k = np.argmax(cand, axis=-1)
    q = np.empty(r.shape[:-2] + (4,))
    s = np.sqrt(np.maximum(1.0 + 2.0 * cand.max(axis=-1) - tr, 1e-300))
    # k == 0
    m0 = k == 0
    q[m0, 0] = 0.5 * s[m0]
    q[m0, 1] = (r[m0, 2, 1] - r[m0, 1, 2]) / (2 * s[m0])
    q[m0, 2] = (r[m0, 0, 2] - r[m0, 2, 0]) / (2 * s[m0])
    q[m0, 3] = (r[m0, 1, 0] - r[m0, 0, 1]) / (2 * s[m0])
    for a in (1, 2, 3):
        m = k == a
        b, c = a % 3 + 1, (a + 1) % 3 + 1
        i, j, l = a - 1, b - 1, c - 1
        q[m, a] = 0.5 * s[m]
        q[m, 0] = (r[m, l, j] - r[m, j, l]) / (2 * s[m])
        q[m, b] = (r[m, j, i] + r[m, i, j]) / (2 * s[m])
        q[m, c] = (r[m, l, i] + r[m, i, l]) / (2 * s[m])
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return np.where(q[..., :1] < 0, -q, q)


def nearest_rotation(m):
    """Orthogonal polar factor of ``m`` (nearest rotation in Frobenius norm)."""
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    u = u.copy()
    u[..., :, 2] *= d[..., None]
    return u @ vt


# ---------------------------------------------------------------------------
# exponential stepper
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepMatrices:
    """Coefficient vectors of the right (``a``) and left (``b``) rates."""

    a: np.ndarray
    b: np.ndarray


def right_matrix(a):
    """4x4 ``A`` with ``A @ q == q * a`` for the pure quaternion ``a``."""
    a = np.asarray(a, dtype=np.float64)
    a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2]
    z = np.zeros_like(a1)
    return np.stack([
        np.stack([z, -a1, -a2, -a3], -1),
        np.stack([a1, z, a3, -a2], -1),
        np.stack([a2, -a3, z, a1], -1),
        np.stack([a3, a2, -a1, z], -1),
    ], axis=-2)


def left_matrix(b):
    """4x4 ``B`` with ``B @ q == b * q`` for the pure quaternion ``b``."""
    b = np.asarray(b, dtype=np.float64)
    b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2]
    z = np.zeros_like(b1)
    return np.stack([
        np.stack([z, -b1, -b2, -b3], -1),
        np.stack([b1, z, -b3, b2], -1),
        np.stack([b2, b3, z, -b1], -1),
        np.stack([b3, -b2, b1, z], -1),
    ], axis=-2)


def _half_angle_factors(v, h):
    """``cos(h|v|/2)`` and ``sin(h|v|/2)/|v|`` with the removable singularity."""
    nv = np.linalg.norm(v, axis=-1)
    theta = 0.5 * h * nv
    small = theta < SINC_SERIES_BELOW
    safe = np.where(small, 1.0, nv)
    s_over = np.where(small, 0.5 * h * (1.0 - theta ** 2 / 6.0), np.sin(theta) / safe)
    return np.cos(theta), s_over


def exp_factor(m, v, h):
    """``exp(h M / 2)`` for ``M`` built from ``v`` (``M^2 = -|v|^2 I``)."""
    c, s = _half_angle_factors(v, h)
    return c[..., None, None] * np.eye(4) + s[..., None, None] * m


def exp_step(q, s: StepMatrices, h: float):
    """One step ``Q <- exp(hA/2) exp(hB/2) Q`` of ``dq/dt = (q a + b q)/2``."""
    q = np.asarray(q, dtype=np.float64)
    ea = exp_factor(right_matrix(s.a), s.a, h)
    eb = exp_factor(left_matrix(s.b), s.b, h)
    qb = np.einsum("...ij,...j->...i", eb, q)
    return np.einsum("...ij,...j->...i", ea, qb)


class Quaternion:
    """Scalar quaternion value type; arithmetic delegates to :func:`hmul`."""

    __slots__ = ("q",)

    def __init__(self, q0=1.0, q1=0.0, q2=0.0, q3=0.0):
        self.q = np.array([q0, q1, q2, q3], dtype=np.float64)
        if not np.all(np.isfinite(self.q)):
            raise ValueError("quaternion components must be finite")

    @classmethod
    def from_array(cls, a):
        return cls(*np.asarray(a, dtype=np.float64).reshape(4))

    def __mul__(self, other):
        if isinstance(other, Quaternion):
            return Quaternion.from_array(hmul(self.q, other.q))
        return Quaternion.from_array(self.q * float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Quaternion.from_array(-self.q)

    def __add__(self, other):
        return Quaternion.from_array(self.q + other.q)

    def __sub__(self, other):
        return Quaternion.from_array(self.q - other.q)

    def __eq__(self, other):
        return isinstance(other, Quaternion) and np.array_equal(self.q, other.q)

    def __repr__(self):
        return "Quaternion({:.6g}, {:.6g}, {:.6g}, {:.6g})".format(*self.q)

    def conj(self):
        return Quaternion.from_array(conj(self.q))

    def norm(self):
        return float(np.linalg.norm(self.q))

    @property
    def scalar(self):
        return float(self.q[0])

    @property
    def vector(self):
        return self.q[1:].copy()

    def rotate(self, v):
        return rotate(self.q, v)

    def to_rotation(self):
        return to_rotation(self.q)
