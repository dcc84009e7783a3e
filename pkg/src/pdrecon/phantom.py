"""Interlocked-tori conductivity phantoms.

A torus ``(c, phi, R, r)`` contributes a Gaussian tube ``chi`` of width
``r`` around its generating circle, either as a scalar bump or as the
rank-one tensor ``chi (xc x phi) (xc x phi)^T`` pointing along the circle.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .grid import Grid3, SymTensorField
from .smalg import det3, min_eig_sym3

# points closer than this to the torus axis (or centre) get chi = 0
AXIS_EPS = 1e-12


class EllipticityError(ValueError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class Torus:
    c: tuple
    phi: tuple
    R: float
    r: float

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        if abs(np.linalg.norm(phi) - 1.0) > 1e-12:
            raise ValueError("torus axis phi must be a unit vector")
        if not 0 < self.r < self.R:
            raise ValueError("torus radii must satisfy 0 < r < R")
        object.__setattr__(self, "c", tuple(float(v) for v in self.c))
        object.__setattr__(self, "phi", tuple(float(v) for v in phi))


# the four tori of the interlocked phantoms
T_U1 = Torus((0.0, 0.0, 0.2), (1.0, 0.0, 0.0), 0.4, 0.1)
T_D1 = Torus((0.0, 0.0, -0.2), (0.0, 1.0, 0.0), 0.4, 0.1)
T_U2 = Torus((0.0, 0.0, 0.5), (1.0, 0.0, 0.0), 0.8, 0.1)
T_D2 = Torus((0.0, 0.0, -0.5), (0.0, 1.0, 0.0), 0.8, 0.1)


def _radial(t: Torus, x):
    x = np.asarray(x, dtype=np.float64)
    c = np.asarray(t.c)
    phi = np.asarray(t.phi)
    d = x - c
    w = d - (d @ phi)[..., None] * phi
    return d, w, np.linalg.norm(w, axis=-1)


def project_to_circle(t: Torus, x):
    """Closest point of the generating circle; NaN on the torus axis."""
    _, w, nw = _radial(t, x)
    on_axis = nw < AXIS_EPS
    safe = np.where(on_axis, 1.0, nw)
    p = np.asarray(t.c) + t.R * w / safe[..., None]
    return np.where(on_axis[..., None], np.nan, p)


def kernel(t: Torus, x):
    """Gaussian tube ``exp(-|x - P(x)|^2 / 2r^2)``; 0 on the axis."""
    x = np.asarray(x, dtype=np.float64)
    _, w, nw = _radial(t, x)
    # |x - P|^2 = (|w| - R)^2 + <x - c, phi>^2, no need to form P
    axial2 = np.sum((x - np.asarray(t.c) - w) ** 2, axis=-1)
    dist2 = (nw - t.R) ** 2 + axial2
    return np.where(nw < AXIS_EPS, 0.0, np.exp(-dist2 / (2.0 * t.r ** 2)))


def rank_one_tensor(t: Torus, x):
    """``chi_T(x) (xc x phi)(xc x phi)^T`` with ``xc`` the unit direction from c."""
    d, _, _ = _radial(t, x)
    nd = np.linalg.norm(d, axis=-1)
    at_centre = nd < AXIS_EPS
    xc = d / np.where(at_centre, 1.0, nd)[..., None]
    e = np.cross(xc, np.asarray(t.phi))
    chi = np.where(at_centre, 0.0, kernel(t, x))
    return chi[..., None, None] * e[..., :, None] * e[..., None, :]


@dataclass
class PhantomSpec:
    kind: str = "gamma1"
    k: Optional[float] = None
    tori: list = field(default_factory=list)
    tensor: bool = True

    def resolved(self):
        """Amplitude, tori and tensor flag with the preset defaults filled in."""
        if self.kind == "gamma1":
            return (2.0 if self.k is None else self.k), [T_U1, T_D1], False
        if self.kind == "gamma2":
            return (2.0 if self.k is None else self.k), [T_U2, T_D2], True
        if self.kind == "gamma3":
            return (20.0 if self.k is None else self.k), [T_U2, T_D2], True
        if self.kind == "custom":
            tori = [t if isinstance(t, Torus) else Torus(**t) for t in self.tori]
            return (1.0 if self.k is None else self.k), tori, self.tensor
        raise ValueError(f"unknown phantom kind {self.kind!r}")

    def to_dict(self):
        amp, tori, tensor = self.resolved()
        return {"kind": self.kind, "k": amp, "tensor": tensor,
                "tori": [asdict(t) for t in tori]}

    @classmethod
    def from_dict(cls, d):
        return cls(kind=d.get("kind", "gamma1"), k=d.get("k"),
                   tori=d.get("tori", []), tensor=d.get("tensor", True))


def evaluate(spec: PhantomSpec, x):
    """Conductivity tensors ``(..., 3, 3)`` at points ``x`` of shape ``(..., 3)``."""
    amp, tori, tensor = spec.resolved()
    if amp < 0:
        raise ValueError("phantom amplitude must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    gamma = np.broadcast_to(np.eye(3), x.shape[:-1] + (3, 3)).copy()
    for t in tori:
        if tensor:
            gamma += amp * rank_one_tensor(t, x)
        else:
            gamma += amp * kernel(t, x)[..., None, None] * np.eye(3)
    return gamma


def build(spec: PhantomSpec, g: Grid3, kappa_max=1e6) -> SymTensorField:
    gamma = evaluate(spec, g.points())
    lam = min_eig_sym3(gamma)
    worst = np.unravel_index(np.argmin(lam), lam.shape)
    if lam[worst] <= 1.0 / kappa_max:
        raise EllipticityError(
            f"conductivity not uniformly elliptic: min eigenvalue {lam[worst]:.3e} "
            f"at voxel {tuple(int(i) for i in worst)}", index=worst)
    return SymTensorField.from_full(g, gamma)


def tau_and_anisotropy(gamma):
    """Split ``gamma = tau * gamma_tilde`` with ``det gamma_tilde = 1``."""
    tau = np.cbrt(det3(gamma))
    return tau, gamma / tau[..., None, None]
