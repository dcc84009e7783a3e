"""Uniform Cartesian grid on (-1, 1)^3, field containers and FD operators.

Arrays are indexed ``[i, j, k, ...]`` with ``i`` along x.  Component axes
trail the three spatial axes.  On disk the voxel order is x fastest, then y,
then z (see :mod:`pdrecon.fieldio`).

Derivatives are second-order central differences in the interior and
three-point one-sided second-order differences on the faces, so every
stencil reproduces quadratics exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

AXES = {"x": 0, "y": 1, "z": 2}

# order of the 6 stored components of a symmetric tensor
SYM_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid3:
    """Node grid covering [-1, 1]^3 with ``n`` points per axis."""

    n: tuple[int, int, int]

    def __post_init__(self):
        n = tuple(int(v) for v in np.broadcast_to(self.n, (3,)))
        if min(n) < 3:
            raise GridError(f"need at least 3 points per axis, got {n}")
        object.__setattr__(self, "n", n)

    @classmethod
    def cube(cls, n: int) -> "Grid3":
        return cls((n, n, n))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.n

    @property
    def origin(self) -> tuple[float, float, float]:
        return (-1.0, -1.0, -1.0)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(2.0 / (m - 1) for m in self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    def axis(self, a: int) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n[a])

    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Full coordinate arrays ``X, Y, Z`` of shape ``self.shape``."""
        return np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")

    def points(self) -> np.ndarray:
        return np.stack(self.coords(), axis=-1)

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[0, :, :] = m[-1, :, :] = True
        m[:, 0, :] = m[:, -1, :] = True
        m[:, :, 0] = m[:, :, -1] = True
        return m

    def nearest_index(self, a: int, value: float) -> int:
        return int(np.argmin(np.abs(self.axis(a) - value)))

    def refined(self) -> "Grid3":
        """Grid with every cell halved (``2n - 1`` points per axis)."""
        return Grid3(tuple(2 * m - 1 for m in self.n))


# ---------------------------------------------------------------------------
# field containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Field:
    grid: Grid3
    data: np.ndarray

    kind: ClassVar[str] = ""
    comp_shape: ClassVar[tuple[int, ...]] = ()

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        expected = self.grid.shape + self.comp_shape
        if data.shape != expected:
            raise GridError(
                f"{type(self).__name__}: data shape {data.shape} != {expected}")
        if not np.all(np.isfinite(data)):
            raise GridError(f"{type(self).__name__}: non-finite values")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def ncomp(self) -> int:
        return int(np.prod(self.comp_shape, dtype=int))


class ScalarField(Field):
    kind = "scalar"
    comp_shape = ()


class VectorField(Field):
    kind = "vector"
    comp_shape = (3,)


class SymTensorField(Field):
    """Symmetric 3x3 tensor per voxel, stored as (xx, xy, xz, yy, yz, zz)."""

    kind = "tensor6"
    comp_shape = (6,)

    @classmethod
    def from_full(cls, grid: Grid3, m: np.ndarray) -> "SymTensorField":
        return cls(grid, sym_to_six(m))

    def full(self) -> np.ndarray:
        return six_to_sym(self.data)


class Mat3Field(Field):
    """General 3x3 matrix per voxel, ``data[..., row, col]``."""

    kind = "mat9"
    comp_shape = (3, 3)


FIELD_KINDS = {c.kind: c for c in (ScalarField, VectorField, SymTensorField, Mat3Field)}


def sym_to_six(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m)
    s = 0.5 * (m + np.swapaxes(m, -1, -2))
    return np.stack([s[..., i, j] for i, j in SYM_INDEX], axis=-1)


def six_to_sym(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s)
    out = np.empty(s.shape[:-1] + (3, 3))
    for c, (i, j) in enumerate(SYM_INDEX):
        out[..., i, j] = s[..., c]
        out[..., j, i] = s[..., c]
    return out


# ---------------------------------------------------------------------------
# operators on raw arrays
# ---------------------------------------------------------------------------

def grad(a: np.ndarray, grid: Grid3) -> np.ndarray:
    """Gradient of an array ``(nx, ny, nz, *c)`` -> ``(nx, ny, nz, *c, 3)``."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[:3] != grid.shape:
        raise GridError(f"array shape {a.shape} does not match grid {grid.shape}")
    parts = np.gradient(a, *grid.spacing, axis=(0, 1, 2), edge_order=2)
    return np.stack(parts, axis=-1)


def div(v: np.ndarray, grid: Grid3) -> np.ndarray:
    """Divergence of ``(nx, ny, nz, *c, 3)`` -> ``(nx, ny, nz, *c)``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[:3] != grid.shape or v.shape[-1] != 3:
        raise GridError(f"vector array shape {v.shape} does not match grid {grid.shape}")
    out = np.zeros(v.shape[:-1])
    for a in range(3):
        out += np.gradient(v[..., a], grid.spacing[a], axis=a, edge_order=2)
    return out


# ---------------------------------------------------------------------------
# field-level API
# ---------------------------------------------------------------------------

def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, grad(f.data, f.grid))


def divergence(v: VectorField) -> ScalarField:
    return ScalarField(v.grid, div(v.data, v.grid))


def sample_line(f: Field, axis: str, j: int, k: int) -> np.ndarray:
    """Values of ``f`` along a grid line, ordered by increasing coordinate.

    ``j, k`` are the indices along the two remaining axes, in x, y, z order
    (e.g. for ``axis="y"`` they index x and z).
    """
    if axis not in AXES:
        raise GridError(f"axis must be one of x, y, z, got {axis!r}")
    a = AXES[axis]
    others = [b for b in range(3) if b != a]
    for b, idx in zip(others, (j, k)):
        if not 0 <= idx < f.grid.n[b]:
            raise GridError(f"transverse index {idx} out of range for axis {b}")
    sl = [slice(None)] * 3
    sl[others[0]] = j
    sl[others[1]] = k
    return np.array(f.data[tuple(sl)])
