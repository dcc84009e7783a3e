"""PDTFLD01 binary field files and legacy-VTK export.

Layout of a ``.pdt`` file::

    b"PDTFLD01"                      8-byte magic
    uint32 little-endian             length L of the JSON header
    L bytes UTF-8 JSON               {"n": [...], "origin": [...],
                                      "spacing": [...], "kind": ...}
    float64 little-endian payload    voxels x fastest, then y, then z;
                                     the components of one voxel contiguous

Components per voxel: scalar 1, vector 3, tensor6 6 (xx, xy, xz, yy, yz,
zz), mat9 9 (column-major).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .grid import FIELD_KINDS, Field, Grid3, GridError, Mat3Field

MAGIC = b"PDTFLD01"


def _payload(field: Field) -> np.ndarray:
    d = field.data
    if isinstance(field, Mat3Field):
        d = np.swapaxes(d, -1, -2)  # column-major within the voxel
    d = d.reshape(field.grid.shape + (field.ncomp,))
    # (nx, ny, nz, c) -> (nz, ny, nx, c) so C order puts x fastest
    return np.ascontiguousarray(d.transpose(2, 1, 0, 3), dtype="<f8")


def write_field(path, field: Field) -> None:
    g = field.grid
    header = json.dumps({
        "n": list(g.n),
        "origin": list(g.origin),
        "spacing": list(g.spacing),
        "kind": field.kind,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(_payload(field).tobytes())


def read_field(path) -> Field:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise GridError(f"{path}: not a PDTFLD01 file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    kind = header["kind"]
    if kind not in FIELD_KINDS:
        raise GridError(f"{path}: unknown field kind {kind!r}")
    grid = Grid3(tuple(header["n"]))
    if not np.allclose(header["spacing"], grid.spacing) or \
            not np.allclose(header["origin"], grid.origin):
        raise GridError(f"{path}: grid does not cover [-1, 1]^3")
    cls = FIELD_KINDS[kind]
    ncomp = int(np.prod(cls.comp_shape, dtype=int))
    nx, ny, nz = grid.n
    flat = np.frombuffer(raw[12 + hlen:], dtype="<f8")
    if flat.size != nx * ny * nz * ncomp:
        raise GridError(f"{path}: payload has {flat.size} values, expected "
                        f"{nx * ny * nz * ncomp}")
    d = flat.reshape(nz, ny, nx, ncomp).transpose(2, 1, 0, 3)
    if kind == "mat9":
        d = np.swapaxes(d.reshape(grid.shape + (3, 3)), -1, -2)
    else:
        d = d.reshape(grid.shape + cls.comp_shape)
    return cls(grid, d)


def export_vtk(path, fields: dict[str, Field]) -> None:
    """Write fields (all on one grid) as ASCII legacy STRUCTURED_POINTS."""
    if not fields:
        raise ValueError("nothing to export")
    grids = {f.grid for f in fields.values()}
    if len(grids) != 1:
        raise GridError("all exported fields must share one grid")
    g = grids.pop()
    lines = [
        "# vtk DataFile Version 3.0",
        "pdrecon fields",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS {} {} {}".format(*g.n),
        "ORIGIN {} {} {}".format(*g.origin),
        "SPACING {} {} {}".format(*g.spacing),
        f"POINT_DATA {g.size}",
    ]
    for name, f in fields.items():
        name = name.replace(" ", "_")
        vals = _payload(f).reshape(g.size, f.ncomp)
        if f.kind == "scalar":
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        elif f.kind == "vector":
            lines.append(f"VECTORS {name} double")
        elif f.kind == "tensor6":
            lines.append(f"TENSORS {name} double")
            vals = f.full().transpose(2, 1, 0, 3, 4).reshape(g.size, 9)
        else:
            lines.append(f"TENSORS {name} double")
            vals = f.data.transpose(2, 1, 0, 3, 4).reshape(g.size, 9)
        lines.extend(" ".join(f"{v:.10g}" for v in row) for row in vals)
    Path(path).write_text("\n".join(lines) + "\n")
