import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pdrecon.fieldio import MAGIC, export_vtk, read_field, write_field
from pdrecon.grid import Grid3, GridError, Mat3Field, ScalarField, SymTensorField, VectorField


def _fields(g, rng):
    s = rng.standard_normal(g.shape)
    v = rng.standard_normal(g.shape + (3,))
    m = rng.standard_normal(g.shape + (3, 3))
    return [ScalarField(g, s), VectorField(g, v),
            SymTensorField.from_full(g, m + np.swapaxes(m, -1, -2)), Mat3Field(g, m)]


@given(st.integers(3, 6), st.integers(3, 6), st.integers(3, 6), st.integers(0, 2 ** 31))
def test_roundtrip_all_kinds(nx, ny, nz, seed):
    g = Grid3((nx, ny, nz))
    with tempfile.TemporaryDirectory() as tmp:
        _roundtrip(g, Path(tmp), seed)


def _roundtrip(g, d, seed):
    for i, f in enumerate(_fields(g, np.random.default_rng(seed))):
        write_field(d / f"f{i}.pdt", f)
        back = read_field(d / f"f{i}.pdt")
        assert back.kind == f.kind and back.grid == g
        np.testing.assert_array_equal(back.data, f.data)


def _payload(path):
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<I", raw[8:12])
    return np.frombuffer(raw[12 + hlen:], dtype="<f8")


def test_x_fastest_layout(tmp_path):
    g = Grid3((3, 4, 5))
    idx = np.arange(60, dtype=float).reshape(5, 4, 3).transpose(2, 1, 0)  # value = i + 3j + 12k
    write_field(tmp_path / "s.pdt", ScalarField(g, idx))
    np.testing.assert_array_equal(_payload(tmp_path / "s.pdt"), np.arange(60))


def test_mat9_column_major(tmp_path):
    g = Grid3.cube(3)
    m = np.broadcast_to(np.arange(9.0).reshape(3, 3), g.shape + (3, 3))
    write_field(tmp_path / "m.pdt", Mat3Field(g, m))
    np.testing.assert_array_equal(_payload(tmp_path / "m.pdt")[:9], [0, 3, 6, 1, 4, 7, 2, 5, 8])


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "bad.pdt"
    p.write_bytes(b"NOTAFILE" + b"\0" * 16)
    with pytest.raises(GridError):
        read_field(p)


def test_truncated_payload_rejected(tmp_path):
    g = Grid3.cube(3)
    write_field(tmp_path / "s.pdt", ScalarField(g, np.zeros(g.shape)))
    raw = (tmp_path / "s.pdt").read_bytes()
    (tmp_path / "t.pdt").write_bytes(raw[:-8])
    with pytest.raises(GridError):
        read_field(tmp_path / "t.pdt")


def test_magic_is_first(tmp_path):
    g = Grid3.cube(3)
    write_field(tmp_path / "s.pdt", ScalarField(g, np.ones(g.shape)))
    assert (tmp_path / "s.pdt").read_bytes()[:8] == MAGIC


def test_vtk_export(tmp_path, rng):
    g = Grid3.cube(3)
    export_vtk(tmp_path / "f.vtk", {f.kind: f for f in _fields(g, rng)})
    text = (tmp_path / "f.vtk").read_text().splitlines()
    assert text[0] == "# vtk DataFile Version 3.0"
    assert "DIMENSIONS 3 3 3" in text and "POINT_DATA 27" in text
    assert sum(1 for t in text if t.startswith("TENSORS")) == 2


def test_vtk_rejects_mixed_grids(tmp_path):
    a = ScalarField(Grid3.cube(3), np.zeros((3, 3, 3)))
    b = ScalarField(Grid3.cube(4), np.zeros((4, 4, 4)))
    with pytest.raises(GridError):
        export_vtk(tmp_path / "f.vtk", {"a": a, "b": b})
