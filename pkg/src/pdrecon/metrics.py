"""Relative error norms of reconstructed scalar and tensor fields.

Tensor errors are measured pointwise in the Frobenius norm.  All norms are
plain voxel sums (no quadrature weights).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .grid import Field, GridError

# truth magnitudes below this are excluded from the pointwise ratio
POINTWISE_GUARD = 1e-14

ROW_LABELS = {
    "rel_l1": "Rel. L1 error",
    "rel_l2": "Rel. L2 error",
    "rel_linf": "Rel. Linf error",
    "max_pointwise_rel": "Max. pointwise rel. error",
}


@dataclass(frozen=True)
class ReconstructionReport:
    rel_l1: float
    rel_l2: float
    rel_linf: float
    max_pointwise_rel: float

    def rows(self):
        return [(ROW_LABELS[k], v) for k, v in asdict(self).items()]


def _magnitudes(rec, truth):
    if isinstance(rec, Field) or isinstance(truth, Field):
        if not (isinstance(rec, Field) and isinstance(truth, Field)):
            raise GridError("compare two fields or two arrays, not a mix")
        if rec.grid != truth.grid:
            raise GridError("reconstruction and truth live on different grids")
        if rec.kind != truth.kind:
            raise GridError(f"field kinds differ: {rec.kind} vs {truth.kind}")
        # full matrices, so that off-diagonals count twice in the Frobenius norm
        rec, truth = (f.full() if f.kind == "tensor6" else f.data for f in (rec, truth))
        ncomp = rec.ndim - 3
    else:
        rec = np.asarray(rec, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        if rec.shape != truth.shape:
            raise GridError(f"shape mismatch {rec.shape} vs {truth.shape}")
        ncomp = max(rec.ndim - 3, 0)
    if ncomp == 0:
        return np.abs(rec - truth), np.abs(truth)
    lead = rec.shape[:rec.ndim - ncomp]
    err = np.linalg.norm((rec - truth).reshape(lead + (-1,)), axis=-1)
    mag = np.linalg.norm(truth.reshape(lead + (-1,)), axis=-1)
    return err, mag


def pointwise_relative(rec, truth):
    """Pointwise ``|rec - truth| / |truth|``; NaN where ``|truth| < 1e-14``."""
    err, mag = _magnitudes(rec, truth)
    ok = mag >= POINTWISE_GUARD
    return np.where(ok, err / np.where(ok, mag, 1.0), np.nan)


def relative_errors(rec, truth) -> ReconstructionReport:
    """Relative L1, L2, Linf errors and the largest pointwise relative error.

    Accepts two :class:`~pdrecon.grid.Field` objects of the same kind, or two
    arrays of equal shape ``(nx, ny, nz, ...)`` (trailing axes are components).
    """
    err, mag = _magnitudes(rec, truth)
    pw = pointwise_relative(rec, truth)
    return ReconstructionReport(
        rel_l1=float(err.sum() / mag.sum()),
        rel_l2=float(np.sqrt(np.sum(err ** 2) / np.sum(mag ** 2))),
        rel_linf=float(err.max() / mag.max()),
        max_pointwise_rel=float(np.nanmax(pw)) if np.any(np.isfinite(pw)) else 0.0,
    )


def volume_fraction_above(rec, truth, threshold) -> float:
    """Fraction of voxels whose pointwise relative error exceeds ``threshold``."""
    pw = pointwise_relative(rec, truth)
    return float(np.mean(np.nan_to_num(pw, nan=0.0) > threshold))


# -- emission -----------------------------------------------------------------

def report_table(reports: Mapping[str, ReconstructionReport]):
    """Rows ``[label, value_q1, value_q2, ...]`` with one column per quantity."""
    names = list(reports)
    header = ["metric"] + names
    rows = [[ROW_LABELS[k]] + [getattr(reports[q], k) for q in names] for k in ROW_LABELS]
    return header, rows


def to_csv(reports: Mapping[str, ReconstructionReport]) -> str:
    header, rows = report_table(reports)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([r[0]] + [f"{v:.8f}" for v in r[1:]])
    return buf.getvalue()


def to_json(reports: Mapping[str, ReconstructionReport], extra=None) -> str:
    payload = {"quantities": {q: asdict(r) for q, r in reports.items()},
               "labels": ROW_LABELS}
    if extra:
        payload.update(extra)
    return json.dumps(payload, indent=2, sort_keys=True)


def format_table(reports: Mapping[str, ReconstructionReport]) -> str:
    """Plain-text rendering for terminals."""
    header, rows = report_table(reports)
    w0 = max(len(r[0]) for r in rows)
    lines = ["  ".join([header[0].ljust(w0)] + [h.rjust(12) for h in header[1:]])]
    for r in rows:
        lines.append("  ".join([r[0].ljust(w0)] + [f"{v:12.8f}" for v in r[1:]]))
    return "\n".join(lines)
