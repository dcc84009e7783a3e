"""Slice and profile figures for experiment reports (non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.colors import TwoSlopeNorm  # noqa: E402
import numpy as np  # noqa: E402

from .grid import AXES, Field, Grid3  # noqa: E402


def magnitude(f) -> np.ndarray:
    """Scalar data, or the pointwise Frobenius norm of a vector/tensor field."""
    a = f.data if isinstance(f, Field) else np.asarray(f)
    if isinstance(f, Field) and f.kind == "tensor6":
        a = f.full()
    if a.ndim == 3:
        return a
    return np.linalg.norm(a.reshape(a.shape[:3] + (-1,)), axis=-1)


def mid_slice(a: np.ndarray, axis="z", index=None):
    m = AXES[axis]
    if index is None:
        index = a.shape[m] // 2
    return np.take(a, index, axis=m)


def slice_figure(panels: dict, grid: Grid3, path, axis="z", index=None, title=None,
                 cmap="viridis"):
    """One image per entry of ``panels`` (name -> 3-D array) on a common slice."""
    names = list(panels)
    fig, axs = plt.subplots(1, len(names), figsize=(3.6 * len(names), 3.4), squeeze=False)
    others = [a for a in "xyz" if a != axis]
    m = AXES[axis]
    idx = grid.shape[m] // 2 if index is None else index
    level = grid.axis(m)[idx]
    extent = [-1, 1, -1, 1]
    for ax, name in zip(axs[0], names):
        img = mid_slice(panels[name], axis, idx).T
        norm = None
        if cmap == "RdBu_r" and img.min() < 0 < img.max():
            norm = TwoSlopeNorm(vcenter=0.0, vmin=img.min(), vmax=img.max())
        im = ax.imshow(img, origin="lower", extent=extent, cmap=cmap, norm=norm)
        ax.set_title(name, fontsize=9)
        ax.set_xlabel(others[0])
        ax.set_ylabel(others[1])
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.suptitle(title or f"slice {axis} = {level:.3f}", fontsize=10)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def profile_figure(curves: dict, grid: Grid3, path, axis="x", j=None, k=None, title=None):
    """Line plots of several 3-D arrays along ``axis`` through voxel ``(j, k)``."""
    m = AXES[axis]
    rest = [a for a in range(3) if a != m]
    j = grid.shape[rest[0]] // 2 if j is None else j
    k = grid.shape[rest[1]] // 2 if k is None else k
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    x = grid.axis(m)
    for name, a in curves.items():
        line = np.moveaxis(a, m, 0)[:, j, k]
        ax.plot(x, line, label=name)
    ax.set_xlabel(axis)
    ax.legend(fontsize=8)
    ax.set_title(title or f"profile along {axis}", fontsize=10)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _relerr(rec, truth):
    r, t = magnitude(rec), magnitude(truth)
    if isinstance(rec, Field) and rec.kind == "tensor6":
        d = rec.full() - truth.full()
        return np.linalg.norm(d, axis=(-2, -1)) / np.maximum(t, 1e-14)
    return np.abs(r - t) / np.maximum(np.abs(t), 1e-14)


def experiment_figures(result, out) -> list:
    """Figures appropriate to the experiment's algorithm; returns written paths."""
    out = Path(out)
    F = result.fields
    g = result.grid
    paths = []
    if result.config.algorithm == "iso":
        s, st = F["sigma"].data, F["sigma_true"].data
        paths.append(slice_figure({"sigma (true)": st, "sigma (reconstructed)": s,
                                   "pointwise rel. error": _relerr(F["sigma"], F["sigma_true"])},
                                  g, out / "sigma_slice.png"))
        paths.append(profile_figure({"true": st, "reconstructed": s}, g, out / "sigma_profile.png",
                                    title="sigma along x through the centre"))
        paths.append(slice_figure({"det DU": F["det_DU"].data}, g, out / "det_DU_slice.png"))
        return paths
    paths.append(slice_figure({"tau (true)": F["tau_true"].data, "tau (reconstructed)": F["tau"].data,
                               "pointwise rel. error": _relerr(F["tau"], F["tau_true"])},
                              g, out / "tau_slice.png"))
    paths.append(profile_figure({"true": F["tau_true"].data, "reconstructed": F["tau"].data},
                                g, out / "tau_profile.png", title="tau along x through the centre"))
    if result.config.algorithm == "aniso":
        paths.append(slice_figure({"|gamma_tilde| (true)": magnitude(F["gamma_tilde_true"]),
                                   "|gamma_tilde| (reconstructed)": magnitude(F["gamma_tilde"]),
                                   "pointwise rel. error": _relerr(F["gamma_tilde"], F["gamma_tilde_true"])},
                                  g, out / "gamma_tilde_slice.png"))
        paths.append(slice_figure({"det DU": F["det_DU"].data}, g, out / "det_DU_slice.png"))
        return paths
    labels = [k[len("det_DU_"):] for k in F if k.startswith("det_DU_")]
    paths.append(slice_figure({f"det DU {lab}": F[f"det_DU_{lab}"].data for lab in labels},
                              g, out / "det_DU_slices.png", cmap="RdBu_r"))
    paths.append(slice_figure({"sum |det DU|^2": F["sum_sq_det_DU"].data}, g,
                              out / "sum_sq_det_DU_slice.png"))
    gt = F["gamma_tilde_true"]
    paths.append(slice_figure({f"error {lab}": np.log10(np.maximum(F[f"gamma_tilde_err_{lab}"].data, 1e-6))
                               for lab in labels}, g, out / "per_basis_error_slices.png",
                              title="log10 Frobenius error of the individual estimates"))
    paths.append(slice_figure({"H-weighted": _relerr(F["gamma_tilde_H"], gt),
                               "F-weighted": _relerr(F["gamma_tilde_F"], gt)},
                              g, out / "weighting_error_slices.png",
                              title="pointwise rel. error of gamma_tilde"))
    return paths
