"""Experiment configurations and end-to-end runners.

Three presets reproduce the numerical experiments: ``exp1`` (isotropic
interlocked tori, three solutions), ``exp2`` (mildly anisotropic tori,
3+2 solutions) and ``exp3`` (strongly anisotropic tori, four bases of
three solutions plus two extra solutions each, stabilized algorithm).
"""
from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import aniso, forward, iso, metrics, phantom, stabilized
from .forward import BOUNDARY_CATALOG
from .grid import AXES, Grid3, Mat3Field, ScalarField, SymTensorField

ALGORITHMS = ("iso", "aniso", "stabilized")
DATA_MODES = ("same-grid", "oversampled")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything needed to rerun one experiment."""

    name: str
    algorithm: str
    phantom: dict
    boundary_data: list
    bases: list                  # [{"basis": [3 keys], "extras": [keys]}]
    n: int = 48
    tol: float = 1e-10
    data_mode: str = "same-grid"
    sweep: str = "x+"
    out: Optional[str] = None

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.data_mode not in DATA_MODES:
            raise ConfigError(f"data_mode must be one of {DATA_MODES}, got {self.data_mode!r}")
        if int(self.n) < 5:
            raise ConfigError("grid size n must be at least 5")
        if not 0 < float(self.tol) < 1:
            raise ConfigError("tol must lie in (0, 1)")
        parse_sweep(self.sweep)
        for k in self.boundary_data:
            if k not in BOUNDARY_CATALOG:
                raise ConfigError(f"boundary datum {k!r} not in the catalog")
        if not self.bases:
            raise ConfigError("at least one basis is required")
        for b in self.bases:
            if len(b.get("basis", ())) != 3:
                raise ConfigError(f"basis {b} must name exactly three solutions")
            for k in list(b["basis"]) + list(b.get("extras", ())):
                if k not in self.boundary_data:
                    raise ConfigError(f"pairing references undefined solution {k!r}")
        if self.algorithm == "aniso" and any(len(b.get("extras", ())) != 2 for b in self.bases):
            raise ConfigError("the 3+2 algorithm needs exactly two extras per basis")
        if self.algorithm == "stabilized" and any(len(b.get("extras", ())) < 2 for b in self.bases):
            raise ConfigError("the stabilized algorithm needs two extras per basis")
        phantom.PhantomSpec.from_dict(self.phantom).resolved()
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d).validate()

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (output location excluded)."""
        d = self.to_dict()
        d.pop("out", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def parse_sweep(s: str):
    """``"x+"`` -> (``"x"``, +1)."""
    if len(s) != 2 or s[0] not in AXES or s[1] not in "+-":
        raise ConfigError(f"sweep must look like 'x+' or 'z-', got {s!r}")
    return s[0], (1 if s[1] == "+" else -1)


EXP3_BASES = [
    {"basis": ["x", "y", "z"], "extras": ["(x+2)(y+2)", "(y+2)(z+2)"]},
    {"basis": ["x+1.5(z+2)^2", "y", "z"], "extras": ["(y+2)(z+2)", "(z+2)(x+2)"]},
    {"basis": ["x", "y+1.5(x+2)^2", "z"], "extras": ["(x+2)(y+2)", "(y+2)(z+2)"]},
    {"basis": ["x", "y", "z+1.5(y+2)^2"], "extras": ["(y+2)(z+2)", "(z+2)(x+2)"]},
]


def preset(name: str, **overrides) -> ExperimentConfig:
    if name == "exp1":
        cfg = dict(name="exp1", algorithm="iso", phantom={"kind": "gamma1"},
                   boundary_data=["x", "y", "z"],
                   bases=[{"basis": ["x", "y", "z"], "extras": []}], n=64)
    elif name == "exp2":
        cfg = dict(name="exp2", algorithm="aniso", phantom={"kind": "gamma2"},
                   boundary_data=["x", "y", "z", "(x+2)(y+2)", "(z+2)(x+2)"],
                   bases=[{"basis": ["x", "y", "z"], "extras": ["(x+2)(y+2)", "(z+2)(x+2)"]}],
                   n=64)
    elif name == "exp3":
        cfg = dict(name="exp3", algorithm="stabilized", phantom={"kind": "gamma3"},
                   boundary_data=["x", "y", "z", "x+1.5(z+2)^2", "y+1.5(x+2)^2",
                                  "z+1.5(y+2)^2", "(x+2)(y+2)", "(y+2)(z+2)", "(z+2)(x+2)"],
                   bases=[dict(b) for b in EXP3_BASES], n=48)
    else:
        raise ConfigError(f"unknown preset {name!r}; choose exp1, exp2 or exp3")
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**cfg).validate()


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        d = json.load(fh)
    if "preset" in d:
        name = d.pop("preset")
        return preset(name, **d)
    return ExperimentConfig.from_dict(d)


# -- runs ---------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    grid: Grid3
    fields: dict                     # name -> Field
    reports: dict                    # quantity -> ReconstructionReport
    diagnostics: dict
    timings: dict = field(default_factory=dict)


class _Timer:
    def __init__(self, store, key):
        self.store, self.key = store, key

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.store[self.key] = self.store.get(self.key, 0.0) + time.perf_counter() - self.t0


def generate_data(cfg: ExperimentConfig, timings=None) -> forward.ForwardData:
    timings = {} if timings is None else timings
    spec = phantom.PhantomSpec.from_dict(cfg.phantom)
    grid = Grid3.cube(int(cfg.n))
    with _Timer(timings, "forward"):
        return forward.generate(lambda p: phantom.evaluate(spec, p), grid,
                                cfg.boundary_data, tol=cfg.tol, mode=cfg.data_mode)


def _sym(grid, m):
    return SymTensorField.from_full(grid, 0.5 * (m + np.swapaxes(m, -1, -2)))


def run_iso(cfg, fd, timings):
    grid = fd.grid
    b = cfg.bases[0]["basis"]
    sigma = fd.gamma[..., 0, 0]
    H = fd.pd.select(b).H
    axis, sign = parse_sweep(cfg.sweep)
    with _Timer(timings, "reconstruct"):
        T, _ = iso.transition_field(H)
        seed = iso.seed_from_truth(sigma, [fd.grads[k] for k in b], T, axis, sign)
        res = iso.reconstruct(H, sigma, seed, grid, axis, sign, cfg.tol)
    detdu = forward.det_gradients([fd.grads[k] for k in b])
    fields = {"sigma": ScalarField(grid, res.sigma), "sigma_true": ScalarField(grid, sigma),
              "det_DU": ScalarField(grid, detdu)}
    reports = {"sigma": metrics.relative_errors(res.sigma, sigma)}
    diag = {"min_det_DU": float(detdu.min()),
            "quaternion_norm_drift": float(np.max(np.abs(np.sum(res.q ** 2, axis=-1) - 1)))}
    return fields, reports, diag


def run_aniso(cfg, fd, timings):
    grid = fd.grid
    b = cfg.bases[0]
    pd = fd.pd.select(b["basis"], b["extras"])
    tau, gt = phantom.tau_and_anisotropy(fd.gamma)
    with _Timer(timings, "reconstruct"):
        res = aniso.reconstruct(pd, tau, cfg.tol)
    detdu = forward.det_gradients([fd.grads[k] for k in b["basis"]])
    fields = {"gamma_tilde": _sym(grid, res.gamma_tilde), "tau": ScalarField(grid, res.tau),
              "gamma": _sym(grid, res.gamma), "gamma_true": _sym(grid, fd.gamma),
              "gamma_tilde_true": _sym(grid, gt), "tau_true": ScalarField(grid, tau),
              "det_DU": ScalarField(grid, detdu), "B": Mat3Field(grid, res.B)}
    reports = {"gamma_tilde": metrics.relative_errors(res.gamma_tilde, gt),
               "tau": metrics.relative_errors(res.tau, tau),
               "gamma": metrics.relative_errors(res.gamma, fd.gamma)}
    diag = {"min_det_DU": float(detdu.min()),
            "min_relative_det_H": float(aniso.relative_det(pd.H).min()),
            "min_singular_gap": float(res.gap.min()),
            "volume_fraction_gamma_above_10pct":
                metrics.volume_fraction_above(res.gamma, fd.gamma, 0.1)}
    return fields, reports, diag


def plain_attempts(fd, bases):
    """Try the plain 3+2 pipeline on each basis; return the abort messages."""
    tau, _ = phantom.tau_and_anisotropy(fd.gamma)
    out = []
    for b in bases:
        pd = fd.pd.select(b["basis"], b["extras"][:2])
        try:
            aniso.reconstruct(pd, tau)
            out.append({"basis": b["basis"], "aborted": False, "message": ""})
        except aniso.HypothesisViolation as exc:
            out.append({"basis": b["basis"], "aborted": True, "message": str(exc)})
    return out


def run_stabilized(cfg, fd, timings):
    grid = fd.grid
    pds = [fd.pd.select(b["basis"], b["extras"]) for b in cfg.bases]
    labels = [f"U{k + 1}" for k in range(len(pds))]
    tau, gt = phantom.tau_and_anisotropy(fd.gamma)
    with _Timer(timings, "reconstruct"):
        res = stabilized.reconstruct(pds, tau, cfg.tol, labels)
    dets = [forward.det_gradients([fd.grads[k] for k in b["basis"]]) for b in cfg.bases]
    sumsq = sum(d ** 2 for d in dets)
    gamma = res.gamma
    fields = {"tau": ScalarField(grid, res.tau), "tau_true": ScalarField(grid, tau),
              "gamma_tilde_F": _sym(grid, res.gamma_tilde_F),
              "gamma_tilde_H": _sym(grid, res.gamma_tilde_H),
              "gamma_tilde_M": _sym(grid, res.gamma_tilde_M),
              "gamma_tilde_true": _sym(grid, gt),
              "gamma": _sym(grid, gamma), "gamma_true": _sym(grid, fd.gamma),
              "sum_sq_det_DU": ScalarField(grid, sumsq)}
    per_basis = {}
    for lab, d, bnd in zip(labels, dets, res.bundles):
        fields[f"det_DU_{lab}"] = ScalarField(grid, d)
        est = bnd.gamma_tilde()
        err = np.linalg.norm(np.nan_to_num(est - gt, nan=np.inf, posinf=np.inf), axis=(-2, -1))
        fields[f"gamma_tilde_err_{lab}"] = ScalarField(grid, np.minimum(err, 1e300))
        per_basis[lab] = {"min_det_DU": float(d.min()), "max_det_DU": float(d.max()),
                          "det_DU_changes_sign": bool(d.min() < 0 < d.max()),
                          "fraction_estimate_fails_50pct":
                              float(np.mean(~(err / np.linalg.norm(gt, axis=(-2, -1)) <= 0.5)))}
    fails = np.stack([fields[f"gamma_tilde_err_{lab}"].data / np.linalg.norm(gt, axis=(-2, -1)) > 0.5
                      for lab in labels])
    reports = {"gamma_tilde_H": metrics.relative_errors(res.gamma_tilde_H, gt),
               "gamma_tilde_F": metrics.relative_errors(res.gamma_tilde_F, gt),
               "tau": metrics.relative_errors(res.tau, tau),
               "gamma": metrics.relative_errors(gamma, fd.gamma)}
    diag = {"min_sum_sq_det_DU": float(sumsq.min()),
            "per_basis": per_basis,
            "all_bases_fail_somewhere_simultaneously": bool(np.any(fails.all(axis=0))),
            "plain_3plus2": plain_attempts(fd, cfg.bases),
            "volume_fraction_gamma_above_50pct": metrics.volume_fraction_above(gamma, fd.gamma, 0.5),
            "gamma_tilde_M_report": asdict(metrics.relative_errors(res.gamma_tilde_M, gt))}
    return fields, reports, diag


RUNNERS = {"iso": run_iso, "aniso": run_aniso, "stabilized": run_stabilized}


def run(cfg: ExperimentConfig, fd: Optional[forward.ForwardData] = None) -> ExperimentResult:
    cfg.validate()
    timings = {}
    t0 = time.perf_counter()
    if fd is None:
        fd = generate_data(cfg, timings)
    fields, reports, diag = RUNNERS[cfg.algorithm](cfg, fd, timings)
    timings["total"] = time.perf_counter() - t0
    return ExperimentResult(cfg, fd.grid, fields, reports, diag, timings)


# -- artifacts -----------------------------------------------------------------

def versions():
    import matplotlib
    import pyamg
    import scipy

    from . import __version__
    return {"pdrecon": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "pyamg": pyamg.__version__, "matplotlib": matplotlib.__version__}


def write_manifest(out: Path, config: dict, digest: str, timings: dict, outputs: list, extra=None):
    """``manifest.json`` with the config hash, versions, timings and a sha256
    per output file; ``results_sha256`` hashes all of them together, so two
    runs produced bit-identical artifacts iff it matches."""
    hashes = {name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in sorted(outputs)}
    combined = hashlib.sha256(json.dumps(hashes, sort_keys=True).encode()).hexdigest()
    man = {"config": config, "config_sha256": digest, "versions": versions(),
           "timings_s": timings, "outputs": hashes, "results_sha256": combined}
    if extra:
        man.update(extra)
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True))
    return man


def save(result: ExperimentResult, out, figures=True, vtk=False):
    """Write fields, CSV/JSON reports, figures and the manifest into ``out``."""
    from .fieldio import export_vtk, write_field

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    fdir = out / "fields"
    fdir.mkdir(exist_ok=True)
    for name, f in result.fields.items():
        write_field(fdir / f"{name}.pdt", f)
        outputs.append(f"fields/{name}.pdt")
    if vtk:
        export_vtk(out / "fields.vtk", result.fields)
        outputs.append("fields.vtk")
    (out / "report.csv").write_text(metrics.to_csv(result.reports))
    (out / "report.json").write_text(metrics.to_json(result.reports, {"diagnostics": result.diagnostics}))
    outputs += ["report.csv", "report.json"]
    if figures:
        from . import plotting
        outputs += [str(p.relative_to(out)) for p in plotting.experiment_figures(result, out / "figures")]
    write_manifest(out, result.config.to_dict(), result.config.digest(), result.timings, outputs)
    return outputs
