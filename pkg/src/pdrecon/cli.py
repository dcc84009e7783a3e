"""Command-line interface: ``pdrecon <subcommand> [options]``.

Exit codes: 0 success, 1 failure, 2 usage error, 3 hypothesis violation
(the data do not meet the nondegeneracy conditions of the chosen
algorithm).  Failures print one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments, forward, metrics, phantom
from .aniso import HypothesisViolation
from .experiments import ExperimentConfig, preset
from .fieldio import export_vtk, read_field, write_field
from .grid import Grid3, ScalarField, SymTensorField, VectorField

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_HYPOTHESIS = 0, 1, 2, 3

FORWARD_INDEX = "forward.json"


def _common(p, n_default=None):
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="BLAS/LAPACK threads (default: $PDT_THREADS, else library default)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    p.add_argument("--vtk", action="store_true", help="also write a legacy VTK file")


def _exp_options(p):
    p.add_argument("--config", type=Path, help="JSON config; flags override its keys")
    p.add_argument("--n", type=int, help="grid points per axis")
    p.add_argument("--tol", type=float, help="relative residual tolerance of the linear solves")
    p.add_argument("--data-mode", choices=experiments.DATA_MODES)
    p.add_argument("--sweep", help="isotropic integration direction, e.g. x+ or z-")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pdrecon", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("phantom", help="sample a conductivity phantom on a grid")
    p.add_argument("--kind", choices=("gamma1", "gamma2", "gamma3"), default="gamma1")
    p.add_argument("--k", type=float, help="tube amplitude (preset default if omitted)")
    p.add_argument("--n", type=int, default=48)
    _common(p)

    p = sub.add_parser("forward", help="solve the conductivity problems and emit power densities")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--phantom", choices=("gamma1", "gamma2", "gamma3"))
    src.add_argument("--gamma", type=Path, help="tensor6 conductivity field file")
    p.add_argument("--data", nargs="+", required=True, metavar="KEY",
                   help=f"boundary data keys, from: {', '.join(forward.BOUNDARY_CATALOG)}")
    p.add_argument("--n", type=int, default=48)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--data-mode", choices=experiments.DATA_MODES, default="same-grid")
    _common(p)

    for name, hlp in (("recon-iso", "isotropic reconstruction from three solutions"),
                      ("recon-aniso", "3+2 anisotropic reconstruction"),
                      ("recon-stab", "stabilized multi-basis reconstruction")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--data", type=Path, required=True, help="directory written by 'forward'")
        p.add_argument("--tol", type=float, default=1e-10)
        if name == "recon-iso":
            p.add_argument("--basis", nargs=3, default=["x", "y", "z"])
            p.add_argument("--sweep", default="x+")
        elif name == "recon-aniso":
            p.add_argument("--basis", nargs=3, default=["x", "y", "z"])
            p.add_argument("--extras", nargs=2, required=True)
        else:
            p.add_argument("--pairing", action="append", metavar="B1,B2,B3:E1,E2",
                           help="one basis and its extras; repeat per basis "
                                "(default: the four pairings of exp3)")
        _common(p)

    p = sub.add_parser("metrics", help="relative error report of a field against the truth")
    p.add_argument("--rec", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--threshold", type=float, action="append",
                   help="also report the volume fraction above this pointwise error")
    p.add_argument("--out", type=Path)

    for name in ("exp1", "exp2", "exp3"):
        p = sub.add_parser(name, help=f"run the {name} preset end to end")
        _exp_options(p)
        _common(p)
    return ap


# -- helpers --------------------------------------------------------------------

def _threads(args):
    n = args.threads
    if n is None and os.environ.get("PDT_THREADS"):
        n = int(os.environ["PDT_THREADS"])
    return n


def _outdir(args, default):
    out = args.out or Path("runs") / default
    out.mkdir(parents=True, exist_ok=True)
    return out


def _slug(i):
    return f"{i:02d}"


def _manifest(out, cmd, params, timings, outputs, extra=None):
    blob = json.dumps({"cmd": cmd, **params}, sort_keys=True, default=str)
    return experiments.write_manifest(out, {"cmd": cmd, **params},
                                      hashlib.sha256(blob.encode()).hexdigest(),
                                      timings, outputs, extra)


def load_forward(path: Path) -> forward.ForwardData:
    """Reassemble the data written by the ``forward`` subcommand."""
    idx = json.loads((path / FORWARD_INDEX).read_text())
    gamma = read_field(path / idx["gamma"])
    grid = gamma.grid
    labels = idx["labels"]
    us = {k: read_field(path / f).data for k, f in zip(labels, idx["u"])}
    grads = {k: read_field(path / f).data for k, f in zip(labels, idx["grad"])}
    J = len(labels)
    H = np.empty(grid.shape + (J, J))
    for i in range(J):
        for j in range(i, J):
            H[..., i, j] = H[..., j, i] = read_field(path / idx["H"][f"{i},{j}"]).data
    pd = forward.PowerDensityData(grid, list(labels), H)
    return forward.ForwardData(grid, gamma.full(), list(labels), us, grads, pd)


def _parse_pairing(s):
    try:
        b, e = s.split(":")
        basis, extras = b.split(","), e.split(",")
    except ValueError:
        raise experiments.ConfigError(f"pairing {s!r} must look like 'x,y,z:(x+2)(y+2),(y+2)(z+2)'")
    return {"basis": basis, "extras": extras}


# -- subcommands ------------------------------------------------------------------

def cmd_phantom(args):
    t0 = time.perf_counter()
    spec = phantom.PhantomSpec(args.kind, k=args.k)
    g = phantom.build(spec, Grid3.cube(args.n))
    out = _outdir(args, f"phantom-{args.kind}-{args.n}")
    write_field(out / "gamma.pdt", g)
    outputs = ["gamma.pdt"]
    if args.vtk:
        export_vtk(out / "gamma.vtk", {"gamma": g})
        outputs.append("gamma.vtk")
    if not args.no_figures:
        from . import plotting
        tau, _ = phantom.tau_and_anisotropy(g.full())
        p = plotting.slice_figure({"det gamma": tau ** 3, "|gamma|_F": plotting.magnitude(g)},
                                  g.grid, out / "figures" / "phantom_slice.png", axis="x")
        outputs.append(str(p.relative_to(out)))
    _manifest(out, "phantom", {"phantom": spec.to_dict(), "n": args.n},
              {"total": time.perf_counter() - t0}, outputs)
    print(json.dumps({"out": str(out), "outputs": outputs}))
    return EXIT_OK


def cmd_forward(args):
    t0 = time.perf_counter()
    if args.phantom:
        spec = phantom.PhantomSpec(args.phantom)
        grid = Grid3.cube(args.n)
        fd = forward.generate(lambda p: phantom.evaluate(spec, p), grid, args.data,
                              tol=args.tol, mode=args.data_mode)
        params = {"phantom": spec.to_dict(), "n": args.n, "data_mode": args.data_mode}
    else:
        if args.data_mode != "same-grid":
            raise experiments.ConfigError("oversampled data need --phantom, not a sampled --gamma")
        gf = read_field(args.gamma)
        if not isinstance(gf, SymTensorField):
            raise experiments.ConfigError("--gamma must hold a tensor6 field")
        table = gf.full()
        fd = forward.generate(lambda p: table, gf.grid, args.data, tol=args.tol)
        params = {"gamma": str(args.gamma), "data_mode": "same-grid"}
    out = _outdir(args, "forward")
    grid = fd.grid
    idx = {"labels": fd.labels, "gamma": "gamma.pdt", "u": [], "grad": [], "H": {}}
    write_field(out / "gamma.pdt", SymTensorField.from_full(grid, fd.gamma))
    for i, k in enumerate(fd.labels):
        idx["u"].append(f"u_{_slug(i)}.pdt")
        idx["grad"].append(f"grad_{_slug(i)}.pdt")
        write_field(out / idx["u"][-1], ScalarField(grid, fd.u[k]))
        write_field(out / idx["grad"][-1], VectorField(grid, fd.grads[k]))
    J = len(fd.labels)
    for i in range(J):
        for j in range(i, J):
            name = f"H_{_slug(i)}_{_slug(j)}.pdt"
            idx["H"][f"{i},{j}"] = name
            write_field(out / name, ScalarField(grid, fd.pd.H[..., i, j]))
    (out / FORWARD_INDEX).write_text(json.dumps(idx, indent=2))
    outputs = [FORWARD_INDEX, "gamma.pdt"] + idx["u"] + idx["grad"] + list(idx["H"].values())
    _manifest(out, "forward", {**params, "data": args.data, "tol": args.tol},
              {"total": time.perf_counter() - t0}, outputs)
    print(json.dumps({"out": str(out), "labels": fd.labels}))
    return EXIT_OK


def _recon(args, algorithm, bases, sweep="x+"):
    fd = load_forward(args.data)
    cfg = ExperimentConfig(name=f"recon-{algorithm}", algorithm=algorithm, phantom={"kind": "gamma1"},
                           boundary_data=fd.labels, bases=bases, n=fd.grid.n[0], tol=args.tol,
                           sweep=sweep)
    res = experiments.run(cfg, fd=fd)
    return _finish(args, res, f"recon-{algorithm}", {"data": str(args.data)})


def cmd_recon_iso(args):
    return _recon(args, "iso", [{"basis": args.basis, "extras": []}], args.sweep)


def cmd_recon_aniso(args):
    return _recon(args, "aniso", [{"basis": args.basis, "extras": args.extras}])


def cmd_recon_stab(args):
    bases = [_parse_pairing(s) for s in args.pairing] if args.pairing else experiments.EXP3_BASES
    return _recon(args, "stabilized", bases)


def cmd_metrics(args):
    rec, truth = read_field(args.rec), read_field(args.truth)
    rep = metrics.relative_errors(rec, truth)
    fractions = {str(t): metrics.volume_fraction_above(rec, truth, t) for t in (args.threshold or [])}
    print(metrics.format_table({"field": rep}))
    for t, v in fractions.items():
        print(f"volume fraction above {t}: {v:.6g}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.csv").write_text(metrics.to_csv({"field": rep}))
        (args.out / "report.json").write_text(
            metrics.to_json({"field": rep}, {"volume_fraction_above": fractions}))
    return EXIT_OK


def _finish(args, res, default_out, extra_params=None):
    out = _outdir(args, default_out)
    experiments.save(res, out, figures=not args.no_figures, vtk=args.vtk)
    print(metrics.format_table(res.reports))
    print(json.dumps({"out": str(out), "diagnostics": res.diagnostics,
                      "timings_s": res.timings}, indent=2, default=str))
    return EXIT_OK


def cmd_exp(args):
    overrides = {"n": args.n, "tol": args.tol, "data_mode": args.data_mode, "sweep": args.sweep}
    if args.config:
        cfg = experiments.load_config(args.config)
        d = cfg.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        cfg = ExperimentConfig.from_dict(d)
    else:
        cfg = preset(args.cmd, **overrides)
    res = experiments.run(cfg)
    return _finish(args, res, f"{cfg.name}-n{cfg.n}")


COMMANDS = {"phantom": cmd_phantom, "forward": cmd_forward, "recon-iso": cmd_recon_iso,
            "recon-aniso": cmd_recon_aniso, "recon-stab": cmd_recon_stab, "metrics": cmd_metrics,
            "exp1": cmd_exp, "exp2": cmd_exp, "exp3": cmd_exp}


def _error(kind, exc, **extra):
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc), **extra}
    print(json.dumps(payload, default=str), file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        n = _threads(args) if hasattr(args, "threads") else None
        if n:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=n):
                return COMMANDS[args.cmd](args)
        return COMMANDS[args.cmd](args)
    except HypothesisViolation as exc:
        idx = None if exc.index is None else [int(i) for i in exc.index]
        _error("hypothesis_violation", exc, voxel=idx, detail=exc.detail)
        return EXIT_HYPOTHESIS
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured report
        _error("failure", exc)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
