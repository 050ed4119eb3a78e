"""Command-line entry point.

Exit codes: 0 on success, 1 when a verification criterion fails, 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .config import build_kernel_from_config, build_macro_grid, load_config
from .effective import ExpansionBundle, build_bundle
from .errors import (CompatibilityViolation, ConfigError, GridError, HomogError, KernelError,
                     ResolutionError)
from .harness import provenance, run_convergence_study, study_criteria
from .macro import SourceSpec, limit_densities
from .transport_direct import TransportProblem, apriori_check, solve_transport

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment file (TOML or JSON)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--format", choices=("csv", "json", "both"), default="both")
    parser = argparse.ArgumentParser(prog="kinetic-homog", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("cell", parents=[common], help="build and serialize the cell bundle")
    macro = sub.add_parser("macro", parents=[common], help="limit densities from a bundle")
    macro.add_argument("--bundle", help="bundle directory (default: OUT/bundle when present)")
    sub.add_parser("transport", parents=[common], help="single direct transport solve")
    sub.add_parser("study", parents=[common], help="(epsilon, eta) convergence sweep")
    check = sub.add_parser("check", parents=[common], help="property battery on the configured kernel")
    check.add_argument("--all", action="store_true", help="also run the full acceptance battery")
    return parser


def _write_json(path, payload):
    path.write_text(json.dumps(payload, indent=2, default=_plain))


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return str(obj)


def _tensors(bundle):
    return {"D": bundle.Dtensor, "D1": bundle.D1tensor, "D_direct": bundle.Dtensor_direct,
            "digest": bundle.digest()}


def cmd_cell(cfg, args, out):
    kernel = build_kernel_from_config(cfg)
    bundle = build_bundle(kernel, cfg.get("tolerances", {}).get("compat", 1e-11),
                          metadata={"provenance": provenance(cfg)})
    bundle.save(out / "bundle")
    _write_json(out / "tensors.json", _tensors(bundle))
    print(f"D = {bundle.Dtensor.tolist()}  D1 = {bundle.D1tensor.tolist()}")
    return EXIT_OK


def cmd_macro(cfg, args, out):
    kernel = build_kernel_from_config(cfg)
    bdir = Path(args.bundle) if args.bundle else out / "bundle"
    if (bdir / "bundle.json").exists():
        try:
            bundle = ExpansionBundle.load(bdir)
        except (ValueError, KeyError, OSError) as exc:
            raise ConfigError(f"cannot load bundle from {bdir}: {exc}") from exc
    else:
        bundle = build_bundle(kernel, cfg.get("tolerances", {}).get("compat", 1e-11))
    if bundle.psi.shape != (kernel.n_y, kernel.n_v):
        raise ConfigError("bundle grid does not match the configured kernel")
    mg = build_macro_grid(cfg, kernel.cgrid.dim)
    source = SourceSpec.from_config(cfg.get("source"))
    dens = limit_densities(bundle, source, mg, kernel.cgrid, kernel.vgrid, kernel.psi_star)
    _write_json(out / "tensors.json", _tensors(bundle))
    cols = {"x": mg.points[:, 0], "n00": dens.n00, "n01": dens.n01, "n1m1": dens.n1m1,
            "S1m1": dens.S1m1, "source_average": dens.source_average}
    if args.format in ("csv", "both"):
        with (out / "densities.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            w.writerows(zip(*cols.values()))
    if args.format in ("json", "both"):
        _write_json(out / "densities.json", cols)
    print(f"D = {bundle.Dtensor.tolist()}  |n00| = {np.abs(dens.n00).max():.6g}")
    return EXIT_OK


def cmd_transport(cfg, args, out):
    tr = cfg.get("transport")
    if not tr:
        raise ConfigError("the transport subcommand needs a [transport] table")
    kernel = build_kernel_from_config(cfg)
    period = float(cfg.get("macro", {}).get("period", 1.0))
    problem = TransportProblem.build(kernel, float(tr["epsilon"]), float(tr["eta"]), cfg.get("source"),
                                     period, tr.get("points_per_cell"))
    sol = solve_transport(problem, tr.get("method", "bloch"))
    density = sol.density(kernel.psi_star)
    est = apriori_check(problem, sol.f, seed=args.seed_value)
    np.savez(out / "transport.npz", f=sol.f, x=problem.mgrid.points)
    if args.format in ("csv", "both"):
        with (out / "transport.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "density"])
            w.writerows(zip(problem.mgrid.points[:, 0], density))
    if args.format in ("json", "both"):
        _write_json(out / "transport.json", {"residual": sol.residual, "apriori": est,
                                             "provenance": provenance(cfg)})
    print(f"residual {sol.residual:.2e}  a priori ratio {est['ratio']:.4f}")
    return EXIT_OK


def _print_criteria(criteria):
    failed = False
    for name, c in criteria.items():
        failed |= not c["passed"]
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {name}")
    return failed


def cmd_study(cfg, args, out):
    kernel = build_kernel_from_config(cfg)
    report = run_convergence_study(cfg, kernel, evaluate_criteria=study_criteria(kernel))
    if report.points:
        for r in acceptance.kernel_battery(kernel, seed=args.seed_value):
            report.criteria[f"criterion_{r.number}"] = {"passed": bool(r.passed), "detail": r.message}
    report.write(out, args.format)
    for p in report.points:
        if "ratio" in p:
            print(f"eps {p['epsilon']:.3e} eta {p['eta']:.3e} error {p['error_L2']:.3e} ratio {p['ratio']:.4e}")
        else:
            print(f"eps {p['epsilon']:.3e} eta {p['eta']:.3e} failed: {p['error']}")
    failed = _print_criteria(report.criteria)
    print(f"report digest {report.digest()}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_check(cfg, args, out):
    kernel = build_kernel_from_config(cfg)
    try:
        results = acceptance.kernel_battery(kernel, seed=args.seed_value)
    except CompatibilityViolation as exc:
        print(f"FAIL  no-drift assertion: moment '{exc.moment}' = {exc.defect:.3e}")
        _write_json(out / "check.json", {"passed": False, "moment": exc.moment, "defect": exc.defect,
                                         "message": str(exc)})
        return EXIT_FAIL
    if args.all:
        results += acceptance.run_all()
    for r in results:
        print(r.line())
    _write_json(out / "check.json", {"passed": all(r.passed for r in results),
                                     "results": [r.as_dict() for r in results]})
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


COMMANDS = {"cell": cmd_cell, "macro": cmd_macro, "transport": cmd_transport, "study": cmd_study,
            "check": cmd_check}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        args.seed_value = int(cfg.get("seed", 0))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, KernelError, GridError, ResolutionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HomogError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
