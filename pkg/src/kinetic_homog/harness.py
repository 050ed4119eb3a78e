"""Approximant composition, (epsilon, eta) sweeps and convergence reports."""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .effective import ExpansionBundle, build_bundle
from .errors import HomogError
from .grids import CellGrid, MacroGrid
from .linalg import fit_slope
from .macro import LimitDensities, SourceSpec, limit_densities
from .transport_direct import (TransportProblem, composite_cell_field, resolution_floor,
                               solve_transport)

REPORT_SCHEMA = 1
CSV_COLUMNS = ("epsilon", "eta", "alpha", "error_L2", "ratio", "fitted_order", "floor_flag")


def _on_cells(values, cgrid: CellGrid, m):
    """Resample a cell field (..., N_y, n_v) or (..., N_y) to m points per dim."""
    values = np.asarray(values)
    has_v = values.ndim >= 2 and values.shape[-2] == cgrid.size
    return cgrid.resample(values, m, has_v=has_v)


@dataclass
class Approximant:
    lead: np.ndarray
    eta_block: np.ndarray
    eps_block: np.ndarray
    epsilon: float
    eta: float

    @property
    def total(self):
        return self.lead + self.eta * self.eta_block + (self.epsilon / self.eta) * self.eps_block


def compose_approximant(bundle: ExpansionBundle, dens: LimitDensities, epsilon, eta,
                        mgrid: MacroGrid, cgrid: CellGrid, theta_sign=-1.0) -> Approximant:
    """Leading term, eta-block and (epsilon/eta)-block evaluated at y = x/alpha mod 1.

    ``theta_sign`` multiplies the theta^{-1} psi . grad n00 corrector; the
    expansion of f^1 = -chi^eta . grad n^{0,eta} gives -1.
    """
    m = mgrid.points_per_cell
    psi0 = composite_cell_field(_on_cells(bundle.psi0, cgrid, m), mgrid)
    psi1 = composite_cell_field(_on_cells(bundle.psi1, cgrid, m), mgrid)
    psi = composite_cell_field(_on_cells(bundle.psi, cgrid, m), mgrid)
    theta = _on_cells(bundle.theta_m1, cgrid, m)[..., mgrid.cell_index]  # (d, N_x)
    grad = mgrid.grad(dens.n00)  # (d, N_x)
    n00, n01, n1m1 = dens.n00[:, None], dens.n01[:, None], dens.n1m1[:, None]
    lead = n00 * psi0
    eta_block = n00 * psi1 + n01 * psi0
    eps_block = theta_sign * np.sum(theta * grad, axis=0)[:, None] * psi + n1m1 * psi0
    return Approximant(lead, eta_block, eps_block, epsilon, eta)


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def provenance(cfg):
    import scipy

    return {"config_hash": config_hash(cfg), "package": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "python": platform.python_version()}


@dataclass
class ConvergenceReport:
    points: list
    fits: dict
    criteria: dict
    provenance: dict
    extras: dict = field(default_factory=dict)

    def as_dict(self):
        return {"schema": REPORT_SCHEMA, "points": self.points, "fits": self.fits,
                "criteria": self.criteria, "provenance": self.provenance, "extras": self.extras}

    def digest(self):
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True, default=_plain).encode()).hexdigest()

    def write(self, out_dir, fmt="both"):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if fmt in ("json", "both"):
            path = out / "report.json"
            path.write_text(json.dumps(self.as_dict(), indent=2, default=_plain))
            written.append(path)
        if fmt in ("csv", "both"):
            path = out / "report.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(CSV_COLUMNS)
                order = self.fits.get("ratio_order")
                for p in self.points:
                    writer.writerow([p.get("epsilon"), p.get("eta"), p.get("alpha"), p.get("error_L2"),
                                     p.get("ratio"), order, p.get("floor_flag")])
            written.append(path)
        return written


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return str(obj)


def sweep_points(sweep):
    """Expand a sweep spec into (epsilon, eta) pairs.

    ``{"points": [[eps, eta], ...]}`` lists pairs; ``{"epsilons": [...],
    "rule": "sqrt"}`` gives eta = sqrt(eps); ``"rule": "cube"`` gives
    eta = eps^(1/3).
    """
    if not sweep:
        return []
    if "points" in sweep:
        return [(float(e), float(h)) for e, h in sweep["points"]]
    eps = [float(e) for e in sweep.get("epsilons", [])]
    rule = sweep.get("rule", "sqrt")
    power = {"sqrt": 0.5, "cube": 1.0 / 3.0}.get(rule)
    if power is None:
        raise HomogError(f"unknown sweep rule {rule!r}")
    return [(e, e**power) for e in eps]


def study_point(kernel, bundle, source, epsilon, eta, period=1.0, floor_check=True, theta_sign=-1.0):
    """One sweep point: direct solve, approximant and error decomposition."""
    problem = TransportProblem.build(kernel, epsilon, eta, source, period)
    sol = solve_transport(problem)
    mg = problem.mgrid
    w = kernel.vgrid.weights
    dens = limit_densities(bundle, source, mg, kernel.cgrid, kernel.vgrid, kernel.psi_star)
    approx = compose_approximant(bundle, dens, epsilon, eta, mg, kernel.cgrid, theta_sign)
    err = mg.l2_norm(sol.f - approx.total, w)
    scale = eta + epsilon / eta
    point = {
        "epsilon": epsilon, "eta": eta, "alpha": problem.alpha, "n_x": mg.n,
        "cells": mg.cells_per_period, "error_L2": err, "ratio": err / scale,
        "solution_norm": mg.l2_norm(sol.f, w), "solver_residual": sol.residual,
        "error_leading_only": mg.l2_norm(sol.f - approx.lead, w),
        "error_without_eps_block": mg.l2_norm(sol.f - approx.lead - eta * approx.eta_block, w),
        "eta_block_norm": mg.l2_norm(approx.eta_block, w),
        "eps_block_norm": mg.l2_norm(approx.eps_block, w),
    }
    if floor_check:
        floor, _ = resolution_floor(sol)
        point["floor"] = floor
        point["floor_flag"] = bool(floor > 0.1 * err)
    else:
        point["floor_flag"] = False
    return point


def run_convergence_study(cfg, kernel=None, bundle=None, evaluate_criteria=None) -> ConvergenceReport:
    """Run the (epsilon, eta) sweep of an experiment config; errors are recorded per point."""
    from .config import build_kernel_from_config

    kernel = kernel or build_kernel_from_config(cfg)
    pairs = sweep_points(cfg.get("sweep", {}))
    source = SourceSpec.from_config(cfg.get("source"))
    period = float(cfg.get("macro", {}).get("period", 1.0))
    floor_check = bool(cfg.get("study", {}).get("floor_check", True))
    workers = int(cfg.get("study", {}).get("workers", 1))
    if pairs and bundle is None:
        bundle = build_bundle(kernel, cfg.get("tolerances", {}).get("compat", 1e-11))

    def one(pair):
        eps, eta = pair
        try:
            return study_point(kernel, bundle, source, eps, eta, period, floor_check)
        except HomogError as exc:
            return {"epsilon": eps, "eta": eta, "alpha": eps / eta, "error": str(exc),
                    "error_type": type(exc).__name__, "floor_flag": True}

    # numpy releases the GIL in the dense solves; map keeps the sweep order
    with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
        points = list(pool.map(one, pairs))
    fits = {}
    good = [p for p in points if "ratio" in p and not p.get("floor_flag")]
    if len(good) >= 2:
        eps = [p["epsilon"] for p in good]
        fits["error_vs_epsilon"] = fit_slope(eps, [p["error_L2"] for p in good]).as_dict()
        fits["ratio_vs_epsilon"] = fit_slope(eps, [p["ratio"] for p in good]).as_dict()
        fits["ratio_order"] = fits["ratio_vs_epsilon"]["slope"]
        fits["ratio_decrease"] = [good[i]["ratio"] / good[i + 1]["ratio"] for i in range(len(good) - 1)]
        fits["ratio_strictly_decreasing"] = all(r > 1 for r in fits["ratio_decrease"])
    for p in points:
        p["fitted_order"] = fits.get("ratio_order")
    criteria = evaluate_criteria(points, fits) if evaluate_criteria else {}
    extras = {}
    if bundle is not None:
        extras["Dtensor"] = bundle.Dtensor.tolist()
        extras["D1tensor"] = bundle.D1tensor.tolist()
    return ConvergenceReport(points, fits, criteria, provenance(cfg), extras)


def study_criteria(kernel, closed_form_tol=1e-12):
    """Criteria evaluated on a sweep: strictly decreasing ratios, plus the
    closed form and a halving of the ratio per refinement for isotropic kernels."""
    isotropic = kernel.sigma_spec.get("family") == "isotropic"

    def evaluate(points, fits):
        if not points:
            return {}
        failed = [p for p in points if "error" in p]
        out = {"all_points_solved": {"passed": not failed,
                                     "detail": [p["error"] for p in failed]}}
        dec = fits.get("ratio_decrease", [])
        out["ratio_strictly_decreasing"] = {"passed": bool(dec) and all(r > 1 for r in dec),
                                            "detail": dec}
        flagged = [p["epsilon"] for p in points if p.get("floor_flag")]
        out["resolution_floor"] = {"passed": not flagged, "detail": flagged}
        if isotropic:
            blocks = max(max(p.get("eta_block_norm", np.inf), p.get("eps_block_norm", np.inf))
                         for p in points)
            out["isotropic_closed_form"] = {"passed": blocks <= closed_form_tol, "detail": blocks}
            out["isotropic_ratio_halving"] = {"passed": bool(dec) and all(r >= 2 for r in dec),
                                              "detail": dec}
        return out

    return evaluate
