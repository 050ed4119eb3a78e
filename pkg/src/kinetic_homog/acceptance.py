"""Acceptance battery: the ten verification criteria as reusable functions.

Every criterion returns a :class:`CriterionResult` carrying the measured
numbers, so the pytest suite, the ``check`` subcommand and the study report
all share one implementation.  Expensive artifacts (kernels, bundles) are
cached per process.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .cell_transport import (CellTransportOperator, DEFAULT_ETAS, compatible_rhs, probe_estimates,
                             smooth_random_field, solve_chi_eta, solve_chi_eta_star)
from .collision import CollisionBank, no_drift_check, no_drift_moment
from .effective import EffectiveOperator, build_bundle, d_eta
from .errors import CompatibilityViolation, HomogError
from .grids import CellGrid, MacroGrid, build_velocity_grid
from .harness import compose_approximant, study_point
from .kernel import build_kernel, check_assumptions
from .linalg import constrained_lstsq, fit_slope
from .macro import epsilon_expansion_terms, limit_densities
from .transport_direct import TransportProblem, apriori_check, solve_transport

GENERIC_SIGMA = {"family": "separable", "amplitude": [8.0, 4.0], "beta": 0.4,
                 "modulation": [0.0, 1.0], "g": [0.5, 1.0], "h": [1.0, -0.6]}
GENERIC_PSI_STAR = [1.0, 1.0]
GENERIC_SOURCE = {"terms": [{"x": {"cos": [0.0, 1.0], "sin": [0.0, 0.5]},
                             "y": {"cos": [1.0, 0.3], "sin": [0.4]}, "v": [1.0, 0.5]}]}
ISOTROPIC_SIGMA = {"family": "isotropic", "scale": 1.0}
ISOTROPIC_SOURCE = {"terms": [{"x": {"cos": [0.0, 1.0]}}]}
DRIFT_SIGMA = dict(GENERIC_SIGMA, drift=0.3)

HEADLINE_EPSILONS = (1e-2, 2.5e-3, 6.25e-4)
APRIORI_SWEEP = tuple((eta * a, eta) for eta in (0.2, 0.1) for a in (0.1, 0.05, 0.025))
SLOPE_MARGIN = 0.3


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    message: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number:2d} [{status}] {self.title}" + (f": {self.message}" if self.message else "")

    def as_dict(self):
        return {"number": self.number, "title": self.title, "passed": bool(self.passed),
                "metrics": _plain(self.metrics), "message": self.message}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


# -- cached fixtures ---------------------------------------------------------

@lru_cache(maxsize=None)
def standard_kernel(name="generic", n_y=64, n_v=8):
    vg = build_velocity_grid(count=n_v)
    cg = CellGrid(n_y)
    if name == "generic":
        return build_kernel(GENERIC_SIGMA, GENERIC_PSI_STAR, vg, cg)
    if name == "isotropic":
        return build_kernel(ISOTROPIC_SIGMA, None, vg, cg)
    if name == "drift":
        return build_kernel(DRIFT_SIGMA, GENERIC_PSI_STAR, vg, cg, allow_asymmetry=True)
    raise ValueError(f"unknown standard kernel {name!r}")


_BUNDLES = {}


def cached_bundle(kernel):
    key = id(kernel)
    if key not in _BUNDLES:
        _BUNDLES[key] = (kernel, build_bundle(kernel))
    return _BUNDLES[key][1]


def _flip(f, kernel):
    """(y, v) -> (-y, -v) on fields shaped (..., N_y, n_v)."""
    return f[..., kernel.cgrid.y_flip, :][..., kernel.vgrid.v_flip]


def _rel(a, b):
    return float(np.linalg.norm(np.ravel(a - b)) / max(np.linalg.norm(np.ravel(b)), 1e-300))


# -- 1. oracle equivalence ---------------------------------------------------

def criterion_oracle(kernel=None, n_cases=20, seed=0, eta=0.1, tol=1e-10):
    kernel = kernel or standard_kernel("generic", n_y=16)
    rng = np.random.default_rng(seed)
    bank = CollisionBank(kernel)
    op = CellTransportOperator(bank, eta)
    eff = EffectiveOperator(bank)
    w, ps, psi = kernel.vgrid.weights, kernel.psi_star, bank.psi
    n_y, n_v = kernel.n_y, kernel.n_v
    errs = {"q_pinv": 0.0, "qstar_pinv": 0.0, "teta_pinv": 0.0, "teta_star_pinv": 0.0,
            "l_pinv": 0.0, "lstar_pinv": 0.0}
    pe = op.psi_eta.ravel()
    mean = np.full(n_y, 1.0 / n_y)
    for _ in range(n_cases):
        g = rng.standard_normal((n_y, n_v))
        gq = g - np.sum(g * ps * w, axis=-1, keepdims=True) * ps
        gs = g - (np.sum(g * psi * w, axis=-1) / np.sum(psi * psi * w, axis=-1))[:, None] * psi
        uq, us = bank.q_pinv(gq), bank.qstar_pinv(gs)
        for j in range(n_y):
            errs["q_pinv"] = max(errs["q_pinv"], _rel(uq[j], constrained_lstsq(bank.Q[j], gq[j], w * ps)[:n_v]))
            errs["qstar_pinv"] = max(errs["qstar_pinv"],
                                     _rel(us[j], constrained_lstsq(bank.Qs[j], gs[j], w * psi[j])[:n_v]))
        gt = compatible_rhs(op, g)
        oracle = constrained_lstsq(op.matrix, gt.ravel(), op.weights * np.tile(ps, n_y))[: op.size]
        errs["teta_pinv"] = max(errs["teta_pinv"], _rel(op.pinv(gt).ravel(), oracle))
        gts = (g.ravel() - (op.weights @ (g.ravel() * pe)) / (op.weights @ pe**2) * pe)
        oracle = constrained_lstsq(op.matrix_star, gts, op.weights * pe)[: op.size]
        errs["teta_star_pinv"] = max(errs["teta_star_pinv"],
                                     _rel(op.pinv_star(gts.reshape(op.shape)).ravel(), oracle))
        r = rng.standard_normal(n_y)
        rl = r - r.mean()
        errs["l_pinv"] = max(errs["l_pinv"], _rel(eff.l_pinv(rl), constrained_lstsq(eff.matrix, rl, mean)[:n_y]))
        rho = eff.rho0
        rs = r - (r @ rho) / (rho @ rho) * rho
        errs["lstar_pinv"] = max(errs["lstar_pinv"],
                                 _rel(eff.lstar_pinv(rs), constrained_lstsq(eff.matrix_star, rs, mean)[:n_y]))
    worst = max(errs.values())
    return CriterionResult(1, "oracle equivalence", worst <= tol, {"relative_errors": errs, "cases": n_cases},
                           f"worst relative error {worst:.2e} over {n_cases} cases")


# -- 2. equilibrium battery --------------------------------------------------

def equilibrium_metrics(kernel, eta=0.1):
    bank = CollisionBank(kernel)
    op = CellTransportOperator(bank, eta)
    eff = EffectiveOperator(bank)
    w, ps, psi, pe, rho = kernel.vgrid.weights, kernel.psi_star, bank.psi, op.psi_eta, eff.rho0
    vf, yf = kernel.vgrid.v_flip, kernel.cgrid.y_flip
    assumptions = check_assumptions(kernel)
    positivity = {"psi_star": float(ps.min()), "psi": float(psi.min()), "psi_eta": float(pe.min()),
                  "rho0": float(rho.min())}
    norms = {"int psi*^2": abs(w @ ps**2 - 1), "int psi psi*": float(np.abs(psi @ (w * ps) - 1).max()),
             "int int psi^eta psi*": abs(float(op.moment(pe)) - 1), "int rho0": abs(rho.mean() - 1)}
    parities = {k: v for k, v in assumptions["residuals"].items() if "parity" in k or k == "psi_star_evenness"}
    parities.update({
        "psi_v": float(np.abs(psi - psi[:, vf]).max()),
        "psi_y": float(np.abs(psi - psi[yf]).max()),
        "psi_eta_joint": float(np.abs(pe - _flip(pe, kernel)).max()),
        "rho0_y": float(np.abs(rho - rho[yf]).max()),
        "D_y": float(np.abs(eff.D_field - eff.D_field[yf]).max()),
        "U_odd": float(np.abs(eff.U_field + eff.U_field[yf]).max()),
    })
    return positivity, norms, parities


def criterion_equilibrium(kernel=None, eta=0.1, tol_norm=1e-12, tol_parity=1e-10):
    kernel = kernel or standard_kernel("generic")
    positivity, norms, parities = equilibrium_metrics(kernel, eta)
    ok = (all(v > 0 for v in positivity.values()) and all(v <= tol_norm for v in norms.values())
          and all(v <= tol_parity for v in parities.values()))
    return CriterionResult(2, "equilibrium battery", ok,
                           {"positivity": positivity, "normalizations": norms, "parities": parities},
                           f"max normalization defect {max(norms.values()):.1e}, "
                           f"max parity defect {max(parities.values()):.1e}")


# -- 3. no-drift assertions --------------------------------------------------

def criterion_no_drift(kernel=None, negative=None, etas=DEFAULT_ETAS, tol=1e-12):
    kernel = kernel or standard_kernel("generic")
    negative = negative if negative is not None else standard_kernel("drift")
    bank = CollisionBank(kernel)
    per_y = float(np.abs(no_drift_moment(bank)).max())
    global_ = [float(np.abs(CellTransportOperator(bank, eta, check_simple=False).no_drift_moment()).max())
               for eta in etas]
    caught = []
    nb = CollisionBank(negative)
    try:
        no_drift_check(nb)
    except CompatibilityViolation as exc:
        caught.append(exc.moment)
    try:
        solve_chi_eta(negative, etas[0], CellTransportOperator(nb, etas[0], check_simple=False))
    except CompatibilityViolation as exc:
        caught.append(exc.moment)
    ok = per_y <= tol and max(global_) <= tol and len(caught) == 2
    return CriterionResult(3, "no-drift assertions", ok,
                           {"per_y": per_y, "global": global_, "negative_control_moments": caught},
                           f"per-y {per_y:.1e}, global {max(global_):.1e}, negative control raised {len(caught)}/2")


# -- 4 and 6. expansion orders and tensors -------------------------------------

@lru_cache(maxsize=None)
def _expansion_errors(name="generic", etas=DEFAULT_ETAS):
    kernel = standard_kernel(name)
    b = cached_bundle(kernel)
    vg = kernel.vgrid
    bank = CollisionBank(kernel)
    out = {"psi": [], "chi": [], "chi_star": [], "D": [], "D_alt_gap": []}
    for eta in etas:
        op = CellTransportOperator(bank, eta, check_simple=False)
        pe = op.psi_eta
        chi = solve_chi_eta(kernel, eta, op)
        chis = solve_chi_eta_star(kernel, eta, op)
        out["psi"].append(float(op.norm(pe - b.psi0 - eta * b.psi1 - eta**2 * b.psi2)))
        out["chi"].append(float(np.sqrt(np.sum(op.norm(chi - b.chi_m1 / eta - b.chi0) ** 2))))
        out["chi_star"].append(float(np.sqrt(np.sum(
            op.norm(chis - b.chi_s_m1 / eta - b.chi_s0 - eta * b.chi_s1) ** 2))))
        De = d_eta(chis, pe, vg)
        out["D"].append(float(np.abs(De - b.Dtensor - eta * b.D1tensor).max()))
    return out


def criterion_expansion_orders(etas=DEFAULT_ETAS, claimed=(3, 1, 2)):
    errs = _expansion_errors("generic", tuple(etas))
    fits = {k: fit_slope(etas, errs[k]).slope for k in ("psi", "chi", "chi_star")}
    need = dict(zip(("psi", "chi", "chi_star"), (p - SLOPE_MARGIN for p in claimed)))
    ok = all(fits[k] >= need[k] for k in fits)
    return CriterionResult(4, "expansion orders", ok, {"errors": errs, "slopes": fits, "thresholds": need},
                           ", ".join(f"{k} {fits[k]:.2f} (>= {need[k]:.1f})" for k in fits))


def criterion_tensor_consistency(etas=DEFAULT_ETAS, tol=1e-11):
    kernel = standard_kernel("generic")
    b = cached_bundle(kernel)
    errs = _expansion_errors("generic", tuple(etas))["D"]
    slope = fit_slope(etas, errs).slope
    gap = float(np.abs(b.Dtensor - b.Dtensor_direct).max())
    sym = 0.5 * (b.Dtensor + b.Dtensor.T)
    lam = float(np.linalg.eigvalsh(sym).min())
    ok = slope > 1 and gap <= tol and lam > 0
    return CriterionResult(6, "effective tensor consistency", ok,
                           {"D": b.Dtensor, "D1": b.D1tensor, "remainder": errs, "slope": slope,
                            "route_gap": gap, "min_eigenvalue": lam},
                           f"remainder order {slope:.2f}, route gap {gap:.1e}, min eig {lam:.3f}")


# -- 5. operator estimates ---------------------------------------------------

def criterion_estimates(kernel=None, etas=DEFAULT_ETAS, seed=0):
    kernel = kernel or standard_kernel("generic")
    glob = probe_estimates(kernel, "global", etas, seed)
    per_y = probe_estimates(kernel, "per_y", etas, seed)
    chi = probe_estimates(kernel, "chi", etas, seed)
    bounded = fit_slope(etas, chi.constants).slope
    ok = (-2.3 <= glob.slope <= 0) and (-1.3 <= per_y.slope <= 0) and bounded >= -SLOPE_MARGIN
    return CriterionResult(5, "operator estimates", ok,
                           {"global": glob.as_dict(), "per_y": per_y.as_dict(), "chi": chi.as_dict(),
                            "eta_chi_slope": bounded},
                           f"global {glob.slope:.2f}, per-y {per_y.slope:.2f}, "
                           f"slope of eta |chi| {bounded:.2f}")


# -- 7. density limits -------------------------------------------------------

def criterion_density_limits(etas=DEFAULT_ETAS, cells=2, points=32):
    kernel = standard_kernel("generic")
    b = cached_bundle(kernel)
    mg = MacroGrid(1.0, points, cells)
    dens = limit_densities(b, GENERIC_SOURCE, mg, kernel.cgrid, kernel.vgrid, kernel.psi_star)
    bank = CollisionBank(kernel)
    e0, e1 = [], []
    for eta in etas:
        ex = epsilon_expansion_terms(kernel, eta, GENERIC_SOURCE, mg,
                                     CellTransportOperator(bank, eta, check_simple=False))
        e0.append(mg.l2_norm(ex.n0 - dens.n00 - eta * dens.n01))
        e1.append(mg.l2_norm(eta * ex.n1 - dens.n1m1))
    slope = fit_slope(etas, e0).slope
    monotone = all(e1[i + 1] < e1[i] for i in range(len(e1) - 1))
    ok = slope > 1 and monotone
    return CriterionResult(7, "density limits", ok,
                           {"n0_remainder": e0, "n0_slope": slope, "n1_gap": e1, "n1_monotone": monotone},
                           f"n0 remainder order {slope:.2f}, eta n1 gaps {', '.join(f'{e:.1e}' for e in e1)}")


# -- 8. a priori estimate ----------------------------------------------------

def criterion_apriori(sweep=APRIORI_SWEEP, points_per_cell=16, n_random=20, seed=0, max_variation=0.5):
    kernel = standard_kernel("generic", n_y=points_per_cell)
    rows = []
    for eps, eta in sweep:
        p = TransportProblem.build(kernel, eps, eta, GENERIC_SOURCE, points_per_cell=points_per_cell)
        sol = solve_transport(p)
        rows.append(apriori_check(p, sol.f, n_random, seed))
    ratios = [r["ratio"] for r in rows]
    variation = max(ratios) / min(ratios) - 1
    q_min = min(r["Q_random_min"] for r in rows)
    q_const = max(abs(r["Q_constant"]) for r in rows)
    q_scale = max(max(abs(r["Q_u"]), abs(r["Q_random_min"])) for r in rows)
    ok = variation < max_variation and q_min >= 0 and q_const <= 1e-12 * max(q_scale, 1.0)
    return CriterionResult(8, "a priori estimate", ok,
                           {"points": rows, "ratio_variation": variation, "Q_random_min": q_min,
                            "Q_constant_max": q_const},
                           f"ratio variation {variation:.2f}, min random Q {q_min:.2e}, "
                           f"Q on constants {q_const:.1e}")


# -- 9. headline approximation -----------------------------------------------------

def headline_sweep(name, epsilons=HEADLINE_EPSILONS, floor_check=False):
    kernel = standard_kernel(name)
    b = cached_bundle(kernel)
    source = GENERIC_SOURCE if name == "generic" else ISOTROPIC_SOURCE
    return [study_point(kernel, b, source, eps, float(np.sqrt(eps)), floor_check=floor_check)
            for eps in epsilons]


def isotropic_closed_form_gap(eps=1e-2):
    """Compare the composed approximant with n00(x) = cos(2 pi x) / (1 + 4 pi^2 D), D = int v^2 dnu."""
    kernel = standard_kernel("isotropic")
    b = cached_bundle(kernel)
    eta = float(np.sqrt(eps))
    p = TransportProblem.build(kernel, eps, eta, ISOTROPIC_SOURCE)
    mg = p.mgrid
    dens = limit_densities(b, ISOTROPIC_SOURCE, mg, kernel.cgrid, kernel.vgrid, kernel.psi_star)
    approx = compose_approximant(b, dens, eps, eta, mg, kernel.cgrid).total
    D = float(kernel.vgrid.weights @ kernel.vgrid.nodes[:, 0] ** 2)
    closed = (np.cos(2 * np.pi * mg.points[:, 0]) / (1 + 4 * np.pi**2 * D))[:, None]
    return float(np.abs(approx - closed).max()), D


def criterion_headline(epsilons=HEADLINE_EPSILONS, floor_check=True):
    gen = headline_sweep("generic", epsilons, floor_check)
    iso = headline_sweep("isotropic", epsilons, False)
    r_gen = [p["ratio"] for p in gen]
    r_iso = [p["ratio"] for p in iso]
    dec_gen = [r_gen[i] / r_gen[i + 1] for i in range(len(r_gen) - 1)]
    dec_iso = [r_iso[i] / r_iso[i + 1] for i in range(len(r_iso) - 1)]
    gap, D = isotropic_closed_form_gap(epsilons[0])
    floors = [p.get("floor_flag", False) for p in gen]
    ok = (all(d > 1 for d in dec_gen) and all(d >= 2 for d in dec_iso) and gap <= 1e-12
          and not any(floors))
    return CriterionResult(9, "headline approximation", ok,
                           {"generic": gen, "isotropic": iso, "generic_decrease": dec_gen,
                            "isotropic_decrease": dec_iso, "closed_form_gap": gap, "isotropic_D": D},
                           f"generic ratios {', '.join(f'{r:.3e}' for r in r_gen)}; isotropic decrease "
                           f"{', '.join(f'{d:.5f}' for d in dec_iso)}; closed form gap {gap:.1e}")


# -- 10. symmetry of T^eta inverses ------------------------------------------

def criterion_symmetry(kernel=None, eta=0.1, n_cases=10, seed=0, tol=1e-10):
    kernel = kernel or standard_kernel("generic")
    op = CellTransportOperator(kernel, eta, check_simple=False)
    rng = np.random.default_rng(seed)
    worst = {"even": 0.0, "odd": 0.0, "even_star": 0.0, "odd_star": 0.0}
    pe = op.psi_eta
    for _ in range(n_cases):
        g = smooth_random_field(op.shape, kernel.cgrid, rng)
        for kind, sign in (("even", 1.0), ("odd", -1.0)):
            h = 0.5 * (g + sign * _flip(g, kernel))
            u = op.pinv(compatible_rhs(op, h))
            scale = max(float(np.abs(u).max()), 1e-300)
            worst[kind] = max(worst[kind], float(np.abs(u - sign * _flip(u, kernel)).max()) / scale)
            hs = h - op.moment(h, adjoint=True) / op.inner(pe, pe) * pe
            us = op.pinv_star(hs)
            scale = max(float(np.abs(us).max()), 1e-300)
            worst[kind + "_star"] = max(worst[kind + "_star"],
                                        float(np.abs(us - sign * _flip(us, kernel)).max()) / scale)
    top = max(worst.values())
    return CriterionResult(10, "parity of the cell inverses", top <= tol, {"defects": worst, "cases": n_cases},
                           f"worst parity defect {top:.1e} over {n_cases} cases per family")


CRITERIA = {
    1: criterion_oracle, 2: criterion_equilibrium, 3: criterion_no_drift, 4: criterion_expansion_orders,
    5: criterion_estimates, 6: criterion_tensor_consistency, 7: criterion_density_limits,
    8: criterion_apriori, 9: criterion_headline, 10: criterion_symmetry,
}


def run_criterion(number, **kwargs):
    """Evaluate one criterion; a library error counts as a failure with its message."""
    try:
        return CRITERIA[number](**kwargs)
    except HomogError as exc:
        return CriterionResult(number, CRITERIA[number].__name__.removeprefix("criterion_"), False,
                               {"error_type": type(exc).__name__}, str(exc))


def run_all(numbers=None):
    return [run_criterion(n) for n in (numbers or sorted(CRITERIA))]


def kernel_battery(kernel, eta=0.1, seed=0):
    """Criteria applicable to an arbitrary configured kernel (used by ``check``).

    The no-drift assertion runs first and raises CompatibilityViolation
    with the failing moment named.
    """
    no_drift_check(CollisionBank(kernel))
    small = kernel if kernel.cgrid.n <= 32 else kernel.on_grid(CellGrid(16, kernel.cgrid.dim))
    results = []
    for number, fn in ((1, lambda: criterion_oracle(small, seed=seed, eta=eta)),
                       (2, lambda: criterion_equilibrium(kernel, eta)),
                       (10, lambda: criterion_symmetry(kernel, eta, seed=seed))):
        try:
            results.append(fn())
        except HomogError as exc:
            results.append(CriterionResult(number, fn.__name__, False, {"error_type": type(exc).__name__},
                                           str(exc)))
    return results
