import json

import numpy as np
import pytest

from kinetic_homog.acceptance import GENERIC_SOURCE, ISOTROPIC_SOURCE, cached_bundle
from kinetic_homog.config import load_config
from kinetic_homog.effective import cell_integral
from kinetic_homog.harness import (CSV_COLUMNS, compose_approximant, config_hash, run_convergence_study,
                                   study_criteria, study_point, sweep_points)
from kinetic_homog.macro import limit_densities
from kinetic_homog.transport_direct import TransportProblem


def test_sweep_rules():
    assert sweep_points({}) == []
    assert sweep_points({"points": [[0.01, 0.1]]}) == [(0.01, 0.1)]
    pairs = sweep_points({"epsilons": [1e-2, 1e-3], "rule": "cube"})
    assert pairs[1][1] == pytest.approx(0.1)
    assert sweep_points({"epsilons": [0.04]})[0] == (0.04, pytest.approx(0.2))


def test_eta_block_integrates_to_n01(generic_kernel):
    b = cached_bundle(generic_kernel)
    w = generic_kernel.vgrid.weights
    ps = np.broadcast_to(generic_kernel.psi_star, b.psi.shape)
    # int int (n00 psi1 + n01 psi0) psi* = n01 for any constants n00, n01
    assert abs(cell_integral(b.psi1, ps, w)) < 1e-13
    assert cell_integral(b.psi0, ps, w) == pytest.approx(1.0, abs=1e-13)


def test_approximant_is_real_and_periodic(generic_kernel):
    b = cached_bundle(generic_kernel)
    p = TransportProblem.build(generic_kernel, 0.01, 0.1, GENERIC_SOURCE)
    dens = limit_densities(b, GENERIC_SOURCE, p.mgrid, generic_kernel.cgrid, generic_kernel.vgrid,
                           generic_kernel.psi_star)
    ap = compose_approximant(b, dens, 0.01, 0.1, p.mgrid, generic_kernel.cgrid)
    assert np.isrealobj(ap.total) and np.all(np.isfinite(ap.total))
    # periodic: the spectral derivative of every block is bounded by its resolved content
    spec = np.abs(np.fft.fft(ap.total, axis=0))
    assert spec[p.mgrid.n // 2 - 4 : p.mgrid.n // 2 + 4].max() < 1e-8 * spec.max()


def test_isotropic_approximant_is_the_leading_density(isotropic_kernel):
    point = study_point(isotropic_kernel, cached_bundle(isotropic_kernel), ISOTROPIC_SOURCE, 0.01, 0.1,
                        floor_check=False)
    assert point["eta_block_norm"] < 1e-12
    assert point["eps_block_norm"] < 1e-12


def test_error_decomposition_pieces_are_recorded(generic_kernel):
    point = study_point(generic_kernel, cached_bundle(generic_kernel), GENERIC_SOURCE, 0.01, 0.1,
                        floor_check=False)
    assert point["error_L2"] < point["error_leading_only"]
    assert point["error_L2"] < point["error_without_eps_block"]
    assert point["ratio"] == pytest.approx(point["error_L2"] / (0.1 + 0.1))


def test_empty_sweep_gives_empty_report(tmp_path, isotropic_kernel):
    report = run_convergence_study({"sweep": {"points": []}}, isotropic_kernel,
                                   evaluate_criteria=study_criteria(isotropic_kernel))
    assert report.points == [] and report.criteria == {}
    report.write(tmp_path)
    assert (tmp_path / "report.csv").read_text().strip() == ",".join(CSV_COLUMNS)


def test_failed_points_are_recorded_and_study_continues(generic_kernel):
    cfg = {"sweep": {"points": [[0.03, 0.1], [0.01, 0.1]]}, "source": GENERIC_SOURCE,
           "study": {"floor_check": False}}
    report = run_convergence_study(cfg, generic_kernel, cached_bundle(generic_kernel),
                                   study_criteria(generic_kernel))
    assert report.points[0]["error_type"] == "ConfigError"
    assert "ratio" in report.points[1]
    assert not report.criteria["all_points_solved"]["passed"]


def test_report_is_deterministic(tmp_path, generic_kernel):
    cfg = {"sweep": {"points": [[0.01, 0.1], [0.0025, 0.05]]}, "source": GENERIC_SOURCE,
           "study": {"floor_check": False, "workers": 2}}
    a = run_convergence_study(cfg, generic_kernel, cached_bundle(generic_kernel))
    b = run_convergence_study(cfg, generic_kernel, cached_bundle(generic_kernel))
    assert a.digest() == b.digest()
    assert [p["epsilon"] for p in a.points] == [0.01, 0.0025]
    a.write(tmp_path, "json")
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["schema"] == 1 and payload["provenance"]["config_hash"] == config_hash(cfg)
    assert "ratio_order" in payload["fits"]
