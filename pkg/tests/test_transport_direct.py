import numpy as np
import pytest

from kinetic_homog.acceptance import GENERIC_SOURCE
from kinetic_homog.errors import ConfigError, ResolutionError
from kinetic_homog.grids import MacroGrid
from kinetic_homog.transport_direct import (BlochSolver, TransportProblem, apriori_check, bloch_transform,
                                            inverse_bloch, resolution_floor, solve_transport, torus_residual)


@pytest.fixture(scope="module")
def problem(small_kernel):
    return TransportProblem.build(small_kernel, 0.05, 0.5, GENERIC_SOURCE)


@pytest.fixture(scope="module")
def solution(problem):
    return solve_transport(problem)


def test_bloch_round_trip(problem, rng):
    x = rng.standard_normal((problem.mgrid.n, 8))
    np.testing.assert_allclose(inverse_bloch(bloch_transform(x, problem.mgrid), problem.mgrid), x, atol=1e-13)


def test_bloch_solution_solves_the_torus_problem(solution):
    assert solution.residual < 1e-10
    assert torus_residual(solution) < 1e-10
    assert solution.info["imag_residue"] < 1e-12


def test_bloch_agrees_with_gmres(problem, solution):
    ref = solve_transport(problem, "gmres")
    assert np.abs(ref.f - solution.f).max() < 1e-9 * np.abs(solution.f).max()


def test_block_count_matches_source_content(problem, solution):
    assert 0 < solution.blocks <= len(BlochSolver(problem).qs)


def test_invalid_scale_pairs_are_rejected(small_kernel):
    with pytest.raises(ConfigError):
        TransportProblem.build(small_kernel, 0.05, 0.04, GENERIC_SOURCE)  # alpha > 1
    with pytest.raises(ConfigError):
        TransportProblem.build(small_kernel, 0.3, 0.8, GENERIC_SOURCE)  # epsilon > alpha
    with pytest.raises(ConfigError):
        TransportProblem.build(small_kernel, 0.03, 0.1, GENERIC_SOURCE)  # 10/3 cells


def test_under_resolved_cells_are_rejected(small_kernel):
    mg = MacroGrid(1.0, 80, 10)
    with pytest.raises(ResolutionError):
        TransportProblem(0.05, 0.5, small_kernel, mg, GENERIC_SOURCE)


def test_apriori_quantities(problem, solution):
    est = apriori_check(problem, solution.f)
    assert est["conservation_defect"] < 1e-12
    assert est["Q_random_min"] >= 0
    assert abs(est["Q_constant"]) <= 1e-12 * est["Q_u"]
    assert est["coercivity"] > 0
    assert 0 < est["ratio"] < 10


def test_resolution_floor_is_small_for_smooth_data(solution):
    floor, fine = resolution_floor(solution)
    assert floor < 1e-4 * solution.problem.mgrid.l2_norm(solution.f, solution.problem.kernel.vgrid.weights)
    assert fine.problem.mgrid.points_per_cell == 32
