import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinetic_homog.cell_transport import (CellTransportOperator, compatible_rhs, probe_estimates,
                                          smooth_random_field, solve_chi_eta, solve_chi_eta_star,
                                          solve_psi_eta, teta_pinv)
from kinetic_homog.collision import CollisionBank
from kinetic_homog.errors import CompatibilityViolation
from kinetic_homog.linalg import constrained_lstsq


@pytest.fixture(scope="module")
def op(small_kernel):
    return CellTransportOperator(small_kernel, 0.1)


def test_equilibrium_of_t_eta(op, small_kernel):
    pe = op.psi_eta
    assert pe.min() > 0
    assert op.moment(pe) == pytest.approx(1.0, abs=1e-13)
    assert np.abs(op.apply(pe)).max() < 1e-11
    assert op.simplicity["second"] > 1e-8 * op.simplicity["largest"]


def test_adjoint_identity(op, rng):
    f, g = rng.standard_normal((2,) + op.shape)
    assert op.inner(op.apply(f), g) == pytest.approx(op.inner(f, op.apply(g, adjoint=True)), abs=1e-11)


def test_adjoint_kernel_is_psi_star(op, small_kernel):
    ps = np.broadcast_to(small_kernel.psi_star, op.shape)
    assert np.abs(op.apply(ps, adjoint=True)).max() < 1e-12


def test_pinv_against_oracle_and_gauge(op, small_kernel, rng):
    g = compatible_rhs(op, rng.standard_normal(op.shape))
    u = op.pinv(g)
    np.testing.assert_allclose(op.apply(u), g, atol=1e-11)
    assert abs(op.moment(u)) < 1e-13
    oracle = constrained_lstsq(op.matrix, g.ravel(), op.weights * np.tile(small_kernel.psi_star, 16))
    np.testing.assert_allclose(u.ravel(), oracle[: op.size], rtol=1e-10, atol=1e-12)


def test_pinv_star_gauge(op, rng):
    pe = op.psi_eta
    g = rng.standard_normal(op.shape)
    g = g - op.moment(g, adjoint=True) / op.inner(pe, pe) * pe
    u = op.pinv_star(g)
    np.testing.assert_allclose(op.apply(u, adjoint=True), g, atol=1e-11)
    assert abs(op.moment(u, adjoint=True)) < 1e-12


def test_incompatible_rhs_is_rejected(op):
    with pytest.raises(CompatibilityViolation) as info:
        op.pinv(np.ones(op.shape))
    assert "psi*" in info.value.moment


def test_batched_solves_match_single_solves(op, rng):
    g = np.stack([compatible_rhs(op, rng.standard_normal(op.shape)) for _ in range(3)])
    batch = op.pinv(g)
    for i in range(3):
        np.testing.assert_allclose(batch[i], op.pinv(g[i]), atol=1e-13)


@settings(max_examples=8, deadline=None)
@given(eta=st.floats(0.03, 2.0))
def test_psi_eta_positive_and_normalized_for_any_eta(small_kernel, eta):
    op = CellTransportOperator(CollisionBank(small_kernel), eta, check_simple=False)
    assert op.psi_eta.min() > 0
    assert op.moment(op.psi_eta) == pytest.approx(1.0, abs=1e-12)
    assert np.abs(op.no_drift_moment()).max() < 1e-13


def test_chi_solutions_solve_their_equations(op, small_kernel):
    chi = solve_chi_eta(small_kernel, 0.1, op)
    np.testing.assert_allclose(op.apply(chi[0]), small_kernel.vgrid.nodes[:, 0] * op.psi_eta, atol=1e-11)
    chis = solve_chi_eta_star(small_kernel, 0.1, op)
    ps = np.broadcast_to(small_kernel.psi_star, op.shape)
    np.testing.assert_allclose(op.apply(chis[0], adjoint=True), small_kernel.vgrid.nodes[:, 0] * ps,
                               atol=1e-11)
    assert abs(op.moment(chis[0], adjoint=True)) < 1e-12


def test_functional_wrappers(small_kernel, op, rng):
    np.testing.assert_allclose(solve_psi_eta(small_kernel, 0.1), op.psi_eta, atol=1e-13)
    g = compatible_rhs(op, rng.standard_normal(op.shape))
    np.testing.assert_allclose(teta_pinv(small_kernel, 0.1, g), op.pinv(g), atol=1e-13)


def test_eta_must_be_positive(small_kernel):
    with pytest.raises(ValueError):
        CellTransportOperator(small_kernel, 0.0)


def test_per_y_compatible_data_grow_more_slowly(generic_kernel):
    glob = probe_estimates(generic_kernel, "global")
    per_y = probe_estimates(generic_kernel, "per_y")
    assert per_y.slope > glob.slope
    assert -2.3 <= glob.slope <= 0 and -1.3 <= per_y.slope <= 0


def test_smooth_random_field_is_band_limited(small_kernel, rng):
    f = smooth_random_field((16, 8), small_kernel.cgrid, rng, modes=3)
    spec = np.abs(np.fft.fft(f, axis=0))
    assert spec[4:13].max() < 1e-12
