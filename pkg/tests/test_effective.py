import numpy as np
import pytest

from kinetic_homog.cell_transport import CellTransportOperator, solve_chi_eta, solve_chi_eta_star
from kinetic_homog.effective import (EffectiveOperator, ExpansionBundle, build_bundle, cell_integral, d_eta,
                                     d_eta_alt, expand_psi)
from kinetic_homog.errors import RangeViolation


@pytest.fixture(scope="module")
def eff(generic_kernel):
    return EffectiveOperator(generic_kernel)


@pytest.fixture(scope="module")
def bundle(generic_kernel):
    return build_bundle(generic_kernel)


def smooth(n, rng, modes=4):
    y = np.arange(n) / n
    return sum(rng.standard_normal() * np.cos(2 * np.pi * m * y) + rng.standard_normal() * np.sin(2 * np.pi * m * y)
               for m in range(1, modes + 1))


def test_rho0_spans_ker_l(eff):
    assert eff.rho0.min() > 0
    assert eff.rho0.mean() == pytest.approx(1.0, abs=1e-13)
    assert np.abs(eff.matrix @ eff.rho0).max() < 1e-10
    y = eff.cgrid.y_flip
    np.testing.assert_allclose(eff.rho0[y], eff.rho0, atol=1e-12)
    np.testing.assert_allclose(eff.matrix_star @ np.ones(64), 0, atol=1e-10)


def test_coefficients_parity_and_ellipticity(eff):
    y = eff.cgrid.y_flip
    np.testing.assert_allclose(eff.D_field[y], eff.D_field, atol=1e-12)
    np.testing.assert_allclose(eff.U_field[y], -eff.U_field, atol=1e-12)
    assert eff.ellipticity > 0
    assert np.abs(eff.U_field).max() > 1e-3


def test_divergence_form_matches_composition_on_smooth_input(eff, rng):
    r = smooth(64, rng)
    ref = eff.apply(r)
    np.testing.assert_allclose(eff.divergence_form_matrix() @ r, ref, atol=1e-8 * np.abs(ref).max())


def test_adjoint_formula_matches_transpose_on_smooth_input(eff, rng):
    n = smooth(64, rng)
    ref = eff.apply(n, adjoint=True)
    np.testing.assert_allclose(eff.apply_star_formula(n), ref, atol=1e-8 * np.abs(ref).max())


def test_l_pinv_gauge_range_and_errors(eff, rng):
    f = smooth(64, rng)
    u = eff.l_pinv(f)
    assert abs(u.mean()) < 1e-13
    np.testing.assert_allclose(eff.apply(u), f, atol=1e-10)
    with pytest.raises(RangeViolation):
        eff.l_pinv(np.ones(64))
    g = f - (f @ eff.rho0) / (eff.rho0 @ eff.rho0) * eff.rho0
    np.testing.assert_allclose(eff.apply(eff.lstar_pinv(g), adjoint=True), g, atol=1e-10)
    with pytest.raises(RangeViolation):
        eff.lstar_pinv(eff.rho0)


def test_psi_expansion_terms_solve_their_hierarchy(eff):
    terms = expand_psi(eff)
    w = eff.vgrid.weights
    # Q psi1 + v.D psi0 = 0 and the psi* gauge of the corrector
    np.testing.assert_allclose(eff.bank.apply(terms["psi1"]), -eff.stream(terms["psi0"]), atol=1e-11)
    assert np.abs(np.sum(terms["psi1"] * eff.psi_star * w, axis=-1)).max() < 1e-13
    assert cell_integral(terms["psi0"], np.broadcast_to(eff.psi_star, eff.psi.shape), w) == pytest.approx(1.0)


def test_parity_zeros_and_tensor_routes(bundle):
    assert np.abs(bundle.theta0).max() < 1e-12
    assert np.abs(bundle.theta_s_0).max() < 1e-12
    assert np.abs(bundle.D1tensor).max() < 1e-12
    np.testing.assert_allclose(bundle.Dtensor, bundle.Dtensor_direct, atol=1e-11)
    assert np.linalg.eigvalsh(0.5 * (bundle.Dtensor + bundle.Dtensor.T)).min() > 0


def test_isotropic_tensor_closed_form(isotropic_kernel):
    b = build_bundle(isotropic_kernel)
    vg = isotropic_kernel.vgrid
    assert b.Dtensor[0, 0] == pytest.approx(vg.weights @ vg.nodes[:, 0] ** 2, abs=1e-14)
    assert np.abs(b.theta_m1).max() < 1e-14
    assert np.abs(b.psi1).max() < 1e-12


def test_d_eta_routes_agree(generic_kernel):
    op = CellTransportOperator(generic_kernel, 0.1, check_simple=False)
    chi = solve_chi_eta(generic_kernel, 0.1, op)
    chis = solve_chi_eta_star(generic_kernel, 0.1, op)
    np.testing.assert_allclose(d_eta(chis, op.psi_eta, generic_kernel.vgrid),
                               d_eta_alt(chi, generic_kernel.vgrid, generic_kernel.psi_star), atol=1e-12)


def test_bundle_round_trip_is_bitwise(tmp_path, bundle):
    bundle.save(tmp_path)
    loaded = ExpansionBundle.load(tmp_path)
    for name in bundle.ARRAYS:
        np.testing.assert_array_equal(getattr(loaded, name), getattr(bundle, name))
    assert loaded.digest() == bundle.digest()


def test_bundle_tampering_is_detected(tmp_path, bundle):
    bundle.save(tmp_path)
    arrays = dict(np.load(tmp_path / "bundle.npz"))
    arrays["rho0"] = arrays["rho0"] * (1 + 1e-15)
    np.savez(tmp_path / "bundle.npz", **arrays)
    with pytest.raises(ValueError, match="digest"):
        ExpansionBundle.load(tmp_path)


def test_bundle_is_deterministic(generic_kernel, bundle):
    assert build_bundle(generic_kernel).digest() == bundle.digest()
