import numpy as np
import pytest

from kinetic_homog.acceptance import GENERIC_SOURCE
from kinetic_homog.cell_transport import CellTransportOperator
from kinetic_homog.effective import build_bundle
from kinetic_homog.errors import ConfigError, IndefiniteTensor
from kinetic_homog.grids import MacroGrid
from kinetic_homog.linalg import fit_slope
from kinetic_homog.macro import (SourceSpec, div_tensor_grad, epsilon_expansion_terms, hessian,
                                 limit_densities, solve_macro_diffusion)

MG = MacroGrid(1.0, 32, 2)


def test_macro_diffusion_closed_form():
    x = MG.points[:, 0]
    n = solve_macro_diffusion([[0.3]], np.cos(2 * np.pi * x) + 2.0, MG)
    np.testing.assert_allclose(n, np.cos(2 * np.pi * x) / (1 + 0.3 * 4 * np.pi**2) + 2.0, atol=1e-13)


def test_macro_diffusion_residual_with_batched_sources():
    x = MG.points[:, 0]
    src = np.stack([np.sin(2 * np.pi * x), np.cos(6 * np.pi * x)], axis=1)
    n = solve_macro_diffusion([[0.7]], src, MG)
    res = n - np.stack([div_tensor_grad(MG, [[0.7]], n[:, i]) for i in range(2)], axis=1)
    np.testing.assert_allclose(res, src, atol=1e-11)


def test_indefinite_tensor_is_rejected():
    with pytest.raises(IndefiniteTensor):
        solve_macro_diffusion([[-0.1]], np.zeros(MG.size), MG)


def test_hessian_of_trig_polynomial():
    x = MG.points[:, 0]
    h = hessian(MG, np.sin(2 * np.pi * x))
    np.testing.assert_allclose(h[0, 0], -(2 * np.pi) ** 2 * np.sin(2 * np.pi * x), atol=1e-10)


def test_source_band_limit_and_composite(vgrid):
    spec = SourceSpec.from_config({"terms": [{"x": {"cos": [0.0] * 16 + [1.0]}}]})
    with pytest.raises(ConfigError):
        spec.x_values(MG)
    with pytest.raises(ConfigError):
        SourceSpec.from_config({"terms": []})
    src = SourceSpec.from_config(GENERIC_SOURCE)
    comp = src.composite(MG, vgrid)
    x = MG.points[:, 0]
    y = (x / MG.alpha) % 1
    expected = ((np.cos(2 * np.pi * x) + 0.5 * np.sin(4 * np.pi * x))
                * (1 + 0.3 * np.cos(2 * np.pi * y) + 0.4 * np.sin(2 * np.pi * y)))
    np.testing.assert_allclose(comp[:, 0], expected * (1 + 0.5 * vgrid.nodes[0, 0] ** 2), atol=1e-13)


@pytest.fixture(scope="module")
def expansions(generic_kernel):
    from kinetic_homog.collision import CollisionBank

    bank = CollisionBank(generic_kernel)
    etas = (0.2, 0.1, 0.05, 0.025)
    return etas, [epsilon_expansion_terms(generic_kernel, eta, GENERIC_SOURCE, MG,
                                          CellTransportOperator(bank, eta, check_simple=False))
                  for eta in etas]


def test_expansion_terms_scale_with_negative_powers_of_eta(expansions, generic_kernel):
    etas, ex = expansions
    w = generic_kernel.vgrid.weights
    for k, name in ((1, "f1"), (2, "f2"), (3, "f3")):
        norms = [np.sqrt(np.sum(getattr(e, name) ** 2 * w) / (64 * MG.n)) for e in ex]
        assert fit_slope(etas, norms).slope >= -k - 0.3


def test_f2bar_gauge_and_density_equation(expansions, generic_kernel):
    _, ex = expansions
    ps, w = generic_kernel.psi_star, generic_kernel.vgrid.weights
    for e in ex:
        moment = np.mean(np.sum(e.f2bar * ps * w, axis=-1), axis=-1)
        assert np.abs(moment).max() < 1e-13 * np.abs(e.f2bar).max()
        assert np.all(np.linalg.eigvalsh(e.D_eta) > 0)


def test_limit_densities_for_y_even_source_have_no_n1m1(generic_kernel):
    b = build_bundle(generic_kernel)
    even = {"terms": [{"x": {"cos": [0.0, 1.0]}, "y": [1.0, 0.3], "v": [1.0, 0.5]}]}
    dens = limit_densities(b, even, MG, generic_kernel.cgrid, generic_kernel.vgrid, generic_kernel.psi_star)
    assert np.abs(dens.S1m1).max() < 1e-12
    assert np.abs(dens.n1m1).max() < 1e-12
    full = limit_densities(b, GENERIC_SOURCE, MG, generic_kernel.cgrid, generic_kernel.vgrid,
                           generic_kernel.psi_star)
    assert np.abs(full.n1m1).max() > 1e-6
    assert np.abs(full.n01).max() < 1e-12  # D1 vanishes by parity
