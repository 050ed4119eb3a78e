import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinetic_homog.errors import GridError
from kinetic_homog.grids import CellGrid, MacroGrid, VelocityGrid, build_velocity_grid


@pytest.mark.parametrize("family", ["gauss", "uniform"])
def test_velocity_grid_is_symmetric_probability(family):
    vg = build_velocity_grid(count=8, family=family)
    assert vg.size == 8
    assert vg.weights.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(vg.nodes[vg.v_flip], -vg.nodes, atol=0)
    np.testing.assert_allclose(vg.weights[vg.v_flip], vg.weights, atol=0)
    assert np.abs(vg.first_moment()).max() < 1e-15
    assert np.all(np.abs(vg.nodes) >= 0.2 - 1e-15)


def test_polar_grid_in_two_dimensions():
    vg = build_velocity_grid(d=2, count=8, speeds=2)
    assert vg.nodes.shape == (16, 2)
    np.testing.assert_allclose(vg.second_moment(), vg.second_moment()[0, 0] * np.eye(2), atol=1e-14)


@pytest.mark.parametrize("spec", [{"count": 7}, {"count": 0}, {"v_min": 0.0}, {"v_min": 1.0, "v_max": 0.5},
                                  {"d": 3}, {"family": "nope"}])
def test_velocity_grid_rejects_bad_specs(spec):
    with pytest.raises(GridError):
        build_velocity_grid(spec)


def test_velocity_grid_rejects_zero_node():
    with pytest.raises(GridError):
        VelocityGrid(np.array([[-1.0], [0.0], [1.0]]), np.ones(3) / 3, 1)


def test_cell_grid_requires_even_count():
    with pytest.raises(GridError):
        CellGrid(15)


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 15), phase=st.floats(0, 2 * np.pi))
def test_spectral_derivative_is_exact_on_resolved_modes(k, phase):
    cg = CellGrid(32)
    y = cg.points[:, 0]
    f = np.sin(2 * np.pi * k * y + phase)
    exact = 2 * np.pi * k * np.cos(2 * np.pi * k * y + phase)
    np.testing.assert_allclose(cg.diff(f, 0, has_v=False), exact, atol=1e-10 * k)


def test_diff_matrix_is_antisymmetric_and_reflects(rng):
    cg = CellGrid(16)
    m = cg.diff_matrix(0).toarray()
    np.testing.assert_allclose(m, -m.T, atol=1e-14)
    p = np.eye(16)[cg.y_flip]
    np.testing.assert_allclose(p @ m @ p, -m, atol=1e-14)
    f = rng.standard_normal(16)
    np.testing.assert_allclose(m @ f, cg.diff(f, 0, has_v=False) - 0.0, atol=1e-12)


def test_nyquist_projector_is_orthogonal_projector():
    cg = CellGrid(8)
    p = cg.nyquist_projector(0).toarray()
    np.testing.assert_allclose(p @ p, p, atol=1e-15)
    np.testing.assert_allclose(p, p.T)
    alt = (-1.0) ** np.arange(8)
    np.testing.assert_allclose(cg.diff(alt, 0, has_v=False), 0, atol=1e-12)
    np.testing.assert_allclose(cg.nyquist_part(alt[:, None] * np.ones(3), 0), alt[:, None] * np.ones(3))


def test_y_flip_is_involution_in_two_dimensions():
    cg = CellGrid(6, 2)
    np.testing.assert_array_equal(cg.y_flip[cg.y_flip], np.arange(cg.size))
    np.testing.assert_allclose(cg.points[cg.y_flip] % 1, (-cg.points) % 1, atol=1e-15)


def test_resample_round_trip_on_band_limited_field():
    cg = CellGrid(16)
    y = cg.points[:, 0]
    f = np.stack([np.cos(2 * np.pi * y), 1 + np.sin(4 * np.pi * y)], axis=1)
    up = cg.resample(f, 64)
    fine = CellGrid(64).points[:, 0]
    np.testing.assert_allclose(up[:, 0], np.cos(2 * np.pi * fine), atol=1e-13)
    np.testing.assert_allclose(CellGrid(64).resample(up, 16), f, atol=1e-13)


def test_macro_grid_geometry():
    mg = MacroGrid(2.0, 64, 4)
    assert mg.alpha == pytest.approx(0.5)
    assert mg.points_per_cell == 16
    np.testing.assert_array_equal(mg.cell_index[:16], np.arange(16))
    np.testing.assert_array_equal(mg.cell_index[16:32], np.arange(16))
    x = mg.points[:, 0]
    np.testing.assert_allclose(mg.grad(np.sin(np.pi * x))[0], np.pi * np.cos(np.pi * x), atol=1e-11)
    assert mg.l2_norm(np.ones(mg.size)) == pytest.approx(np.sqrt(2.0))


@pytest.mark.parametrize("args", [(1.0, 64, 3), (1.0, 30, 4), (0.0, 64, 4), (1.0, 64, 0)])
def test_macro_grid_rejects_bad_layouts(args):
    with pytest.raises(GridError):
        MacroGrid(*args)
