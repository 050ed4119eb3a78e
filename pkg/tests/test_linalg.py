import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from kinetic_homog.errors import CompatibilityViolation, SingularSystem
from kinetic_homog.linalg import BorderedSystem, constrained_lstsq, fit_slope


def singular_matrix(rng, n=6):
    """Random matrix with kernel spanned by ones and left kernel spanned by z."""
    a = rng.standard_normal((n, n))
    a -= a.mean(axis=1, keepdims=True)  # a @ ones = 0
    z = rng.random(n) + 0.5
    a -= np.outer(z, z @ a) / (z @ z)  # z @ a = 0
    return a, z


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), sparse=st.booleans())
def test_bordered_solve_matches_oracle(seed, sparse):
    rng = np.random.default_rng(seed)
    a, z = singular_matrix(rng)
    gauge = np.full(6, 1 / 6)
    system = BorderedSystem(sp.csr_matrix(a) if sparse else a, gauge, z / (z @ z), z)
    g = rng.standard_normal(6)
    g -= (z @ g) / (z @ z) * z
    u = system.solve(g)
    np.testing.assert_allclose(a @ u, g, atol=1e-10)
    np.testing.assert_allclose(u, constrained_lstsq(a, g, gauge), atol=1e-10)
    vec, lam = system.null_vector()
    np.testing.assert_allclose(vec, np.ones(6), atol=1e-10)
    assert abs(lam) < 1e-10


def test_incompatible_rhs_raises_named_violation(rng):
    a, z = singular_matrix(rng)
    system = BorderedSystem(a, np.ones(6), z / (z @ z), z, moment_name="int g z")
    with pytest.raises(CompatibilityViolation) as info:
        system.solve(z)
    assert info.value.moment == "int g z"
    assert system.solve(z, check=False).shape == (6,)


def test_batched_columns(rng):
    a, z = singular_matrix(rng)
    system = BorderedSystem(a, np.ones(6), z / (z @ z), z)
    g = rng.standard_normal((6, 3))
    g -= np.outer(z, z @ g) / (z @ z)
    u = system.solve(g)
    np.testing.assert_allclose(a @ u, g, atol=1e-10)


def test_two_dimensional_kernel_is_singular():
    a = np.zeros((4, 4))
    a[0, 0] = a[1, 1] = 1.0
    with pytest.raises(SingularSystem):
        BorderedSystem(a, np.ones(4), np.ones(4) / 4)


def test_fit_slope_recovers_power_law():
    x = np.array([0.2, 0.1, 0.05, 0.025])
    fit = fit_slope(x, 3 * x**2.5)
    assert fit.slope == pytest.approx(2.5, abs=1e-12)
    assert fit.ci_low <= fit.slope <= fit.ci_high
    assert fit.as_dict()["npoints"] == 4
    with pytest.raises(ValueError):
        fit_slope([1.0], [1.0])
