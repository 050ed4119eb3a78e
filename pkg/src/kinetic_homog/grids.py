"""Velocity quadratures, the periodic cell grid and the macroscopic torus."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import GridError


def spectral_diff(values, axis, n, length=1.0):
    """Fourier derivative of ``values`` along ``axis`` on a periodic grid.

    The Nyquist mode is dropped, so the induced matrix is real and
    antisymmetric and commutes (up to sign) with the reflection j -> -j.
    """
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    mult = (2j * np.pi / length) * k.reshape(shape)
    out = np.fft.ifft(np.fft.fft(values, axis=axis) * mult, axis=axis)
    if np.isrealobj(values):
        return out.real
    return out


def spectral_diff_matrix_1d(n, length=1.0):
    mat = spectral_diff(np.eye(n), 0, n, length)
    return 0.5 * (mat - mat.T)


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    """Symmetric discrete velocity set V with probability weights nu."""

    nodes: np.ndarray  # (n_v, d)
    weights: np.ndarray  # (n_v,)
    dim: int
    family: str = "gauss"
    spec: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, self.dim)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if nodes.shape[0] != weights.shape[0]:
            raise GridError("nodes and weights differ in length")
        if np.any(weights < 0):
            raise GridError("negative quadrature weight")
        if abs(weights.sum() - 1.0) > 1e-13:
            raise GridError("weights must sum to 1")
        if np.any(np.linalg.norm(nodes, axis=1) == 0.0):
            raise GridError("zero velocity node")
        flip = self._find_flip()
        if not np.allclose(weights[flip], weights, rtol=0, atol=1e-15):
            raise GridError("weights are not symmetric under v -> -v")
        second = np.einsum("k,ki,kj->ij", weights, nodes, nodes)
        if np.linalg.eigvalsh(second).min() <= 1e-12:
            raise GridError("some direction xi annihilates every velocity node")

    def _find_flip(self):
        nodes = self.nodes
        dist = np.linalg.norm(nodes[:, None, :] + nodes[None, :, :], axis=2)
        flip = dist.argmin(axis=1)
        if np.any(dist[np.arange(len(nodes)), flip] > 1e-12 * max(1.0, np.abs(nodes).max())):
            raise GridError("velocity node set is not symmetric")
        return flip

    @property
    def size(self):
        return self.nodes.shape[0]

    @cached_property
    def v_flip(self):
        return self._find_flip()

    def integrate(self, values, axis=-1):
        """Integral against nu along ``axis``."""
        return np.tensordot(values, self.weights, axes=([axis], [0]))

    def first_moment(self):
        return self.weights @ self.nodes

    def second_moment(self):
        return np.einsum("k,ki,kj->ij", self.weights, self.nodes, self.nodes)


def build_velocity_grid(spec=None, **kwargs) -> VelocityGrid:
    """Construct a symmetric velocity quadrature from a small spec dict.

    Keys: ``d`` (1 or 2), ``family`` (``gauss``/``uniform`` in 1-D,
    ``polar`` in 2-D), ``count`` (even; number of nodes in 1-D, number of
    directions in 2-D), ``v_min``, ``v_max`` and, in 2-D, ``speeds``.
    """
    spec = dict(spec or {}, **kwargs)
    d = int(spec.get("d", 1))
    count = int(spec.get("count", 8))
    v_min = float(spec.get("v_min", 0.2))
    v_max = float(spec.get("v_max", 1.0))
    family = spec.get("family", "gauss" if d == 1 else "polar")
    if count % 2:
        raise GridError("odd node count")
    if count <= 0:
        raise GridError("node count must be positive")
    if v_min <= 0:
        raise GridError("v_min must be positive (0 must not belong to V)")
    if v_max < v_min:
        raise GridError("v_max < v_min")

    def speeds_on(n):
        if v_max == v_min:
            if n != 1:
                raise GridError("v_min == v_max requires a single speed")
            return np.array([v_max]), np.array([1.0])
        if family in ("gauss", "polar"):
            x, w = np.polynomial.legendre.leggauss(n)
            s = 0.5 * (v_max - v_min) * x + 0.5 * (v_max + v_min)
            return s, w / w.sum()
        if family == "uniform":
            h = (v_max - v_min) / n
            return v_min + h * (np.arange(n) + 0.5), np.full(n, 1.0 / n)
        raise GridError(f"unknown velocity family {family!r}")

    if d == 1:
        s, w = speeds_on(count // 2)
        nodes = np.concatenate([-s[::-1], s])[:, None]
        weights = np.concatenate([w[::-1], w]) * 0.5
    elif d == 2:
        if family != "polar":
            raise GridError("2-D grids use the 'polar' family")
        n_speeds = int(spec.get("speeds", 1))
        s, w = speeds_on(n_speeds)
        theta = 2 * np.pi * (np.arange(count) + 0.5) / count
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        nodes = (s[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
        weights = np.repeat(w, count) / count
    else:
        raise GridError("only d = 1 and d = 2 are supported")
    weights = weights / weights.sum()
    return VelocityGrid(nodes, weights, d, family, spec)


@dataclass(frozen=True, eq=False)
class CellGrid:
    """Uniform periodic grid on the unit cell Y = [0, 1)^d, flattened C-order."""

    points_per_dim: int
    dim: int = 1

    def __post_init__(self):
        n = self.points_per_dim
        if n <= 0 or n % 2:
            raise GridError("cell grid needs an even, positive point count")

    @property
    def n(self):
        return self.points_per_dim

    @property
    def spacing(self):
        return 1.0 / self.points_per_dim

    @property
    def size(self):
        return self.points_per_dim**self.dim

    @cached_property
    def points(self):
        axes = [np.arange(self.n) * self.spacing] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def y_flip(self):
        idx = np.indices((self.n,) * self.dim).reshape(self.dim, -1)
        flipped = (-idx) % self.n
        return np.ravel_multi_index(tuple(flipped), (self.n,) * self.dim)

    def diff(self, values, component, has_v=True):
        """d/dy_component of a field shaped (..., N_y, n_v) or (..., N_y)."""
        values = np.asarray(values)
        tail = 1 if has_v else 0
        lead = values.shape[: values.ndim - 1 - tail]
        vshape = values.shape[values.ndim - tail :]
        grid = values.reshape(lead + (self.n,) * self.dim + vshape)
        out = spectral_diff(grid, len(lead) + component, self.n)
        return out.reshape(values.shape)

    def diff_matrix(self, component):
        one = spectral_diff_matrix_1d(self.n)
        mats = [np.eye(self.n)] * self.dim
        mats[component] = one
        out = sp.csr_matrix(mats[0])
        for m in mats[1:]:
            out = sp.kron(out, sp.csr_matrix(m), format="csr")
        out.eliminate_zeros()
        return out

    @property
    def nyquist_symbol(self):
        """|k| of the Nyquist mode, which the real spectral derivative maps to 0."""
        return np.pi * self.n

    def nyquist_projector(self, component):
        """Orthogonal projector onto the Nyquist mode of direction ``component``."""
        alt = (-1.0) ** np.arange(self.n)
        one = np.outer(alt, alt) / self.n
        mats = [sp.identity(self.n, format="csr")] * self.dim
        mats[component] = sp.csr_matrix(one)
        out = mats[0]
        for m in mats[1:]:
            out = sp.kron(out, m, format="csr")
        return out.tocsr()

    def nyquist_part(self, values, component, has_v=True):
        """Apply ``nyquist_projector(component)`` to a (..., N_y[, n_v]) field."""
        values = np.asarray(values)
        tail = 1 if has_v else 0
        lead = values.shape[: values.ndim - 1 - tail]
        vshape = values.shape[values.ndim - tail :]
        grid = values.reshape(lead + (self.n,) * self.dim + vshape)
        axis = len(lead) + component
        alt = ((-1.0) ** np.arange(self.n)).reshape([-1 if a == axis else 1 for a in range(grid.ndim)])
        amp = np.mean(grid * alt, axis=axis, keepdims=True)
        return (amp * alt).reshape(values.shape)

    def mean(self, values, axis=-1):
        return np.mean(values, axis=axis)

    def resample(self, values, n_target, has_v=True):
        """Trigonometric interpolation of a cell field onto n_target points per dim."""
        values = np.asarray(values)
        if n_target == self.n:
            return values.copy()
        tail = 1 if has_v else 0
        lead = values.shape[: values.ndim - 1 - tail]
        vshape = values.shape[values.ndim - tail :]
        grid = values.reshape(lead + (self.n,) * self.dim + vshape)
        for i in range(self.dim):
            grid = _resample_axis(grid, len(lead) + i, n_target)
        if np.isrealobj(values):
            grid = grid.real
        return grid.reshape(lead + (n_target**self.dim,) + vshape)


def _resample_axis(values, axis, n_target):
    n = values.shape[axis]
    spec = np.moveaxis(np.fft.fft(values, axis=axis), axis, 0)
    keep = min(n, n_target) // 2
    out = np.zeros((n_target,) + spec.shape[1:], dtype=complex)
    out[:keep] = spec[:keep]
    if keep > 1:
        out[-(keep - 1) :] = spec[-(keep - 1) :]
    out = np.fft.ifft(out, axis=0) * (n_target / n)
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True, eq=False)
class MacroGrid:
    """Periodic macroscopic torus [0, L)^d holding N heterogeneity cells per dim."""

    period: float
    points_per_dim: int
    cells_per_period: int
    dim: int = 1

    def __post_init__(self):
        n, cells = self.points_per_dim, self.cells_per_period
        if self.period <= 0:
            raise GridError("torus length must be positive")
        if cells <= 0 or cells % 2:
            raise GridError("cells_per_period must be even and positive")
        if n % 2 or n % cells:
            raise GridError("n_x must be even and a multiple of the cell count")

    @property
    def n(self):
        return self.points_per_dim

    @property
    def alpha(self):
        return self.period / self.cells_per_period

    @property
    def spacing(self):
        return self.period / self.points_per_dim

    @property
    def points_per_cell(self):
        return self.points_per_dim // self.cells_per_period

    @property
    def size(self):
        return self.points_per_dim**self.dim

    @cached_property
    def points(self):
        axes = [np.arange(self.n) * self.spacing] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def cell_index(self):
        """Flat cell-grid index (points_per_cell per dim) of y = x/alpha mod 1."""
        m = self.points_per_cell
        idx = np.indices((self.n,) * self.dim).reshape(self.dim, -1) % m
        return np.ravel_multi_index(tuple(idx), (m,) * self.dim)

    @cached_property
    def x_flip(self):
        idx = np.indices((self.n,) * self.dim).reshape(self.dim, -1)
        return np.ravel_multi_index(tuple((-idx) % self.n), (self.n,) * self.dim)

    def wavenumbers(self):
        """Angular wavenumber vectors, shape (N_x, d), FFT ordering."""
        k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)
        mesh = np.meshgrid(*([k] * self.dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def grad(self, values):
        """Spectral gradient along the leading flattened x axis; returns (d, ...)."""
        values = np.asarray(values)
        rest = values.shape[1:]
        grid = values.reshape((self.n,) * self.dim + rest)
        comps = [spectral_diff(grid, i, self.n, self.period).reshape(values.shape) for i in range(self.dim)]
        return np.stack(comps)

    def l2_norm(self, values, weights=None):
        """Discrete L2 norm over x (and v when ``weights`` is given)."""
        values = np.asarray(values)
        sq = np.abs(values) ** 2
        if weights is not None:
            sq = sq @ weights
        return float(np.sqrt(np.sum(sq) * self.spacing**self.dim))


def parity_maps(vg: VelocityGrid, cg: CellGrid):
    return {"v_flip": vg.v_flip.copy(), "y_flip": cg.y_flip.copy()}
