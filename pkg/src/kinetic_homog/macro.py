"""Macroscopic diffusion solves, the epsilon-expansion terms and the limit densities.

Macroscopic fields live on a periodic torus and are indexed along their
leading axis by the flattened macro grid.  Phase-space terms of the
epsilon-expansion are arrays shaped (N_x, N_y, n_v).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell_transport import CellTransportOperator, solve_chi_eta, solve_chi_eta_star
from .effective import cell_integral, d_eta
from .errors import ConfigError, IndefiniteTensor
from .grids import CellGrid, MacroGrid, VelocityGrid
from .kernel import cell_profile, velocity_profile


def _x_profile(spec, points, period):
    """Fourier series in x: ``{"cos": [a0, a1, ...], "sin": [b1, ...]}`` in units of 2 pi / L."""
    if isinstance(spec, (list, tuple)):
        spec = {"cos": list(spec)}
    return cell_profile(spec, np.asarray(points) / period)


def _x_wavenumber(spec):
    if isinstance(spec, (list, tuple)):
        return max(len(spec) - 1, 0)
    if np.isscalar(spec) or spec is None:
        return 0
    return max(len(spec.get("cos", [0.0])) - 1, len(spec.get("sin", [])))


@dataclass
class SourceSpec:
    """S(x, y, v) = sum_m a_m(x) b_m(y) c_m(v) with band-limited a_m.

    Each term is a dict with keys ``x`` (Fourier coefficients on the torus),
    ``y`` (cell profile, see :func:`kernel.cell_profile`) and ``v`` (velocity
    profile, see :func:`kernel.velocity_profile`).
    """

    terms: list

    @classmethod
    def from_config(cls, cfg):
        if cfg is None:
            return cls([{"x": {"cos": [0.0, 1.0]}}])
        if isinstance(cfg, SourceSpec):
            return cfg
        terms = cfg.get("terms", [cfg]) if isinstance(cfg, dict) else list(cfg)
        if not terms:
            raise ConfigError("source needs at least one term")
        return cls([dict(t) for t in terms])

    def max_wavenumber(self):
        return max(_x_wavenumber(t.get("x", [1.0])) for t in self.terms)

    def check_band_limit(self, mgrid: MacroGrid):
        if self.max_wavenumber() >= mgrid.n // 2:
            raise ConfigError(f"source wavenumber {self.max_wavenumber()} is not resolved by n_x = {mgrid.n}")

    def x_values(self, mgrid: MacroGrid):
        """(M, N_x) table of the macroscopic profiles a_m."""
        self.check_band_limit(mgrid)
        return np.stack([_x_profile(t.get("x", [1.0]), mgrid.points, mgrid.period) for t in self.terms])

    def cell_values(self, cgrid: CellGrid, vgrid: VelocityGrid):
        """(M, N_y, n_v) table of b_m(y) c_m(v)."""
        return np.stack([cell_profile(t.get("y"), cgrid.points)[:, None]
                         * velocity_profile(t.get("v"), vgrid.nodes)[None, :] for t in self.terms])

    def field(self, mgrid, cgrid, vgrid):
        """S(x, y, v) on the product grid, shape (N_x, N_y, n_v)."""
        return np.einsum("mx,myv->xyv", self.x_values(mgrid), self.cell_values(cgrid, vgrid))

    def composite(self, mgrid: MacroGrid, vgrid: VelocityGrid):
        """S_alpha(x, v) = S(x, x / alpha mod 1, v), shape (N_x, n_v)."""
        a = self.x_values(mgrid)
        y = (mgrid.points / mgrid.alpha) % 1.0
        out = np.zeros((mgrid.size, vgrid.size))
        for m, t in enumerate(self.terms):
            out += (a[m] * cell_profile(t.get("y"), y))[:, None] * velocity_profile(t.get("v"), vgrid.nodes)
        return out

    def averaged(self, mgrid, cgrid, vgrid, psi_star):
        """int int S psi* dnu dy as a macroscopic field."""
        w = vgrid.weights
        coeff = np.array([cell_integral(c, np.broadcast_to(psi_star, c.shape), w)
                          for c in self.cell_values(cgrid, vgrid)])
        return coeff @ self.x_values(mgrid)


def check_tensor(tensor):
    tensor = np.atleast_2d(np.asarray(tensor, dtype=float))
    sym = 0.5 * (tensor + tensor.T)
    lam = np.linalg.eigvalsh(sym).min()
    if lam <= 0:
        raise IndefiniteTensor(f"diffusion tensor is not positive definite (min eigenvalue {lam:.3e})")
    return tensor


def solve_macro_diffusion(tensor, source, mgrid: MacroGrid):
    """Solve n - div(D grad n) = source on the torus by Fourier inversion."""
    tensor = check_tensor(tensor)
    source = np.asarray(source)
    k = mgrid.wavenumbers()
    symbol = 1.0 + np.einsum("xa,ab,xb->x", k, tensor, k)
    grid_shape = (mgrid.n,) * mgrid.dim
    rest = source.shape[1:]
    axes = tuple(range(mgrid.dim))
    spec = np.fft.fftn(source.reshape(grid_shape + rest), axes=axes)
    spec = spec / symbol.reshape(grid_shape + (1,) * len(rest))
    out = np.fft.ifftn(spec, axes=axes).reshape(source.shape)
    return out.real if np.isrealobj(source) else out


def divergence(mgrid: MacroGrid, vec):
    """sum_a d/dx_a of a (d, N_x, ...) field."""
    return sum(mgrid.grad(vec[a])[a] for a in range(mgrid.dim))


def hessian(mgrid: MacroGrid, n):
    g = mgrid.grad(n)
    return np.stack([mgrid.grad(g[b]) for b in range(mgrid.dim)], axis=1)  # [a, b] = d_a d_b n


def div_tensor_grad(mgrid, tensor, n):
    h = hessian(mgrid, n)
    return np.einsum("ab,ab...->...", np.atleast_2d(tensor), h)


@dataclass
class EpsilonExpansion:
    eta: float
    f0: np.ndarray
    f1: np.ndarray
    f2bar: np.ndarray
    f2: np.ndarray
    f3: np.ndarray
    n0: np.ndarray
    n1: np.ndarray
    D_eta: np.ndarray
    psi_eta: np.ndarray
    chi: np.ndarray
    chi_star: np.ndarray


def _contract(chi, grad):
    """sum_b chi_b(y, v) grad_b(x) -> (N_x, N_y, n_v)."""
    return np.einsum("byv,bx->xyv", chi, grad)


def epsilon_expansion_terms(kernel, eta, source, mgrid: MacroGrid, op=None) -> EpsilonExpansion:
    """The terms f^{k,eta}, k <= 3, and the densities n^{0,eta}, n^{1,eta}."""
    source = SourceSpec.from_config(source)
    op = op or CellTransportOperator(kernel, eta)
    vg, cg = kernel.vgrid, kernel.cgrid
    nodes = vg.nodes
    psi_eta = op.psi_eta
    chi = solve_chi_eta(kernel, eta, op)
    chi_star = solve_chi_eta_star(kernel, eta, op)
    D_eta = d_eta(chi_star, psi_eta, vg)
    S = source.field(mgrid, cg, vg)

    n0 = solve_macro_diffusion(D_eta, source.averaged(mgrid, cg, vg, kernel.psi_star), mgrid)
    f0 = n0[:, None, None] * psi_eta
    h0 = hessian(mgrid, n0)
    # v . grad_x (chi . grad n0) = sum_ab v_a chi_b d_a d_b n0
    stream_chi = np.einsum("va,byv,abx->xyv", nodes, chi, h0)
    f2bar = op.pinv(-f0 + S + stream_chi)
    flux = np.stack([cell_integral(f2bar, nodes[:, a] * np.broadcast_to(kernel.psi_star, op.shape), vg.weights)
                     for a in range(vg.dim)])
    n1 = solve_macro_diffusion(D_eta, -divergence(mgrid, flux), mgrid)
    f1 = -_contract(chi, mgrid.grad(n0)) + n1[:, None, None] * psi_eta
    f2 = -_contract(chi, mgrid.grad(n1)) + f2bar
    grad_f2 = mgrid.grad(f2)
    stream_f2 = np.einsum("va,axyv->xyv", nodes, grad_f2)
    f3 = op.pinv(-stream_f2 - f1)
    return EpsilonExpansion(eta, f0, f1, f2bar, f2, f3, n0, n1, D_eta, psi_eta, chi, chi_star)


@dataclass
class LimitDensities:
    n00: np.ndarray
    n01: np.ndarray
    n1m1: np.ndarray
    S1m1: np.ndarray
    source_average: np.ndarray


def limit_densities(bundle, source, mgrid: MacroGrid, cgrid: CellGrid, vgrid: VelocityGrid,
                    psi_star) -> LimitDensities:
    """n^{0,0}, n^{0,1}, n^{1,-1} and the source S^{1,-1} from the expansion bundle."""
    source = SourceSpec.from_config(source)
    w = vgrid.weights
    d = vgrid.dim
    nodes = vgrid.nodes
    sbar = source.averaged(mgrid, cgrid, vgrid, psi_star)
    n00 = solve_macro_diffusion(bundle.Dtensor, sbar, mgrid)
    n01 = solve_macro_diffusion(bundle.Dtensor, div_tensor_grad(mgrid, bundle.D1tensor, n00), mgrid)

    chi_sm1, chi_s0 = bundle.chi_s_m1, bundle.chi_s0
    cells = source.cell_values(cgrid, vgrid)
    a = source.x_values(mgrid)
    i1 = np.array([[cell_integral(c, chi_sm1[k], w) for k in range(d)] for c in cells])  # [m, a]
    i2 = np.array([cell_integral(bundle.psi0, chi_sm1[k], w) for k in range(d)])
    i34 = np.array([[[cell_integral(nodes[:, b] * bundle.chi0[c], chi_sm1[k], w)
                      + cell_integral(nodes[:, b] * bundle.chi_m1[c], chi_s0[k], w)
                      for c in range(d)] for b in range(d)] for k in range(d)])
    h = hessian(mgrid, n00)
    flux = (np.einsum("ma,mx->ax", i1, a) - i2[:, None] * n00[None, :]
            + np.einsum("abc,bcx->ax", i34, h))
    S1m1 = -divergence(mgrid, flux)
    n1m1 = solve_macro_diffusion(bundle.Dtensor, S1m1, mgrid)
    return LimitDensities(n00, n01, n1m1, S1m1, sbar)
