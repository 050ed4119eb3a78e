"""Scattering kernel sigma(y, v', v), derived total cross-section and psi*.

Kernels are described by a small spec language so that configurations are
portable::

    {"family": "isotropic", "scale": 1.0}
    {"family": "separable", "amplitude": [1.0, 0.5], "beta": 0.4,
     "modulation": [0.0, 1.0], "g": [0.0, 1.0], "h": [1.0, -0.6], "drift": 0.0}
    {"family": "tabulated", "sigma": [...]}          # shape (N_y, n_v, n_v)

The separable family is

    sigma(y, v', v) = A(y) * (1 + beta * C(y) * g(v) * h(v') + drift * v_1)

where ``A`` and ``C`` are cosine (optionally sine) series in y and ``g``, ``h``
are even polynomials in |v| (``h`` defaults to ``g``).  With ``h != g`` the
kernel is not symmetric in (v', v), so psi differs from psi* and depends on y.  A nonzero ``drift`` or a sine series breaks the
parity symmetries on purpose and must be allowed explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import KernelError
from .grids import CellGrid, VelocityGrid

SYMMETRY_TOL = 1e-12


def cell_profile(spec, points):
    """Evaluate a y-profile spec at cell points of shape (N, d).

    A list is read as cosine coefficients ``a0 + sum_k a_k cos(2 pi k y)``;
    a dict may carry ``cos`` and ``sin`` lists.  In d > 1 each harmonic is
    averaged over the coordinate directions.
    """
    if spec is None:
        return np.ones(points.shape[0])
    if np.isscalar(spec):
        return np.full(points.shape[0], float(spec))
    if isinstance(spec, dict):
        cos = list(spec.get("cos", [1.0]))
        sin = list(spec.get("sin", []))
    else:
        cos, sin = list(spec), []
    d = points.shape[1]
    out = np.full(points.shape[0], float(cos[0]) if cos else 0.0)
    for k, a in enumerate(cos[1:], start=1):
        out += a * np.cos(2 * np.pi * k * points).sum(axis=1) / d
    for k, b in enumerate(sin, start=1):
        out += b * np.sin(2 * np.pi * k * points).sum(axis=1) / d
    return out


def velocity_profile(spec, nodes):
    """Evaluate a v-profile: list = even polynomial coefficients in |v|^2.

    Dicts may give ``{"poly": [...]}``, ``{"odd": c}`` (adds c * v_1) or
    ``{"values": [...]}`` tabulated on the nodes.
    """
    speed2 = np.sum(nodes**2, axis=1)
    if spec is None:
        return np.ones(nodes.shape[0])
    if np.isscalar(spec):
        return np.full(nodes.shape[0], float(spec))
    if isinstance(spec, dict):
        if "values" in spec:
            vals = np.asarray(spec["values"], dtype=float)
            if vals.shape != (nodes.shape[0],):
                raise KernelError("tabulated velocity profile has the wrong length")
            return vals
        out = velocity_profile(spec.get("poly", [1.0]), nodes)
        return out + float(spec.get("odd", 0.0)) * nodes[:, 0]
    coeffs = list(spec)
    return sum(c * speed2**p for p, c in enumerate(coeffs))


@dataclass(frozen=True, eq=False)
class ScatteringKernel:
    sigma: np.ndarray  # (N_y, n_v, n_v), sigma[y, i, k] = sigma(y, v'_i, v_k)
    sigma_total: np.ndarray  # (N_y, n_v)
    psi_star: np.ndarray  # (n_v,)
    vgrid: VelocityGrid
    cgrid: CellGrid
    sigma_spec: dict = field(default_factory=dict)
    psi_star_spec: object = None
    symmetric: bool = True

    @property
    def n_v(self):
        return self.vgrid.size

    @property
    def n_y(self):
        return self.cgrid.size

    def on_grid(self, cgrid: CellGrid) -> "ScatteringKernel":
        """Rebuild the same kernel on another cell grid."""
        spec = dict(self.sigma_spec)
        if spec.get("family") == "tabulated":
            tab = self.cgrid.resample(self.sigma.reshape(self.n_y, -1), cgrid.n, has_v=True)
            spec["sigma"] = tab.reshape(cgrid.size, self.n_v, self.n_v)
        return build_kernel(spec, self.psi_star_spec, self.vgrid, cgrid)

    def scaled(self, factor) -> "ScatteringKernel":
        spec = dict(self.sigma_spec)
        spec["overall"] = float(spec.get("overall", 1.0)) * factor
        return build_kernel(spec, self.psi_star_spec, self.vgrid, self.cgrid)

    def to_npz(self, path):
        np.savez(path, sigma=self.sigma, sigma_total=self.sigma_total, psi_star=self.psi_star,
                 nodes=self.vgrid.nodes, weights=self.vgrid.weights, y=self.cgrid.points)

    def to_csv(self, path):
        """Long-format dump: y index, v' index, v index, sigma, Sigma(y, v)."""
        n_y, n_v = self.n_y, self.n_v
        j, i, k = np.meshgrid(np.arange(n_y), np.arange(n_v), np.arange(n_v), indexing="ij")
        rows = np.column_stack([j.ravel(), i.ravel(), k.ravel(), self.sigma.ravel(),
                                self.sigma_total[j.ravel(), k.ravel()]])
        np.savetxt(path, rows, delimiter=",", header="y_index,vp_index,v_index,sigma,Sigma",
                   comments="", fmt=["%d", "%d", "%d", "%.17g", "%.17g"])


def _tabulate_sigma(spec, vg: VelocityGrid, cg: CellGrid):
    family = spec.get("family", "isotropic")
    n_y, n_v = cg.size, vg.size
    overall = float(spec.get("overall", 1.0))
    if family == "isotropic":
        sig = np.full((n_y, n_v, n_v), float(spec.get("scale", 1.0)))
    elif family == "separable":
        amp = cell_profile(spec.get("amplitude", [1.0]), cg.points)
        mod = cell_profile(spec.get("modulation", [0.0, 1.0]), cg.points)
        g = velocity_profile(spec.get("g", [0.0, 1.0]), vg.nodes)
        h = velocity_profile(spec["h"], vg.nodes) if "h" in spec else g
        beta = float(spec.get("beta", 0.0))
        drift = float(spec.get("drift", 0.0))
        outer = np.multiply.outer(h, g)  # [i, k] -> h(v'_i) g(v_k)
        sig = amp[:, None, None] * (1.0 + beta * mod[:, None, None] * outer[None]
                                    + drift * vg.nodes[None, None, :, 0])
    elif family == "tabulated":
        sig = np.asarray(spec["sigma"], dtype=float)
        if sig.shape != (n_y, n_v, n_v):
            raise KernelError(f"tabulated sigma has shape {sig.shape}, expected {(n_y, n_v, n_v)}")
        sig = sig.copy()
    else:
        raise KernelError(f"unknown kernel family {family!r}")
    return overall * sig


def parity_average(sig, vflip, yflip):
    a = sig[:, vflip][:, :, vflip]
    b = sig[yflip]
    c = b[:, vflip][:, :, vflip]
    return 0.25 * (sig + a + b + c)


def build_kernel(sigma_spec, psi_star_spec, vgrid: VelocityGrid, cgrid: CellGrid,
                 allow_asymmetry=None) -> ScatteringKernel:
    """Tabulate sigma, normalise psi* and derive Sigma so that Q* psi* = 0."""
    sigma_spec = dict(sigma_spec or {"family": "isotropic"})
    if allow_asymmetry is None:
        allow_asymmetry = bool(sigma_spec.get("allow_asymmetry", False))
    raw = _tabulate_sigma(sigma_spec, vgrid, cgrid)
    if not np.all(np.isfinite(raw)) or raw.min() <= 0:
        raise KernelError(f"sigma must be bounded below by a positive constant (min {raw.min():.3e})")
    vflip, yflip = vgrid.v_flip, cgrid.y_flip
    sym = parity_average(raw, vflip, yflip)
    defect = np.abs(raw - sym).max() / np.abs(raw).max()
    if allow_asymmetry:
        sig = raw
        symmetric = defect <= SYMMETRY_TOL
    else:
        if defect > SYMMETRY_TOL:
            raise KernelError(f"sigma violates the parity symmetries (defect {defect:.3e})")
        sig = sym
        symmetric = True

    psi_star = velocity_profile(psi_star_spec, vgrid.nodes)
    psi_star = 0.5 * (psi_star + psi_star[vflip])
    if psi_star.min() <= 0:
        raise KernelError("psi* must be positive")
    psi_star = psi_star / np.sqrt(vgrid.weights @ psi_star**2)

    w = vgrid.weights
    # Sigma(y, v_k) = sum_i sigma(y, v_k, v_i) w_i psi*_i / psi*_k
    sigma_total = np.einsum("jki,i->jk", sig, w * psi_star) / psi_star[None, :]
    return ScatteringKernel(sig, sigma_total, psi_star, vgrid, cgrid, sigma_spec,
                            psi_star_spec, symmetric)


def qstar_psi_star_residual(k: ScatteringKernel):
    w = k.vgrid.weights
    res = k.sigma_total * k.psi_star[None, :] - np.einsum("jki,i->jk", k.sigma, w * k.psi_star)
    return float(np.abs(res).max())


def check_assumptions(k: ScatteringKernel, tol=1e-12):
    """Residual report for positivity, parity identities and Q* psi* = 0."""
    vf, yf = k.vgrid.v_flip, k.cgrid.y_flip
    sig, big = k.sigma, k.sigma_total
    scale = np.abs(sig).max()
    residuals = {
        "sigma_min": float(sig.min()),
        "sigma_max": float(sig.max()),
        "sigma_v_parity": float(np.abs(sig - sig[:, vf][:, :, vf]).max() / scale),
        "sigma_y_parity": float(np.abs(sig - sig[yf]).max() / scale),
        "Sigma_v_parity": float(np.abs(big - big[:, vf]).max() / scale),
        "Sigma_y_parity": float(np.abs(big - big[yf]).max() / scale),
        "psi_star_min": float(k.psi_star.min()),
        "psi_star_evenness": float(np.abs(k.psi_star - k.psi_star[vf]).max()),
        "psi_star_norm": float(abs(k.vgrid.weights @ k.psi_star**2 - 1.0)),
        "qstar_psi_star": qstar_psi_star_residual(k),
    }
    checks = {
        "positivity": residuals["sigma_min"] > 0 and residuals["psi_star_min"] > 0,
        "sigma_v_parity": residuals["sigma_v_parity"] <= tol,
        "sigma_y_parity": residuals["sigma_y_parity"] <= tol,
        "Sigma_v_parity": residuals["Sigma_v_parity"] <= tol,
        "Sigma_y_parity": residuals["Sigma_y_parity"] <= tol,
        "psi_star_even": residuals["psi_star_evenness"] <= tol,
        "psi_star_norm": residuals["psi_star_norm"] <= tol,
        "qstar_psi_star": residuals["qstar_psi_star"] <= 1e-13 * max(1.0, scale),
    }
    return {"passed": all(checks.values()), "checks": checks, "residuals": residuals}
