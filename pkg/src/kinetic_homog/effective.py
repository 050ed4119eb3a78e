"""Effective cell operators L, L*, the density rho0 and the Hilbert expansions.

L is realised compositionally from the discrete cell operators,

    L rho = - int psi* v.D Q^{-1}(v.D(psi rho)) dnu,

with D the spectral y-derivative, and L* is its transpose.  Because the
expansion terms use exactly the same discrete building blocks as T^eta,
the algebraic identities of the expansion hold to roundoff on the grid.
The divergence form -div(D(y) grad rho) + div(U(y) rho) is tabulated as
well and serves as an independent cross-check.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .collision import CollisionBank, no_drift_check
from .errors import EllipticityFailure, KernelNotSimple, NonPositive, RangeViolation
from .kernel import ScatteringKernel
from .linalg import BorderedSystem

BUNDLE_VERSION = 1


class EffectiveOperator:
    """Discrete L and L* on the cell grid, with rho0 and bordered pseudo-inverses."""

    def __init__(self, kernel_or_bank, tol_compat=1e-11):
        bank = kernel_or_bank
        if isinstance(bank, ScatteringKernel):
            bank = CollisionBank(bank, tol_compat)
        self.bank = bank
        self.kernel = bank.kernel
        self.cgrid = self.kernel.cgrid
        self.vgrid = self.kernel.vgrid
        self.tol_compat = tol_compat
        self.dim = self.cgrid.dim
        self.psi = bank.psi
        self.psi_star = bank.psi_star
        self.no_drift = no_drift_check(bank, max(tol_compat, 1e-12))
        self.D_field, self.U_field = self._coefficients()
        sym = 0.5 * (self.D_field + np.swapaxes(self.D_field, -1, -2))
        self.ellipticity = float(np.linalg.eigvalsh(sym).min())
        if self.ellipticity <= 0:
            raise EllipticityFailure(f"sym D(y) is not positive definite (min eigenvalue {self.ellipticity:.3e})")
        self.matrix = self._assemble()
        self.matrix_star = self.matrix.T.copy()
        n = self.cgrid.size
        mean = np.full(n, 1.0 / n)
        self._system = BorderedSystem(self.matrix, mean, np.ones(n), tol_compat=tol_compat,
                                      moment_name="int f dy", error_cls=RangeViolation,
                                      norm_weights=mean)
        rho0, lam = self._system.null_vector()
        if abs(lam) > 1e-8:
            raise KernelNotSimple(f"ker L is not one-dimensional (multiplier {lam:.3e})")
        if rho0.min() <= 0:
            raise NonPositive("rho0 changes sign")
        self.rho0 = rho0
        self._system_star = BorderedSystem(self.matrix_star, mean, np.ones(n), rho0 / n,
                                           tol_compat=tol_compat, moment_name="int f rho0 dy",
                                           error_cls=RangeViolation, norm_weights=mean)

    # -- discrete building blocks ------------------------------------------
    def stream(self, f):
        """v.D_y f for fields shaped (..., N_y, n_v)."""
        nodes = self.vgrid.nodes
        return sum(nodes[:, i] * self.cgrid.diff(f, i) for i in range(self.dim))

    def vmul(self, f, i):
        return self.vgrid.nodes[:, i] * f

    def vint(self, f, ref=None):
        """int f ref dnu along the last axis (ref defaults to psi*)."""
        ref = self.psi_star if ref is None else ref
        return np.sum(f * ref * self.vgrid.weights, axis=-1)

    def q_pinv(self, g, check=True):
        return self.bank.q_pinv(g, check)

    def qstar_pinv(self, g, check=True):
        return self.bank.qstar_pinv(g, check)

    def _coefficients(self):
        psi = self.psi
        d = self.dim
        # D_ab(y) = int psi* v_a Q^{-1}(v_b psi) dnu
        sol = self.q_pinv(np.stack([self.vmul(psi, b) for b in range(d)]))
        D = np.stack([np.stack([self.vint(self.vmul(sol[b], a)) for b in range(d)], axis=-1)
                      for a in range(d)], axis=-2)
        # U_a(y) = - int psi* v_a Q^{-1}(v.grad psi) dnu
        flux = self.q_pinv(self.stream(psi))
        U = -np.stack([self.vint(self.vmul(flux, a)) for a in range(d)], axis=-1)
        return D, U

    def _nyquist_closure(self):
        cg = self.cgrid
        out = 0.0
        for i in range(self.dim):
            c = cg.nyquist_symbol**2 * float(np.mean(self.D_field[:, i, i]))
            out = out + c * cg.nyquist_projector(i).toarray()
        return out

    def _assemble(self):
        n = self.cgrid.size
        eye = np.eye(n)
        cols = -self.vint(self.stream(self.q_pinv(self.stream(eye[:, :, None] * self.psi[None]))))
        # cols[k] = L e_k, so the matrix is its transpose
        return cols.T + self._nyquist_closure()

    def divergence_form_matrix(self):
        """-div(D grad .) + div(U .) assembled with the spectral derivative."""
        cg, n = self.cgrid, self.cgrid.size
        eye = np.eye(n)
        out = np.zeros((n, n))
        for a in range(self.dim):
            flux = sum(self.D_field[:, a, b][:, None] * cg.diff(eye, b, has_v=False).T
                       for b in range(self.dim))
            flux = flux - self.U_field[:, a][:, None] * eye
            out -= cg.diff(flux.T, a, has_v=False).T
        return out + self._nyquist_closure()

    # -- actions ---------------------------------------------------------
    def apply(self, rho, adjoint=False):
        mat = self.matrix_star if adjoint else self.matrix
        return np.asarray(rho) @ mat.T

    def apply_star_formula(self, n):
        """L* n = - int psi v.D Q*^{-1}(v.D(psi* n)) dnu (without the Nyquist closure)."""
        n = np.asarray(n)
        field_ = n[..., None] * self.psi_star
        return -self.vint(self.stream(self.qstar_pinv(self.stream(field_))), self.psi)

    def _solve(self, system, f):
        f = np.asarray(f, dtype=float)
        lead = f.shape[:-1]
        cols = f.reshape(-1, f.shape[-1]).T
        return system.solve(cols).T.reshape(lead + (f.shape[-1],))

    def l_pinv(self, f):
        """L^{-1} f with gauge int u dy = 0; requires int f dy = 0."""
        return self._solve(self._system, f)

    def lstar_pinv(self, f):
        """L*^{-1} f with gauge int u dy = 0; requires int f rho0 dy = 0."""
        return self._solve(self._system_star, f)


def assemble_effective(kernel, tol_compat=1e-11) -> EffectiveOperator:
    return EffectiveOperator(kernel, tol_compat)


def solve_rho0(eff: EffectiveOperator):
    return eff.rho0


def l_pinv(eff: EffectiveOperator, f):
    return eff.l_pinv(f)


def lstar_pinv(eff: EffectiveOperator, f):
    return eff.lstar_pinv(f)


# -- Hilbert expansions ------------------------------------------------------

def expand_psi(eff: EffectiveOperator):
    """psi^eta = psi0 + eta psi1 + eta^2 psi2 + O(eta^3)."""
    psi0 = eff.rho0[:, None] * eff.psi
    psi1 = eff.q_pinv(-eff.stream(psi0))
    t = eff.q_pinv(-eff.stream(psi1))
    rho2 = eff.l_pinv(-eff.vint(eff.stream(eff.q_pinv(-eff.stream(t)))))
    psi2 = t + rho2[:, None] * eff.psi
    return {"psi0": psi0, "psi1": psi1, "psi2": psi2, "rho2": rho2}


def expand_chi(eff: EffectiveOperator, psi_terms):
    """chi^eta = chi_m1 / eta + chi0 + O(eta), one component per direction."""
    psi0, psi1, psi2 = psi_terms["psi0"], psi_terms["psi1"], psi_terms["psi2"]
    d = eff.dim
    src = np.stack([eff.vint(eff.vmul(psi1, a)) - eff.vint(eff.stream(eff.q_pinv(eff.vmul(psi0, a))))
                    for a in range(d)])
    theta_m1 = eff.l_pinv(src)
    chi_m1 = theta_m1[..., None] * eff.psi
    chi0_bar = np.stack([eff.q_pinv(eff.vmul(psi0, a) - eff.stream(chi_m1[a])) for a in range(d)])
    src0 = np.stack([eff.vint(eff.vmul(psi2, a))
                     - eff.vint(eff.stream(eff.q_pinv(eff.vmul(psi1, a) - eff.stream(chi0_bar[a]))))
                     for a in range(d)])
    theta0 = eff.l_pinv(src0)
    chi0 = chi0_bar + theta0[..., None] * eff.psi
    return {"theta_m1": theta_m1, "chi_m1": chi_m1, "chi0": chi0, "theta0": theta0}


def expand_chi_star(eff: EffectiveOperator):
    """chi^{eta*} = chi_s_m1 / eta + chi_s0 + eta chi_s1 + O(eta^2)."""
    d = eff.dim
    ps = np.broadcast_to(eff.psi_star, eff.psi.shape)
    vps = np.stack([eff.vmul(ps, a) for a in range(d)])

    def lstar_rhs(g):
        return eff.vint(eff.stream(eff.qstar_pinv(g)), eff.psi)

    theta_s_m1 = eff.lstar_pinv(lstar_rhs(vps))
    chi_s0_bar = eff.qstar_pinv(vps + eff.stream(theta_s_m1[..., None] * ps))
    theta_s_0 = eff.lstar_pinv(lstar_rhs(eff.stream(chi_s0_bar)))
    chi_s0 = chi_s0_bar + theta_s_0[..., None] * ps
    chi_s1_bar = eff.qstar_pinv(eff.stream(chi_s0))
    theta_s_1 = eff.lstar_pinv(lstar_rhs(eff.stream(chi_s1_bar)))
    chi_s1 = chi_s1_bar + theta_s_1[..., None] * ps
    return {"theta_s_m1": theta_s_m1, "chi_s_m1": theta_s_m1[..., None] * ps,
            "chi_s0_bar": chi_s0_bar, "theta_s_0": theta_s_0, "chi_s0": chi_s0,
            "theta_s_1": theta_s_1, "chi_s1": chi_s1}


def cell_integral(a, b, weights):
    """int int a b dnu dy for fields shaped (..., N_y, n_v) (mean over y)."""
    return np.sum(a * b * weights, axis=(-2, -1)) / a.shape[-2]


def vector_tensor(chi_s, vfield, vg):
    """T_ab = int int chi_s[a] v_b field dnu dy."""
    d = vg.dim
    return np.array([[cell_integral(chi_s[a], vg.nodes[:, b] * vfield, vg.weights)
                      for b in range(d)] for a in range(d)])


@dataclass
class ExpansionBundle:
    rho0: np.ndarray
    rho2: np.ndarray
    theta_m1: np.ndarray
    theta0: np.ndarray
    theta_s_m1: np.ndarray
    theta_s_0: np.ndarray
    theta_s_1: np.ndarray
    psi: np.ndarray
    psi0: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    chi_m1: np.ndarray
    chi0: np.ndarray
    chi_s_m1: np.ndarray
    chi_s0_bar: np.ndarray
    chi_s0: np.ndarray
    chi_s1: np.ndarray
    D_field: np.ndarray
    U_field: np.ndarray
    Dtensor: np.ndarray
    D1tensor: np.ndarray
    Dtensor_direct: np.ndarray
    metadata: dict = field(default_factory=dict)

    ARRAYS = ("rho0", "rho2", "theta_m1", "theta0", "theta_s_m1", "theta_s_0", "theta_s_1",
              "psi", "psi0", "psi1", "psi2", "chi_m1", "chi0", "chi_s_m1", "chi_s0_bar",
              "chi_s0", "chi_s1", "D_field", "U_field", "Dtensor", "D1tensor",
              "Dtensor_direct")

    def arrays(self):
        return {name: getattr(self, name) for name in self.ARRAYS}

    def digest(self):
        h = hashlib.sha256()
        for name in self.ARRAYS:
            h.update(name.encode())
            h.update(np.ascontiguousarray(getattr(self, name)).tobytes())
        return h.hexdigest()

    def save(self, directory):
        """Write ``bundle.json`` (metadata, tensors) and ``bundle.npz`` (all arrays)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.savez(directory / "bundle.npz", **self.arrays())
        meta = {"version": BUNDLE_VERSION, "digest": self.digest(),
                "Dtensor": self.Dtensor.tolist(), "D1tensor": self.D1tensor.tolist(),
                "metadata": self.metadata}
        (directory / "bundle.json").write_text(json.dumps(meta, indent=2, default=_jsonable))
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        meta = json.loads((directory / "bundle.json").read_text())
        if meta.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported bundle version {meta.get('version')}")
        with np.load(directory / "bundle.npz") as data:
            arrays = {name: data[name] for name in cls.ARRAYS}
        bundle = cls(**arrays, metadata=meta.get("metadata", {}))
        if bundle.digest() != meta["digest"]:
            raise ValueError("bundle arrays do not match the recorded digest")
        return bundle


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return str(obj)


def effective_tensors(bundle: ExpansionBundle, vgrid):
    """(D, D1) from the expansion of the cell densities."""
    chi_sm1, chi_s0, chi_s1 = bundle.chi_s_m1, bundle.chi_s0, bundle.chi_s1
    D = vector_tensor(chi_s0, bundle.psi0, vgrid) + vector_tensor(chi_sm1, bundle.psi1, vgrid)
    D1 = (vector_tensor(chi_sm1, bundle.psi2, vgrid) + vector_tensor(chi_s0, bundle.psi1, vgrid)
          + vector_tensor(chi_s1, bundle.psi0, vgrid))
    return D, D1


def direct_tensor(eff: EffectiveOperator, chi_s0_bar, theta_s_m1):
    """D = int int [chi_s0_bar (x) v rho0 psi + theta*_{-1} psi* (x) v Q^{-1}(-v.D(rho0 psi))]."""
    psi0 = eff.rho0[:, None] * eff.psi
    corr = eff.q_pinv(-eff.stream(psi0))
    ps = np.broadcast_to(eff.psi_star, eff.psi.shape)
    return (vector_tensor(chi_s0_bar, psi0, eff.vgrid)
            + vector_tensor(theta_s_m1[..., None] * ps, corr, eff.vgrid))


def build_bundle(kernel, tol_compat=1e-11, eff=None, metadata=None) -> ExpansionBundle:
    eff = eff or EffectiveOperator(kernel, tol_compat)
    pe = expand_psi(eff)
    ce = expand_chi(eff, pe)
    cs = expand_chi_star(eff)
    bundle = ExpansionBundle(
        rho0=eff.rho0, rho2=pe["rho2"], theta_m1=ce["theta_m1"], theta0=ce["theta0"],
        theta_s_m1=cs["theta_s_m1"], theta_s_0=cs["theta_s_0"], theta_s_1=cs["theta_s_1"],
        psi=eff.psi, psi0=pe["psi0"], psi1=pe["psi1"], psi2=pe["psi2"],
        chi_m1=ce["chi_m1"], chi0=ce["chi0"], chi_s_m1=cs["chi_s_m1"],
        chi_s0_bar=cs["chi_s0_bar"], chi_s0=cs["chi_s0"], chi_s1=cs["chi_s1"],
        D_field=eff.D_field, U_field=eff.U_field,
        Dtensor=np.zeros((eff.dim, eff.dim)), D1tensor=np.zeros((eff.dim, eff.dim)),
        Dtensor_direct=direct_tensor(eff, cs["chi_s0_bar"], cs["theta_s_m1"]),
        metadata=dict(metadata or {}))
    bundle.Dtensor, bundle.D1tensor = effective_tensors(bundle, eff.vgrid)
    bundle.metadata.setdefault("kernel", kernel_summary(eff.kernel))
    bundle.metadata["theta0_max"] = float(np.abs(ce["theta0"]).max())
    bundle.metadata["theta_s_0_max"] = float(np.abs(cs["theta_s_0"]).max())
    bundle.metadata["ellipticity"] = eff.ellipticity
    return bundle


def kernel_summary(k: ScatteringKernel):
    return {"sigma": _plain(k.sigma_spec), "psi_star": _plain(k.psi_star_spec),
            "n_v": k.n_v, "n_y": k.cgrid.n, "d": k.cgrid.dim,
            "velocity": _plain(k.vgrid.spec)}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def d_eta(chi_eta_star, psi_eta, vgrid):
    """D^eta = int int chi^{eta*} (x) v psi^eta."""
    return vector_tensor(chi_eta_star, psi_eta, vgrid)


def d_eta_alt(chi_eta, vgrid, psi_star):
    """D^eta_ab = int int psi* v_a chi^eta_b, the transposed route."""
    d = vgrid.dim
    ps = np.broadcast_to(psi_star, chi_eta.shape[-2:])
    return np.array([[cell_integral(ps, vgrid.nodes[:, a] * chi_eta[b], vgrid.weights)
                      for b in range(d)] for a in range(d)])
