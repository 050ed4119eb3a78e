"""The cell operator T^eta = eta v.grad_y + Q on Y x V and its adjoint.

Fields on Y x V are arrays shaped (..., N_y, n_v); flattening is row-major so
the unknown (y_j, v_k) sits at ``j * n_v + k``.  The inner product carries
the weight ``w_k / N_y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .collision import CollisionBank
from .errors import CompatibilityViolation, KernelNotSimple, NonPositive
from .kernel import ScatteringKernel
from .linalg import BorderedSystem, fit_slope

DENSE_SIMPLICITY_LIMIT = 4096
DEFAULT_ETAS = (0.2, 0.1, 0.05, 0.025)


def streaming_matrix(bank: CollisionBank, nyquist=True):
    """Discrete v.grad_y on the flattened (y, v) index.

    The real antisymmetric spectral derivative maps the Nyquist mode to zero,
    which would leave a spurious second kernel vector whenever psi does not
    depend on y.  That mode instead receives the dissipative symbol
    |v_i| * pi * n_y, a symmetric term commuting with both parity flips.
    """
    cg = bank.kernel.cgrid
    out = None
    for i in range(cg.dim):
        term = sp.kron(cg.diff_matrix(i), sp.diags(bank.nodes[:, i]), format="csr")
        out = term if out is None else out + term
    return out + nyquist_damping(bank) if nyquist else out


def nyquist_damping(bank: CollisionBank):
    cg = bank.kernel.cgrid
    out = None
    for i in range(cg.dim):
        term = cg.nyquist_symbol * sp.kron(cg.nyquist_projector(i),
                                           sp.diags(np.abs(bank.nodes[:, i])), format="csr")
        out = term if out is None else out + term
    return out


def collision_block(bank: CollisionBank, adjoint=False):
    mats = bank.Qs if adjoint else bank.Q
    return sp.block_diag(list(mats), format="csr")


class CellTransportOperator:
    """T^eta and T^{eta*} with bordered pseudo-inverses and the equilibrium psi^eta."""

    def __init__(self, kernel_or_bank, eta, tol_compat=1e-11, check_simple=True):
        if eta <= 0:
            raise ValueError("eta must be positive")
        bank = kernel_or_bank
        if isinstance(kernel_or_bank, ScatteringKernel):
            bank = CollisionBank(kernel_or_bank, tol_compat)
        self.bank = bank
        self.kernel = bank.kernel
        self.eta = float(eta)
        self.tol_compat = tol_compat
        cg, vg = self.kernel.cgrid, self.kernel.vgrid
        self.shape = (cg.size, vg.size)
        self.size = cg.size * vg.size
        self.weights = np.tile(vg.weights, cg.size) / cg.size
        stream = streaming_matrix(bank, nyquist=False)
        damp = nyquist_damping(bank)
        self.matrix = (self.eta * (stream + damp) + collision_block(bank)).tocsc()
        self.matrix_star = (self.eta * (damp - stream) + collision_block(bank, adjoint=True)).tocsc()
        psi_star = np.tile(bank.psi_star, cg.size)
        self._psi_star_flat = psi_star
        self._system = BorderedSystem(
            self.matrix, self.weights * psi_star, psi_star / (self.weights @ psi_star**2),
            tol_compat=tol_compat, moment_name="int int g psi* dnu dy",
            norm_weights=self.weights, preconditioner=self._block_preconditioner(False))
        self.simplicity = self._check_simple() if check_simple else None
        vec, lam = self._system.null_vector()
        self.psi_eta = vec.reshape(self.shape)
        if abs(lam) > 1e-8:
            raise KernelNotSimple(f"bordered null solve left a multiplier {lam:.3e}")
        if self.psi_eta.min() <= 0:
            raise NonPositive("psi^eta changes sign")
        pe = vec
        self._system_star = BorderedSystem(
            self.matrix_star, self.weights * pe, pe / (self.weights @ pe**2),
            tol_compat=tol_compat, moment_name="int int g psi^eta dnu dy",
            norm_weights=self.weights, preconditioner=self._block_preconditioner(True))

    def _block_preconditioner(self, adjoint):
        mats = self.bank.Qs if adjoint else self.bank.Q
        shift = 1e-3 * np.abs(mats).max()
        inv = np.linalg.inv(mats + shift * np.eye(mats.shape[1])[None])
        shape = self.shape

        def apply(x):
            return np.einsum("jkl,jl->jk", inv, x.reshape(shape)).ravel()

        return apply

    def _check_simple(self):
        if self.size > DENSE_SIMPLICITY_LIMIT:
            return None
        s = sla.svdvals(self.matrix.toarray())
        scale = s[0]
        if s[-2] < 1e-8 * scale:
            raise KernelNotSimple(f"ker T^eta is not simple: second smallest singular value "
                                  f"{s[-2]:.3e} (scale {scale:.3e})")
        return {"smallest": float(s[-1]), "second": float(s[-2]), "largest": float(scale)}

    # -- actions ---------------------------------------------------------
    def _flat(self, f):
        f = np.asarray(f)
        return f.reshape(f.shape[:-2] + (self.size,))

    def _batch(self, f):
        """(..., N_y, n_v) -> (size, m) column matrix plus the leading shape."""
        f = np.asarray(f)
        lead = f.shape[:-2]
        return f.reshape((-1, self.size)).T, lead

    def apply(self, f, adjoint=False):
        mat = self.matrix_star if adjoint else self.matrix
        cols, lead = self._batch(f)
        return (mat @ cols).T.reshape(lead + self.shape)

    def inner(self, f, g):
        return np.sum(self._flat(f) * self._flat(g) * self.weights, axis=-1)

    def norm(self, f):
        return np.sqrt(np.sum(np.abs(self._flat(f)) ** 2 * self.weights, axis=-1))

    def moment(self, g, adjoint=False):
        ref = self.psi_eta if adjoint else self.bank.psi_star[None, :]
        return np.sum(np.asarray(g) * ref * self.weights.reshape(self.shape), axis=(-2, -1))

    def pinv(self, g, check=True):
        """T^{eta,-1} g with gauge int int R psi* = 0."""
        cols, lead = self._batch(g)
        sol = self._system.solve(cols, check=check)
        return sol.T.reshape(lead + self.shape)

    def pinv_star(self, g, check=True):
        """(T^{eta*})^{-1} g with gauge int int R psi^eta = 0."""
        cols, lead = self._batch(g)
        sol = self._system_star.solve(cols, check=check)
        return sol.T.reshape(lead + self.shape)

    def velocity_sources(self, base):
        """v_i * base for each direction i, shape (d, N_y, n_v)."""
        nodes = self.bank.nodes
        return np.stack([nodes[:, i][None, :] * base for i in range(nodes.shape[1])])

    def no_drift_moment(self):
        """int int v psi^eta psi* dnu dy, one entry per direction."""
        return self.moment(self.velocity_sources(self.psi_eta))


def solve_psi_eta(kernel, eta, **kwargs):
    return CellTransportOperator(kernel, eta, **kwargs).psi_eta


def teta_pinv(kernel, eta, g, op=None):
    op = op or CellTransportOperator(kernel, eta)
    return op.pinv(g)


def solve_chi_eta(kernel, eta, op=None):
    """chi^eta = T^{eta,-1}(v psi^eta), one component per direction."""
    op = op or CellTransportOperator(kernel, eta)
    src = op.velocity_sources(op.psi_eta)
    drift = op.moment(src)
    scale = max(1.0, float(np.max(op.norm(src))))
    if np.any(np.abs(drift) > op.tol_compat * scale):
        raise CompatibilityViolation(
            f"no-drift condition fails: int int v psi^eta psi* dnu dy = {drift}",
            moment="int int v psi^eta psi* dnu dy", defect=float(np.abs(drift).max()))
    return op.pinv(src)


def solve_chi_eta_star(kernel, eta, op=None):
    """chi^{eta*} = (T^{eta*})^{-1}(v psi*), gauge int int chi^{eta*} psi^eta = 0."""
    op = op or CellTransportOperator(kernel, eta)
    base = np.broadcast_to(op.bank.psi_star, op.shape)
    src = op.velocity_sources(base)
    drift = op.moment(src, adjoint=True)
    scale = max(1.0, float(np.max(op.norm(src))))
    if np.any(np.abs(drift) > op.tol_compat * scale):
        raise CompatibilityViolation(
            f"no-drift condition fails: int int v psi* psi^eta dnu dy = {drift}",
            moment="int int v psi^eta psi* dnu dy", defect=float(np.abs(drift).max()))
    return op.pinv_star(src)


@dataclass
class EstimateProbe:
    etas: list
    norms: list
    slope: float
    constants: list
    family: str

    def as_dict(self):
        return {"family": self.family, "etas": list(self.etas), "norms": list(self.norms),
                "slope": self.slope, "constants": list(self.constants)}


def smooth_random_field(shape, cgrid, rng, modes=3):
    """Band-limited random field on Y x V (few Fourier modes per direction)."""
    n_y, n_v = shape
    pts = cgrid.points
    out = rng.standard_normal((1, n_v))
    for m in range(1, modes + 1):
        for i in range(cgrid.dim):
            a = rng.standard_normal((1, n_v))
            b = rng.standard_normal((1, n_v))
            out = out + (a * np.cos(2 * np.pi * m * pts[:, i : i + 1])
                         + b * np.sin(2 * np.pi * m * pts[:, i : i + 1])) / m
    return out


def compatible_rhs(op, base, per_y=False):
    """Project ``base`` onto the range of T^eta (globally, or per y when per_y)."""
    ps = op.bank.psi_star
    w = op.kernel.vgrid.weights
    if per_y:
        return base - np.sum(base * ps * w, axis=-1, keepdims=True) * ps
    return base - op.moment(base)[..., None, None] * ps


def probe_estimates(kernel, g_family="global", eta_sequence=DEFAULT_ETAS, seed=0, g=None,
                    tol_compat=1e-11):
    """Fit the growth exponent of ||T^{eta,-1} g|| as eta decreases.

    ``g_family`` is ``global`` (only int int g psi* = 0), ``per_y``
    (int g psi* dnu = 0 at every y) or ``chi`` (g = v psi^eta, reported
    through eta * ||chi^eta||).
    """
    rng = np.random.default_rng(seed)
    bank = CollisionBank(kernel, tol_compat)
    base = g if g is not None else smooth_random_field((kernel.n_y, kernel.n_v), kernel.cgrid, rng)
    norms = []
    for eta in eta_sequence:
        op = CellTransportOperator(bank, eta, tol_compat, check_simple=False)
        if g_family == "chi":
            chi = solve_chi_eta(kernel, eta, op)
            norms.append(float(np.sqrt(np.sum(op.norm(chi) ** 2))))
        else:
            rhs = compatible_rhs(op, base, per_y=(g_family == "per_y"))
            norms.append(float(op.norm(op.pinv(rhs))))
    fit = fit_slope(eta_sequence, norms)
    power = {"global": 2, "per_y": 1, "chi": 1}[g_family]
    constants = [n * e**power for n, e in zip(norms, eta_sequence)]
    return EstimateProbe(list(eta_sequence), norms, fit.slope, constants, g_family)
