"""Per-cell-point collision operators Q(y), Q*(y), local equilibria and pseudo-inverses."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (CompatibilityViolation, KernelNotSimple, NonPositive, NonPositiveGap,
                     SingularSystem)
from .kernel import ScatteringKernel

SIMPLICITY_RATIO = 1e6


def q_matrices(k: ScatteringKernel):
    """Q[j] acting on nodal values: (Q f)_k = Sigma_k f_k - sum_i sigma(v'_i, v_k) w_i f_i."""
    w = k.vgrid.weights
    diag = np.einsum("jk,kl->jkl", k.sigma_total, np.eye(k.n_v))
    return diag - np.transpose(k.sigma, (0, 2, 1)) * w[None, None, :]


def qstar_matrices(k: ScatteringKernel):
    """Q*[j]: (Q* g)_k = Sigma_k g_k - sum_i sigma(v_k, v_i) w_i g_i."""
    w = k.vgrid.weights
    diag = np.einsum("jk,kl->jkl", k.sigma_total, np.eye(k.n_v))
    return diag - k.sigma * w[None, None, :]


@dataclass(frozen=True, eq=False)
class CollisionOperator:
    """Q(y_j) (or its adjoint) as an n_v x n_v matrix on nodal values."""

    y_index: int
    matrix: np.ndarray
    adjoint: bool = False

    def __call__(self, f):
        return self.matrix @ f


def solve_psi(k: ScatteringKernel):
    """Local equilibria psi(y, .) spanning ker Q(y), normalised by int psi psi* = 1.

    The kernel vector is the right singular vector of the smallest singular
    value; the gap to the next one is a quantitative simplicity check.
    """
    mats = q_matrices(k)
    w = k.vgrid.weights
    _, s, vh = np.linalg.svd(mats)
    ratio = s[:, -2] / np.maximum(s[:, -1], 1e-300)
    if np.any(ratio < SIMPLICITY_RATIO):
        j = int(np.argmin(ratio))
        raise KernelNotSimple(f"ker Q(y) is not one-dimensional at y index {j} "
                              f"(singular value ratio {ratio[j]:.2e})")
    vec = vh[:, -1, :]
    vec = vec * np.sign(vec.sum(axis=1))[:, None]
    vec = vec / (vec @ (w * k.psi_star))[:, None]
    if np.any(vec <= 0):
        raise NonPositive("local equilibrium psi changes sign")
    return vec


class CollisionBank:
    """All per-y collision operators with their bordered pseudo-inverses.

    ``q_pinv`` solves Q u = g with gauge int u psi* = 0, ``qstar_pinv`` solves
    Q* u = g with gauge int u psi = 0.  Both subtract compatibility defects
    below ``tol_compat`` and raise above it.
    """

    def __init__(self, kernel: ScatteringKernel, tol_compat=1e-11):
        self.kernel = kernel
        self.tol_compat = tol_compat
        self.weights = kernel.vgrid.weights
        self.nodes = kernel.vgrid.nodes
        self.psi_star = kernel.psi_star
        self.Q = q_matrices(kernel)
        self.Qs = qstar_matrices(kernel)
        self.psi = solve_psi(kernel)
        self._inv = self._bordered_inverse(self.Q, np.broadcast_to(self.psi_star, self.psi.shape),
                                           np.broadcast_to(self.psi_star, self.psi.shape))
        psi_norm2 = (self.psi**2) @ self.weights
        self._inv_s = self._bordered_inverse(self.Qs, self.psi, self.psi / psi_norm2[:, None])

    @property
    def n_y(self):
        return self.Q.shape[0]

    @property
    def n_v(self):
        return self.Q.shape[1]

    def operator(self, j, adjoint=False):
        return CollisionOperator(j, (self.Qs if adjoint else self.Q)[j], adjoint)

    def _bordered_inverse(self, mats, gauge_vec, column):
        n_y, n_v, _ = mats.shape
        full = np.zeros((n_y, n_v + 1, n_v + 1))
        full[:, :n_v, :n_v] = mats
        full[:, :n_v, n_v] = column
        full[:, n_v, :n_v] = gauge_vec * self.weights[None, :]
        cond = np.linalg.cond(full)
        if np.any(~np.isfinite(cond)) or cond.max() > 1e13:
            raise SingularSystem("per-y bordered collision system is rank deficient")
        return np.linalg.inv(full)

    # -- actions ---------------------------------------------------------
    def apply(self, f, adjoint=False):
        mats = self.Qs if adjoint else self.Q
        return np.einsum("jkl,...jl->...jk", mats, f)

    def moment(self, g, adjoint=False):
        """Per-y solvability moment: int g psi* (or int g psi for Q*)."""
        ref = self.psi if adjoint else self.psi_star[None, :]
        return np.sum(g * ref * self.weights, axis=-1)

    def _pinv(self, g, adjoint, check, moment_name):
        g = np.asarray(g, dtype=float)
        inv = self._inv_s if adjoint else self._inv
        n_v = self.n_v
        if check:
            defect = self.moment(g, adjoint)
            # roundoff scales with the whole field, not with its value at one y
            local = np.sqrt(np.sum(g**2 * self.weights, axis=-1))
            scale = np.maximum(local.max(axis=-1, keepdims=True), 1.0)
            if np.any(np.abs(defect) > self.tol_compat * scale):
                worst = float(np.abs(defect).max())
                raise CompatibilityViolation(
                    f"compatibility violated: {moment_name} = {worst:.3e} "
                    f"(tolerance {self.tol_compat:.1e})", moment=moment_name, defect=worst)
        return np.einsum("jkl,...jl->...jk", inv[:, :n_v, :n_v], g)

    def q_pinv(self, g, check=True):
        """Q^{-1} on a field shaped (..., N_y, n_v)."""
        return self._pinv(g, False, check, "int g psi* dnu")

    def qstar_pinv(self, g, check=True):
        return self._pinv(g, True, check, "int g psi dnu")

    @cached_property
    def pinv_matrices(self):
        return self._inv[:, : self.n_v, : self.n_v]

    @cached_property
    def pinv_star_matrices(self):
        return self._inv_s[:, : self.n_v, : self.n_v]


def no_drift_moment(bank: CollisionBank):
    """int v psi psi* dnu per y, shape (N_y, d)."""
    w = bank.weights
    return np.einsum("jk,k,ka->ja", bank.psi * bank.psi_star, w, bank.nodes)


def no_drift_check(bank: CollisionBank, tol=1e-12):
    """Raise CompatibilityViolation unless int v psi psi* dnu vanishes at every y."""
    m = no_drift_moment(bank)
    worst = float(np.abs(m).max())
    if worst > tol:
        raise CompatibilityViolation(
            f"no-drift condition fails: int v psi psi* dnu = {worst:.3e} (tolerance {tol:.1e})",
            moment="int v psi psi* dnu", defect=worst)
    return m


def q_pinv(k, y, g, tol_compat=1e-11, bank=None):
    """Q(y)^{-1} g for one cell index ``y`` and a velocity vector ``g``."""
    bank = bank or CollisionBank(k, tol_compat)
    full = np.zeros((bank.n_y, bank.n_v))
    full[y] = g
    return bank.q_pinv(full)[y]


def qstar_pinv(k, y, g, tol_compat=1e-11, bank=None):
    bank = bank or CollisionBank(k, tol_compat)
    full = np.zeros((bank.n_y, bank.n_v))
    full[y] = g
    return bank.qstar_pinv(full)[y]


def spectral_gap(k, y=None, adjoint=False):
    """min Re(lambda) over the nonzero eigenvalues of Q(y); all y when y is None."""
    mats = (qstar_matrices if adjoint else q_matrices)(k)
    if y is not None:
        mats = mats[y : y + 1]
    eig = np.linalg.eigvals(mats)
    order = np.argsort(np.abs(eig), axis=1)
    rest = np.take_along_axis(eig, order[:, 1:], axis=1)
    gaps = rest.real.min(axis=1)
    if np.any(gaps <= 0):
        raise NonPositiveGap(f"collision operator has a non-positive spectral gap ({gaps.min():.3e})")
    return float(gaps[0]) if y is not None else gaps


def gap_table(k):
    """Per-y gaps of Q and Q* for CSV dumps."""
    return np.column_stack([np.arange(k.n_y), spectral_gap(k), spectral_gap(k, adjoint=True)])
