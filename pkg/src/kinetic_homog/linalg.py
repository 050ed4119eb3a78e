"""Bordered (Fredholm) solves, constrained least-squares oracles and slope fits."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CompatibilityViolation, IterativeSolverStall, SingularSystem

DIRECT_LIMIT = 20_000


class BorderedSystem:
    """Pseudo-inverse of an operator with a one-dimensional kernel.

    Solves ``A u + lam * c = g`` together with the gauge ``r @ u = 0``.
    With ``z`` spanning the left kernel of ``A`` and ``z @ c = 1`` the
    multiplier equals the compatibility defect ``lam = z @ g``; a defect
    below tolerance is thereby projected out, above it the solve raises.

    ``r`` and ``z`` already carry the quadrature weights, so ``r @ u`` is the
    gauge integral and ``z @ g`` the solvability moment.
    """

    def __init__(self, matrix, gauge, column, moment=None, *, tol_compat=1e-11,
                 moment_name="solvability moment", norm_weights=None,
                 error_cls=CompatibilityViolation, preconditioner=None):
        self.n = matrix.shape[0]
        self.matrix = matrix
        self.gauge = np.asarray(gauge)
        self.column = np.asarray(column)
        self.moment = self.gauge if moment is None else np.asarray(moment)
        self.tol_compat = tol_compat
        self.moment_name = moment_name
        self.norm_weights = norm_weights
        self.error_cls = error_cls
        self.preconditioner = preconditioner
        self.sparse = sp.issparse(matrix)
        self.iterative = self.sparse and self.n + 1 > DIRECT_LIMIT
        self.last_residual = None
        self._factor()

    def _bordered(self):
        if self.sparse:
            return sp.bmat(
                [[self.matrix, sp.csc_matrix(self.column.reshape(-1, 1))],
                 [sp.csr_matrix(self.gauge.reshape(1, -1)), None]],
                format="csc",
            )
        out = np.zeros((self.n + 1, self.n + 1), dtype=np.result_type(self.matrix, float))
        out[: self.n, : self.n] = self.matrix
        out[: self.n, self.n] = self.column
        out[self.n, : self.n] = self.gauge
        return out

    def _factor(self):
        full = self._bordered()
        self.full = full
        if self.iterative:
            self._lu = None
            return
        try:
            if self.sparse:
                self._lu = spla.splu(full)
            else:
                with warnings.catch_warnings():
                    warnings.simplefilter("error", sla.LinAlgWarning)
                    self._lu = sla.lu_factor(full, check_finite=True)
        except (RuntimeError, ValueError, sla.LinAlgWarning) as exc:
            raise SingularSystem(f"bordered system is singular: {exc}") from exc
        if not self.sparse:
            diag = np.abs(np.diag(self._lu[0]))
            if diag.min() <= 1e-14 * diag.max():
                raise SingularSystem("bordered system is numerically rank deficient")

    def _solve_raw(self, rhs):
        if self.iterative:
            return self._solve_iterative(rhs)
        if self.sparse:
            out = self._lu.solve(rhs)
        else:
            out = sla.lu_solve(self._lu, rhs)
        if not np.all(np.isfinite(out)):
            raise SingularSystem("non-finite solution from bordered solve")
        return out

    def _solve_iterative(self, rhs, rtol=1e-12, maxiter=400):
        cols = rhs.reshape(self.n + 1, -1)
        out = np.empty_like(cols, dtype=np.result_type(cols, self.full.dtype))
        precond = None
        if self.preconditioner is not None:
            inner = self.preconditioner

            def apply(x):
                y = np.array(x, dtype=out.dtype)
                y[: self.n] = inner(x[: self.n])
                return y

            precond = spla.LinearOperator(self.full.shape, matvec=apply, dtype=out.dtype)
        for i in range(cols.shape[1]):
            b = cols[:, i]
            x, info = spla.gmres(self.full, b, M=precond, rtol=rtol, atol=0.0,
                                 restart=200, maxiter=maxiter)
            res = np.linalg.norm(self.full @ x - b) / max(np.linalg.norm(b), 1e-300)
            self.last_residual = res
            if info != 0 and res > 1e-8:
                raise IterativeSolverStall(
                    f"GMRES stalled with relative residual {res:.3e}", residual=res, solution=x)
            out[:, i] = x
        return out.reshape(rhs.shape)

    def weighted_norm(self, g):
        g = np.asarray(g)
        if self.norm_weights is None:
            return np.sqrt(np.sum(np.abs(g) ** 2, axis=0))
        return np.sqrt(np.tensordot(self.norm_weights, np.abs(g) ** 2, axes=([0], [0])))

    def check(self, g):
        """Return the solvability defect of each column of g; raise above tolerance."""
        g = np.asarray(g)
        defect = self.moment @ g
        scale = np.maximum(self.weighted_norm(g), 1.0)
        bad = np.abs(defect) > self.tol_compat * scale
        if np.any(bad):
            worst = float(np.max(np.abs(defect)))
            raise self.error_cls(
                f"compatibility violated: {self.moment_name} = {worst:.3e} "
                f"(tolerance {self.tol_compat:.1e})",
                moment=self.moment_name, defect=worst)
        return defect

    def solve(self, g, check=True):
        """Pseudo-inverse applied to the columns of g (shape (n,) or (n, m))."""
        g = np.asarray(g)
        if check:
            self.check(g)
        squeeze = g.ndim == 1
        cols = g.reshape(self.n, -1)
        rhs = np.vstack([cols, np.zeros((1, cols.shape[1]), dtype=cols.dtype)])
        sol = self._solve_raw(rhs)
        u = sol[: self.n]
        return u[:, 0] if squeeze else u

    def null_vector(self):
        """Kernel element normalised by ``gauge @ u = 1``."""
        rhs = np.zeros(self.n + 1, dtype=self.full.dtype)
        rhs[self.n] = 1.0
        sol = self._solve_raw(rhs)
        return sol[: self.n], sol[self.n]


def constrained_lstsq(matrix, rhs, gauge):
    """Dense oracle: least-squares solution of ``[A; gauge] u = [g; 0]``."""
    a = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    stacked = np.vstack([a, np.asarray(gauge).reshape(1, -1)])
    b = np.concatenate([np.asarray(rhs), [0.0]])
    sol, *_ = np.linalg.lstsq(stacked, b, rcond=None)
    return sol


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float
    npoints: int

    def as_dict(self):
        return dict(slope=self.slope, intercept=self.intercept, stderr=self.stderr,
                    ci=[self.ci_low, self.ci_high], npoints=self.npoints)


def fit_slope(x, y) -> SlopeFit:
    """Least-squares slope of log(y) against log(x) with a 95% interval."""
    from scipy import stats

    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.size < 2:
        raise ValueError("need at least two points for a slope")
    res = stats.linregress(lx, ly)
    if lx.size > 2:
        t = stats.t.ppf(0.975, lx.size - 2)
        half = t * res.stderr
    else:
        half = float("nan")
    return SlopeFit(float(res.slope), float(res.intercept), float(res.stderr),
                    float(res.slope - half), float(res.slope + half), int(lx.size))
