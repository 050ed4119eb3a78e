"""Direct solver for v.grad f + eps f + Q(x/alpha) f / eps = eps S_alpha on a torus.

The discretisation is Fourier spectral in x on the macro-torus with the
collision operator applied pointwise at y = x/alpha mod 1.  Because the
medium is exactly periodic with N cells per torus length, the discrete
operator block-diagonalises under the Bloch transform

    f(p m + r) = sum_q exp(2 pi i q (p m + r) / n_x) u_q(r),

one complex cell problem per Bloch index q.  The blocks reproduce the
torus spectral derivative exactly, including the assignment of the cell
Nyquist mode to the global wavenumber q -+ N m / 2.  A matrix-free GMRES
solve of the same torus operator is kept as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cell_transport import CellTransportOperator
from .collision import CollisionBank, q_matrices
from .errors import ConfigError, IterativeSolverStall, ResolutionError
from .grids import CellGrid, MacroGrid
from .macro import SourceSpec

MIN_POINTS_PER_CELL = 16


@dataclass
class TransportProblem:
    epsilon: float
    eta: float
    kernel: object
    mgrid: MacroGrid
    source: SourceSpec
    min_points_per_cell: int = MIN_POINTS_PER_CELL

    def __post_init__(self):
        self.source = SourceSpec.from_config(self.source)
        if self.epsilon <= 0 or self.eta <= 0:
            raise ConfigError("epsilon and eta must be positive")
        alpha = self.epsilon / self.eta
        if not (self.epsilon < alpha < 1.0):
            raise ConfigError(f"need epsilon < alpha < 1, got epsilon={self.epsilon}, alpha={alpha}")
        if abs(self.mgrid.alpha - alpha) > 1e-12 * alpha:
            raise ConfigError(f"torus holds cells of size {self.mgrid.alpha}, but epsilon/eta = {alpha}")
        if self.mgrid.points_per_cell < self.min_points_per_cell:
            raise ResolutionError(f"{self.mgrid.points_per_cell} points per cell is below the minimum "
                                  f"{self.min_points_per_cell}")

    @property
    def alpha(self):
        return self.epsilon / self.eta

    @classmethod
    def build(cls, kernel, epsilon, eta, source=None, period=1.0, points_per_cell=None,
              min_points_per_cell=MIN_POINTS_PER_CELL):
        """Commensurate torus: N = period * eta / epsilon cells, m points per cell."""
        cells = period * eta / epsilon
        n_cells = int(round(cells))
        if abs(cells - n_cells) > 1e-9 * cells or n_cells < 2:
            raise ConfigError(f"period / alpha = {cells} is not an integer cell count")
        m = points_per_cell or kernel.cgrid.n
        mgrid = MacroGrid(period, n_cells * m, n_cells, kernel.cgrid.dim)
        return cls(epsilon, eta, kernel, mgrid, SourceSpec.from_config(source), min_points_per_cell)

    def cell_kernel(self):
        m = self.mgrid.points_per_cell
        k = self.kernel
        return k if k.cgrid.n == m else k.on_grid(CellGrid(m, k.cgrid.dim))

    def source_field(self):
        return self.source.composite(self.mgrid, self.kernel.vgrid)


@dataclass
class TransportSolution:
    f: np.ndarray  # (N_x, n_v)
    problem: TransportProblem
    method: str
    residual: float
    blocks: int = 0
    info: dict = field(default_factory=dict)

    def density(self, psi_star=None):
        """Velocity average int f dnu (or against psi* when given)."""
        w = self.problem.kernel.vgrid.weights
        ref = 1.0 if psi_star is None else psi_star
        return (self.f * ref) @ w


# -- Bloch machinery ---------------------------------------------------------

def _split_shape(mgrid):
    n_cells, m, d = mgrid.cells_per_period, mgrid.points_per_cell, mgrid.dim
    shape = []
    for _ in range(d):
        shape += [n_cells, m]
    return tuple(shape)


def bloch_transform(values, mgrid: MacroGrid):
    """u[q, r, ...] with f = sum_q exp(i K_q x) u_q(r); q in FFT order per dim."""
    values = np.asarray(values)
    d = mgrid.dim
    rest = values.shape[1:]
    grid = values.reshape(_split_shape(mgrid) + rest)
    p_axes = tuple(2 * a for a in range(d))
    spec = np.fft.fft(grid, axis=p_axes[0]) if d == 1 else np.fft.fftn(grid, axes=p_axes)
    spec = spec / mgrid.cells_per_period**d
    # move q axes first, then r axes
    order = list(p_axes) + [2 * a + 1 for a in range(d)] + list(range(2 * d, 2 * d + len(rest)))
    spec = np.transpose(spec, order)
    n_cells, m = mgrid.cells_per_period, mgrid.points_per_cell
    q = np.fft.fftfreq(n_cells, d=1.0 / n_cells)
    r = np.arange(m)
    phase = 1.0
    for a in range(d):
        shp = [1] * (2 * d)
        shp[a] = n_cells
        qa = q.reshape(shp)
        shp = [1] * (2 * d)
        shp[d + a] = m
        ra = r.reshape(shp)
        phase = phase * np.exp(-2j * np.pi * qa * ra / (n_cells * m))
    spec = spec * phase.reshape(phase.shape + (1,) * len(rest))
    return spec.reshape((n_cells**d, m**d) + rest)


def inverse_bloch(blocks, mgrid: MacroGrid):
    """Inverse of :func:`bloch_transform`; ``blocks`` shaped (N^d, m^d, ...)."""
    d = mgrid.dim
    n_cells, m = mgrid.cells_per_period, mgrid.points_per_cell
    rest = blocks.shape[2:]
    spec = blocks.reshape((n_cells,) * d + (m,) * d + rest)
    q = np.fft.fftfreq(n_cells, d=1.0 / n_cells)
    r = np.arange(m)
    phase = 1.0
    for a in range(d):
        shp = [1] * (2 * d)
        shp[a] = n_cells
        qa = q.reshape(shp)
        shp = [1] * (2 * d)
        shp[d + a] = m
        phase = phase * np.exp(2j * np.pi * qa * r.reshape(shp) / (n_cells * m))
    spec = spec * phase.reshape(phase.shape + (1,) * len(rest))
    q_axes = tuple(range(d))
    vals = np.fft.ifft(spec, axis=0) if d == 1 else np.fft.ifftn(spec, axes=q_axes)
    vals = vals * n_cells**d
    # interleave back to (p_0, r_0, p_1, r_1, ...)
    order = []
    for a in range(d):
        order += [a, d + a]
    order += list(range(2 * d, 2 * d + len(rest)))
    vals = np.transpose(vals, order)
    return vals.reshape((mgrid.size,) + rest)


def _bloch_indices(mgrid):
    n_cells = mgrid.cells_per_period
    q = np.fft.fftfreq(n_cells, d=1.0 / n_cells).astype(int)
    mesh = np.meshgrid(*([q] * mgrid.dim), indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


class BlochSolver:
    """Factorised cell blocks of the torus transport operator."""

    def __init__(self, problem: TransportProblem):
        self.problem = problem
        self.kernel = problem.cell_kernel()
        self.bank = CollisionBank(self.kernel)
        mg = problem.mgrid
        self.cgrid = self.kernel.cgrid
        self.qs = _bloch_indices(mg)
        nodes = self.kernel.vgrid.nodes
        cg = self.cgrid
        eps, alpha = problem.epsilon, problem.alpha
        n = cg.size * self.kernel.n_v
        self._base = (sp.block_diag(list(self.bank.Q), format="csr") / eps
                      + eps * sp.identity(n, format="csr"))
        self._stream = [sp.kron(cg.diff_matrix(a), sp.diags(nodes[:, a]), format="csr") / alpha
                        for a in range(cg.dim)]
        self._nyq = [sp.kron(cg.nyquist_projector(a), sp.diags(nodes[:, a]), format="csr")
                     for a in range(cg.dim)]
        self._vdiag = [sp.kron(sp.identity(cg.size), sp.diags(nodes[:, a]), format="csr")
                       for a in range(cg.dim)]
        self._factors = {}

    def block_matrix(self, q):
        """Cell operator for Bloch index q (integer vector)."""
        mg, m = self.problem.mgrid, self.cgrid.n
        mat = self._base.astype(complex)
        for a, qa in enumerate(q):
            kappa = 2 * np.pi * qa / mg.period
            # cell Nyquist belongs to K = q - N m/2 (q > 0) or q + N m/2 (q < 0); K = -n_x/2 is zeroed
            nyq = 0.0 if qa == 0 else -np.sign(qa) * np.pi * m / self.problem.alpha
            mat = mat + self._stream[a] + 1j * kappa * self._vdiag[a] + 1j * nyq * self._nyq[a]
        return mat.tocsc()

    def solve_block(self, q, rhs):
        key = tuple(int(x) for x in q)
        if key not in self._factors:
            self._factors[key] = (spla.splu(self.block_matrix(q)), self.block_matrix(q))
        lu, mat = self._factors[key]
        sol = lu.solve(rhs.astype(complex))
        res = np.linalg.norm(mat @ sol - rhs) / max(np.linalg.norm(rhs), 1e-300)
        return sol, res

    def solve(self, source_values, skip_tol=1e-14):
        """Solve for a right-hand side given on the torus, shape (N_x, n_v)."""
        mg = self.problem.mgrid
        blocks = bloch_transform(source_values, mg)
        scale = np.abs(blocks).max() if blocks.size else 0.0
        out = np.zeros_like(blocks, dtype=complex)
        worst, count = 0.0, 0
        for i, q in enumerate(self.qs):
            rhs = blocks[i].ravel()
            if scale == 0.0 or np.abs(rhs).max() <= skip_tol * scale:
                continue
            sol, res = self.solve_block(q, rhs)
            out[i] = sol.reshape(blocks[i].shape)
            worst = max(worst, res)
            count += 1
        f = inverse_bloch(out, mg)
        return f.real, worst, count, float(np.abs(f.imag).max()) if f.size else 0.0


def torus_operator(problem: TransportProblem, kernel=None):
    """Matrix-free torus operator f -> v.grad f + eps f + Q_alpha f / eps and its block preconditioner."""
    kernel = kernel or problem.cell_kernel()
    mg = problem.mgrid
    nodes = kernel.vgrid.nodes
    n_v = kernel.n_v
    qx = q_matrices(kernel)[mg.cell_index]  # (N_x, n_v, n_v)
    eps = problem.epsilon
    shape = (mg.size, n_v)

    def matvec(x):
        f = x.reshape(shape)
        grad = mg.grad(f)
        out = np.einsum("va,axv->xv", nodes, grad) + eps * f + np.einsum("xkl,xl->xk", qx, f) / eps
        return out.ravel()

    blocks = np.linalg.inv(eps * np.eye(n_v)[None] + qx / eps)

    def precond(x):
        return np.einsum("xkl,xl->xk", blocks, x.reshape(shape)).ravel()

    n = mg.size * n_v
    return (spla.LinearOperator((n, n), matvec=matvec, dtype=float),
            spla.LinearOperator((n, n), matvec=precond, dtype=float))


def solve_transport(problem: TransportProblem, method="bloch", rtol=1e-11, maxiter=2000) -> TransportSolution:
    """Solve the heterogeneous transport equation; ``method`` is ``bloch`` or ``gmres``."""
    rhs = problem.epsilon * problem.source_field()
    if method == "bloch":
        solver = BlochSolver(problem)
        f, res, count, imag = solver.solve(rhs)
        return TransportSolution(f, problem, "bloch", res, count, {"imag_residue": imag})
    if method == "gmres":
        op, pre = torus_operator(problem)
        b = rhs.ravel()
        if not np.any(b):
            return TransportSolution(np.zeros_like(rhs), problem, "gmres", 0.0)
        x, info = spla.gmres(op, b, M=pre, rtol=rtol, atol=0.0, restart=200, maxiter=maxiter)
        res = float(np.linalg.norm(op @ x - b) / np.linalg.norm(b))
        if info != 0 and res > 1e-9:
            raise IterativeSolverStall(f"GMRES stalled at relative residual {res:.3e}",
                                       residual=res, solution=x.reshape(rhs.shape))
        return TransportSolution(x.reshape(rhs.shape), problem, "gmres", res, 0, {"info": int(info)})
    raise ValueError(f"unknown method {method!r}")


def torus_residual(solution: TransportSolution):
    """||A f - eps S_alpha|| / ||eps S_alpha|| with the matrix-free torus operator."""
    p = solution.problem
    op, _ = torus_operator(p)
    rhs = p.epsilon * p.source_field()
    r = op @ solution.f.ravel() - rhs.ravel()
    return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), 1e-300))


def refine(problem: TransportProblem, factor=2):
    """Same physical problem with ``factor`` times more points per cell."""
    m = problem.mgrid.points_per_cell * factor
    mg = MacroGrid(problem.mgrid.period, problem.mgrid.cells_per_period * m,
                   problem.mgrid.cells_per_period, problem.mgrid.dim)
    kernel = problem.kernel
    kernel = kernel.on_grid(CellGrid(m, kernel.cgrid.dim))
    return TransportProblem(problem.epsilon, problem.eta, kernel, mg, problem.source,
                            problem.min_points_per_cell)


def restrict(values, fine: MacroGrid, coarse: MacroGrid):
    """Sample a fine-grid field at the coarse grid points (n_x ratio must be an integer)."""
    ratio = fine.n // coarse.n
    d = fine.dim
    grid = np.asarray(values).reshape((fine.n,) * d + values.shape[1:])
    sl = tuple(slice(None, None, ratio) for _ in range(d))
    return grid[sl].reshape((coarse.size,) + values.shape[1:])


def resolution_floor(solution: TransportSolution, factor=2):
    """L2(x, v) difference between the solution and its re-solve at ``factor`` x resolution."""
    p = solution.problem
    fine = solve_transport(refine(p, factor))
    diff = solution.f - restrict(fine.f, fine.problem.mgrid, p.mgrid)
    return p.mgrid.l2_norm(diff, p.kernel.vgrid.weights), fine


# -- a priori estimate -------------------------------------------------------

def composite_cell_field(cell_values, mgrid: MacroGrid):
    """Evaluate a (N_y, n_v) cell field at y = x / alpha mod 1 on the torus."""
    return np.asarray(cell_values)[..., mgrid.cell_index, :]


def dissipation_functional(h, sigma_x, psi_eta_x, psi_star, weights, epsilon, spacing):
    """(1/eps) int sigma psi^eta(v') psi*(v) |h(v) - h(v')|^2 / 2 dx dnu dnu'."""
    diff2 = (h[:, None, :] - h[:, :, None]) ** 2  # [x, v', v]
    integrand = sigma_x * psi_eta_x[:, :, None] * psi_star[None, None, :] * diff2 / 2
    total = np.einsum("xik,i,k->", integrand, weights, weights)
    return float(total * spacing / epsilon)


def apriori_check(problem: TransportProblem, f, n_random=20, seed=0, psi_eta=None):
    """Both sides of the a priori estimate and the dissipation functional checks."""
    kernel = problem.cell_kernel()
    mg = problem.mgrid
    vg = kernel.vgrid
    w = vg.weights
    eps = problem.epsilon
    if psi_eta is None:
        psi_eta = CellTransportOperator(kernel, problem.eta, check_simple=False).psi_eta
    pe = composite_cell_field(psi_eta, mg)
    ps = kernel.psi_star
    S = problem.source_field()
    u = f / pe
    ubar = u @ w
    lhs_f = mg.l2_norm(f, w)
    lhs_defect = mg.l2_norm(f - pe * ubar[:, None], w) / eps
    rhs_src = mg.l2_norm(eps * S, w)
    rhs_avg = mg.l2_norm((S * ps) @ w)
    lhs, rhs = lhs_f + lhs_defect, rhs_src + rhs_avg
    sig = kernel.sigma[mg.cell_index]
    h = mg.spacing**mg.dim
    s = u - ubar[:, None]
    q_u = dissipation_functional(u, sig, pe, ps, w, eps, h)
    q_s = dissipation_functional(s, sig, pe, ps, w, eps, h)
    s_norm2 = mg.l2_norm(s, w) ** 2
    rng = np.random.default_rng(seed)
    randoms = [dissipation_functional(rng.standard_normal(u.shape), sig, pe, ps, w, eps, h)
               for _ in range(n_random)]
    const = dissipation_functional(np.broadcast_to(rng.standard_normal((mg.size, 1)), u.shape),
                                   sig, pe, ps, w, eps, h)
    conservation = float(np.abs(np.einsum("xkl,xl,k,k->x", q_matrices(kernel)[mg.cell_index], f, ps, w)).max())
    return {
        "epsilon": eps, "eta": problem.eta, "alpha": problem.alpha,
        "lhs": lhs, "rhs": rhs, "ratio": lhs / rhs,
        "lhs_norm": lhs_f, "lhs_defect": lhs_defect, "rhs_source": rhs_src, "rhs_average": rhs_avg,
        "Q_u": q_u, "Q_s": q_s, "Q_u_minus_Q_s": q_u - q_s,
        "coercivity": eps * q_s / s_norm2 if s_norm2 > 0 else float("nan"),
        "Q_random_min": float(min(randoms)) if randoms else float("nan"),
        "Q_constant": const,
        "conservation_defect": conservation,
    }
