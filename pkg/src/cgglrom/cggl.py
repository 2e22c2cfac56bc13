"""Trial spaces mixing local finite elements with global modes; assembly and solves.

Generalized coordinates are ordered ``(alpha, beta)``: the ``N_l`` free local
nodal values followed by the ``k`` global-mode coefficients.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, InvalidArgumentError, NearDependenceError, SolverError
from .fem import lagrange_1d
from .mesh import LocalMeshView, PatchGrid, assemble_local_view
from .problem import ProblemDef, as_parameter, poisson_problem
from .quadrature import PatchQuadrature, patch_quadrature, tabulate_modes

log = logging.getLogger(__name__)

NEWTON_RTOL = 1e-10
NEWTON_MAX_ITER = 20
CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class TrialSpace:
    """CG-GL configuration: patch grid, local numbering, degree and global basis."""

    grid: PatchGrid
    p: int
    basis: object | None
    local_view: LocalMeshView
    problem: ProblemDef = field(default_factory=poisson_problem)
    quad_order: int | None = None
    lift: object | None = None
    max_level_jump: int | None = None

    @property
    def k(self) -> int:
        return 0 if self.basis is None else self.basis.k

    @property
    def n_local(self) -> int:
        return self.local_view.n_dofs

    @property
    def dim(self) -> int:
        return self.n_local + self.k

    @property
    def n_points(self) -> int:
        return self.quad_order or self.p + 2

    def quadrature(self, pid: int) -> PatchQuadrature:
        pm = self.grid.patch(pid)
        return patch_quadrature(pm.bounds, pm.ncx, pm.ncy, self.p, self.n_points, self.basis)

    def with_grid(self, grid: PatchGrid) -> "TrialSpace":
        """Same degree, basis and problem on a different patch configuration."""
        return replace(self, grid=grid, local_view=assemble_local_view(grid, self.p, self.max_level_jump))


def build_trial_space(grid, p, basis=None, problem=None, quad_order=None, max_level_jump=None) -> TrialSpace:
    view = assemble_local_view(grid, p, max_level_jump=max_level_jump)
    return TrialSpace(grid, p, basis, view, problem or poisson_problem(), quad_order, max_level_jump=max_level_jump)


@dataclass(frozen=True)
class GeneralizedCoords:
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])

    @classmethod
    def from_vector(cls, space: TrialSpace, v) -> "GeneralizedCoords":
        v = np.asarray(v, dtype=float)
        if v.size != space.dim:
            raise InvalidArgumentError(f"coordinate vector has length {v.size}, space dimension is {space.dim}")
        return cls(v[: space.n_local].copy(), v[space.n_local :].copy())

    @classmethod
    def zeros(cls, space: TrialSpace) -> "GeneralizedCoords":
        return cls(np.zeros(space.n_local), np.zeros(space.k))

    def __add__(self, other):
        return GeneralizedCoords(self.alpha + other.alpha, self.beta + other.beta)

    def __mul__(self, s):
        return GeneralizedCoords(self.alpha * s, self.beta * s)

    __rmul__ = __mul__


def _coords(space, U) -> GeneralizedCoords:
    if isinstance(U, GeneralizedCoords):
        if U.alpha.size != space.n_local or U.beta.size != space.k:
            raise InvalidArgumentError("generalized coordinates do not match the trial space")
        return U
    return GeneralizedCoords.from_vector(space, U)


@dataclass(frozen=True)
class ResidualBlocks:
    r_ll: np.ndarray
    r_gl: np.ndarray
    r_gg: np.ndarray

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.r_ll, self.r_gl + self.r_gg])


# --- per-patch kernels --------------------------------------------------------


def _cell_index(nc: int, p: int) -> np.ndarray:
    return np.arange(nc)[:, None] * p + np.arange(p + 1)[None, :]


@dataclass(frozen=True, eq=False)
class _PatchOps:
    """Gather/scatter between a patch nodal grid and per-cell arrays."""

    ncx: int
    ncy: int
    p: int

    @cached_property
    def nnx(self):
        return self.p * self.ncx + 1

    @cached_property
    def nny(self):
        return self.p * self.ncy + 1

    @cached_property
    def flat(self) -> np.ndarray:
        I = _cell_index(self.ncx, self.p)
        J = _cell_index(self.ncy, self.p)
        return I[:, None, :, None] * self.nny + J[None, :, None, :]

    def gather(self, nodal_flat: np.ndarray) -> np.ndarray:
        return nodal_flat[self.flat]

    def scatter(self, cell_arr: np.ndarray) -> np.ndarray:
        return np.bincount(self.flat.ravel(), weights=cell_arr.ravel(), minlength=self.nnx * self.nny)


def _ops(space: TrialSpace, pid: int) -> _PatchOps:
    pm = space.grid.patch(pid)
    return _PatchOps(pm.ncx, pm.ncy, space.p)


def _local_fields(q: PatchQuadrature, ucell: np.ndarray):
    ax, ay = q.ax, q.ay
    u = np.einsum("ias,jbt,ijst->iajb", ax.val, ay.val, ucell, optimize=True)
    ux = np.einsum("ias,jbt,ijst->iajb", ax.der, ay.val, ucell, optimize=True)
    uy = np.einsum("ias,jbt,ijst->iajb", ax.val, ay.der, ucell, optimize=True)
    return u, ux, uy


def _mode_fields(q: PatchQuadrature, beta: np.ndarray):
    if beta.size == 0:
        z = np.zeros(q.shape)
        return z, z, z
    return (
        np.tensordot(beta, q.psi, axes=1),
        np.tensordot(beta, q.psi_x, axes=1),
        np.tensordot(beta, q.psi_y, axes=1),
    )


def _project_tests(q: PatchQuadrature, fx, fy, s) -> np.ndarray:
    """Cell-wise ``-int (fx dphi/dx + fy dphi/dy + s phi)`` for every local shape function."""
    ax, ay, W = q.ax, q.ay, q.weight
    out = np.einsum("iajb,ias,jbt->ijst", W * fx, ax.der, ay.val, optimize=True)
    out += np.einsum("iajb,ias,jbt->ijst", W * fy, ax.val, ay.der, optimize=True)
    out += np.einsum("iajb,ias,jbt->ijst", W * s, ax.val, ay.val, optimize=True)
    return -out


def _project_modes(q: PatchQuadrature, fx, fy, s) -> np.ndarray:
    """Cell-wise ``-int (fx dpsi/dx + fy dpsi/dy + s psi)`` for every mode: ``(k, ncx, ncy)``."""
    W = q.weight
    out = np.einsum("iajb,miajb->mij", W * fx, q.psi_x, optimize=True)
    out += np.einsum("iajb,miajb->mij", W * fy, q.psi_y, optimize=True)
    out += np.einsum("iajb,miajb->mij", W * s, q.psi, optimize=True)
    return -out


def _state_at(space: TrialSpace, pid: int, q: PatchQuadrature, U: GeneralizedCoords):
    u, ux, uy = _mode_fields(q, U.beta)
    if not space.grid.is_global(pid) and space.n_local:
        ops = _ops(space, pid)
        nodal = space.local_view.patch_maps[pid] @ U.alpha
        lu, lx, ly = _local_fields(q, ops.gather(nodal))
        u, ux, uy = u + lu, ux + lx, uy + ly
    return u, ux, uy


def _flux_source(space, q, u, ux, uy, mu):
    g = np.stack([ux, uy], axis=-1)
    F = space.problem.flux(q.points, u, g, mu)
    s = space.problem.source(q.points, u, g, mu)
    return F[..., 0], F[..., 1], s


@dataclass(frozen=True)
class PatchResidual:
    """Cell-resolved residual pieces of one patch.

    ``tests`` holds local-test contributions ``(ncx, ncy, p+1, p+1)`` (``None``
    for global patches); ``modes`` holds global-test contributions ``(k, ncx, ncy)``.
    """

    pid: int
    tests: np.ndarray | None
    modes: np.ndarray


def patch_residual(space: TrialSpace, U, mu, pid: int, global_state_only: bool = False) -> PatchResidual:
    U = _coords(space, U)
    mu = as_parameter(mu)
    q = space.quadrature(pid)
    is_local = not space.grid.is_global(pid)
    if global_state_only or not is_local:
        u, ux, uy = _mode_fields(q, U.beta)
    else:
        u, ux, uy = _state_at(space, pid, q, U)
    fx, fy, s = _flux_source(space, q, u, ux, uy, mu)
    tests = _project_tests(q, fx, fy, s) if is_local and not global_state_only else None
    modes = _project_modes(q, fx, fy, s) if space.k else np.zeros((0, q.shape[0], q.shape[2]))
    return PatchResidual(pid, tests, modes)


def _check_eqp(space: TrialSpace, eqp):
    if eqp is None:
        return
    for pid in sorted(space.grid.global_set):
        if pid not in eqp:
            raise ConfigurationError(f"no EQP weights for global patch {pid}")
        n = space.grid.patch(pid).n_cells
        if eqp[pid].rho.size != n:
            raise ConfigurationError(f"EQP weights of patch {pid} cover {eqp[pid].rho.size} cells, patch has {n}")


def assemble_residual(space: TrialSpace, U, mu, eqp=None) -> ResidualBlocks:
    """Split residual; cells of global patches are weighted by ``eqp[pid].rho`` when given."""
    U = _coords(space, U)
    _check_eqp(space, eqp)
    r_ll = np.zeros(space.n_local)
    r_gl = np.zeros(space.k)
    r_gg = np.zeros(space.k)
    for pid in space.grid.local_patches:
        pr = patch_residual(space, U, mu, pid)
        if space.n_local:
            r_ll += space.local_view.patch_maps[pid].T @ _ops(space, pid).scatter(pr.tests)
        r_gl += pr.modes.sum(axis=(1, 2))
    for pid in sorted(space.grid.global_set):
        if space.k == 0:
            continue
        if eqp is None:
            r_gg += patch_residual(space, U, mu, pid).modes.sum(axis=(1, 2))
        else:
            r_gg += hyperreduced_patch_gg(space, U.beta, mu, pid, eqp[pid].rho)
    return ResidualBlocks(r_ll, r_gl, r_gg)


def cell_gg_contributions(space: TrialSpace, beta, mu, pid: int) -> np.ndarray:
    """Per-cell global residual rows ``(n_cells, k)`` of one patch, cells in linear order."""
    U = GeneralizedCoords(np.zeros(space.n_local), np.asarray(beta, dtype=float))
    m = patch_residual(space, U, mu, pid, global_state_only=True).modes  # (k, ncx, ncy)
    return m.transpose(2, 1, 0).reshape(-1, space.k)


def hyperreduced_patch_gg(space: TrialSpace, beta, mu, pid: int, rho) -> np.ndarray:
    """Weighted global residual of one patch; zero-weight cells are skipped."""
    rho = np.asarray(rho, dtype=float)
    nz = np.flatnonzero(rho)
    if nz.size == 0:
        return np.zeros(space.k)
    pm = space.grid.patch(pid)
    q = space.quadrature(pid)
    ci, cj = nz % pm.ncx, nz // pm.ncx
    sub = _subset_quadrature(q, ci, cj)
    fx, fy, s = _flux_source_points(space, sub, np.asarray(beta, dtype=float), mu)
    W = sub["weight"]
    contrib = np.einsum("nab,nmab->mn", W * fx, sub["psi_x"]) + np.einsum("nab,nmab->mn", W * fy, sub["psi_y"])
    contrib += np.einsum("nab,nmab->mn", W * s, sub["psi"])
    return -(contrib @ rho[nz])


def _subset_quadrature(q: PatchQuadrature, ci, cj):
    """Quadrature data restricted to the cells ``(ci[n], cj[n])``; modes as ``(n, k, mx, my)``."""
    return {
        "weight": q.weight[ci, :, cj, :],
        "points": q.points[ci, :, cj, :, :],
        "psi": q.psi[:, ci, :, cj, :],
        "psi_x": q.psi_x[:, ci, :, cj, :],
        "psi_y": q.psi_y[:, ci, :, cj, :],
    }


def _flux_source_points(space, sub, beta, mu):
    u = np.einsum("m,nmab->nab", beta, sub["psi"])
    ux = np.einsum("m,nmab->nab", beta, sub["psi_x"])
    uy = np.einsum("m,nmab->nab", beta, sub["psi_y"])
    g = np.stack([ux, uy], axis=-1)
    mu = as_parameter(mu)
    F = space.problem.flux(sub["points"], u, g, mu)
    s = space.problem.source(sub["points"], u, g, mu)
    return F[..., 0], F[..., 1], s


# --- Jacobian -----------------------------------------------------------------


@dataclass
class JacobianBlocks:
    """``[[A, B], [C, D]]`` with ``A`` sparse local-local and dense couplings."""

    A: sp.csr_matrix
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def to_matrix(self) -> sp.csr_matrix:
        return sp.bmat([[self.A, sp.csr_matrix(self.B)], [sp.csr_matrix(self.C), sp.csr_matrix(self.D)]], format="csr")

    def transpose(self) -> "JacobianBlocks":
        return JacobianBlocks(self.A.T.tocsr(), self.C.T.copy(), self.B.T.copy(), self.D.T.copy())


def _linearization(space, q, U, pid, mu, global_only=False):
    if global_only:
        u, ux, uy = _mode_fields(q, U.beta)
    else:
        u, ux, uy = _state_at(space, pid, q, U)
    g = np.stack([ux, uy], axis=-1)
    return space.problem.linearize(q.points, u, g, mu)


_TERMS = (("der", "val"), ("val", "der"), ("val", "val"))  # d/dx, d/dy, value factors


def _element_matrices(q: PatchQuadrature, lin) -> np.ndarray:
    A, b, c, d = lin.dflux_dgrad, lin.dflux_du, lin.dsource_du, lin.dsource_dgrad
    shape = q.shape
    coef = [
        [A[..., 0, 0], A[..., 0, 1], b[..., 0]],
        [A[..., 1, 0], A[..., 1, 1], b[..., 1]],
        [d[..., 0], d[..., 1], c],
    ]
    ax, ay, W = q.ax, q.ay, q.weight
    out = None
    for ti, (tx, ty) in enumerate(_TERMS):
        for si, (sx, sy) in enumerate(_TERMS):
            cf = np.broadcast_to(coef[ti][si], shape)
            if not np.any(cf):
                continue
            term = np.einsum(
                "iajb,ias,jbt,iaS,jbT->ijstST",
                W * cf, getattr(ax, tx), getattr(ay, ty), getattr(ax, sx), getattr(ay, sy), optimize=True,
            )
            out = term if out is None else out + term
    if out is None:
        p1 = ax.val.shape[-1]
        out = np.zeros((shape[0], shape[2], p1, p1, p1, p1))
    return -out


def _mode_direction(lin, q):
    """Linearized flux and source in the direction of each mode: ``(k, ...)``."""
    A, b, c, d = lin.dflux_dgrad, lin.dflux_du, lin.dsource_du, lin.dsource_dgrad
    gx, gy, v = q.psi_x, q.psi_y, q.psi
    fx = A[..., 0, 0] * gx + A[..., 0, 1] * gy + b[..., 0] * v
    fy = A[..., 1, 0] * gx + A[..., 1, 1] * gy + b[..., 1] * v
    s = d[..., 0] * gx + d[..., 1] * gy + c * v
    return fx, fy, s


def _mode_adjoint_direction(lin, q):
    """Coefficients pairing a mode test function with a trial direction: ``(k, ...)``."""
    A, b, c, d = lin.dflux_dgrad, lin.dflux_du, lin.dsource_du, lin.dsource_dgrad
    gx, gy, v = q.psi_x, q.psi_y, q.psi
    fx = A[..., 0, 0] * gx + A[..., 1, 0] * gy + d[..., 0] * v
    fy = A[..., 0, 1] * gx + A[..., 1, 1] * gy + d[..., 1] * v
    s = b[..., 0] * gx + b[..., 1] * gy + c * v
    return fx, fy, s


def _mode_mode_cells(q, lin) -> np.ndarray:
    """Per-cell ``d r_g / d beta`` blocks: ``(k_test, k_trial, ncx, ncy)``."""
    fx, fy, s = _mode_direction(lin, q)
    W = q.weight
    out = np.einsum("iajb,miajb,niajb->mnij", W, q.psi_x, fx, optimize=True)
    out += np.einsum("iajb,miajb,niajb->mnij", W, q.psi_y, fy, optimize=True)
    out += np.einsum("iajb,miajb,niajb->mnij", W, q.psi, s, optimize=True)
    return -out


def assemble_jacobian_blocks(space: TrialSpace, U, mu, eqp=None) -> JacobianBlocks:
    U = _coords(space, U)
    mu = as_parameter(mu)
    _check_eqp(space, eqp)
    n, k = space.n_local, space.k
    rows, cols, vals = [], [], []
    B = np.zeros((n, k))
    C = np.zeros((k, n))
    D = np.zeros((k, k))
    A = sp.csr_matrix((n, n))
    for pid in space.grid.local_patches:
        q = space.quadrature(pid)
        lin = _linearization(space, q, U, pid, mu)
        ops = _ops(space, pid)
        Z = space.local_view.patch_maps[pid]
        if n:
            Ke = _element_matrices(q, lin)
            flat = ops.flat  # (ncx, ncy, p+1, p+1)
            r = np.broadcast_to(flat[:, :, :, :, None, None], Ke.shape)
            c = np.broadcast_to(flat[:, :, None, None, :, :], Ke.shape)
            size = ops.nnx * ops.nny
            Kp = sp.csr_matrix((Ke.ravel(), (r.ravel(), c.ravel())), shape=(size, size))
            A = A + (Z.T @ Kp @ Z)
        if k:
            if n:
                fx, fy, s = _mode_direction(lin, q)
                for m in range(k):
                    B[:, m] += Z.T @ ops.scatter(_project_tests(q, fx[m], fy[m], s[m]))
                gx, gy, gs = _mode_adjoint_direction(lin, q)
                for m in range(k):
                    C[m, :] += Z.T @ ops.scatter(_project_tests(q, gx[m], gy[m], gs[m]))
            D += _mode_mode_cells(q, lin).sum(axis=(2, 3))
    for pid in sorted(space.grid.global_set):
        if not k:
            continue
        q = space.quadrature(pid)
        lin = _linearization(space, q, U, pid, mu, global_only=True)
        cells = _mode_mode_cells(q, lin)  # (k, k, ncx, ncy)
        if eqp is None:
            D += cells.sum(axis=(2, 3))
        else:
            pm = space.grid.patch(pid)
            rho = np.asarray(eqp[pid].rho).reshape(pm.ncy, pm.ncx).T
            D += np.einsum("mnij,ij->mn", cells, rho)
    return JacobianBlocks(sp.csr_matrix(A), B, C, D)


def assemble_jacobian(space: TrialSpace, U, mu, eqp=None) -> sp.csr_matrix:
    """Exact derivative of :func:`assemble_residual` as an ``(N_l+k)`` square sparse matrix."""
    return assemble_jacobian_blocks(space, U, mu, eqp).to_matrix()


# --- linear algebra ----------------------------------------------------------


class BlockSolver:
    """Direct solver for a bordered system via sparse LU and a dense Schur complement.

    Raises :class:`NearDependenceError` when the Schur complement is
    numerically singular relative to the global-global block, i.e. the local
    finite-element space (nearly) reproduces a combination of global modes.
    Pass ``rank_deficient="lstsq"`` to fall back to a minimum-norm Schur solve
    with a warning instead.
    """

    def __init__(self, blocks: JacobianBlocks, limit: float = CONDITION_LIMIT, rank_deficient: str = "raise"):
        self.blocks = blocks
        n, k = blocks.B.shape
        self.n, self.k = n, k
        self.lstsq = False
        self.lu = None
        if n:
            try:
                self.lu = spla.splu(blocks.A.tocsc())
            except RuntimeError as exc:  # exactly singular factor
                raise SolverError(f"local block is singular: {exc}") from exc
        if k:
            AinvB = self.lu.solve(blocks.B) if n and k else np.zeros((n, k))
            self.AinvB = AinvB
            S = blocks.D - blocks.C @ AinvB if n else blocks.D.copy()
            self.S = S
            sv = np.linalg.svd(S, compute_uv=False)
            scale = max(np.linalg.norm(blocks.D, 2), sv[0] if sv.size else 0.0, np.finfo(float).tiny)
            self.condition = scale / sv[-1] if sv[-1] > 0 else np.inf
            if self.condition > limit:
                _, _, vt = np.linalg.svd(S)
                weak = np.flatnonzero(np.abs(vt[-1]) > 0.1)
                msg = f"near-dependence between local space and global modes {weak.tolist()} (condition {self.condition:.3e})"
                if rank_deficient == "raise":
                    raise NearDependenceError(msg, modes=weak, condition=self.condition)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
                self.lstsq = True
        else:
            self.condition = 1.0

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        n, k = self.n, self.k
        f, g = rhs[:n], rhs[n:]
        if not k:
            return self.lu.solve(f) if n else np.zeros(0)
        Ainv_f = self.lu.solve(f) if n else np.zeros(0)
        t = g - (self.blocks.C @ Ainv_f if n else 0.0)
        if self.lstsq:
            beta = sla.lstsq(self.S, t, cond=1.0 / CONDITION_LIMIT)[0]
        else:
            beta = sla.solve(self.S, t)
        alpha = Ainv_f - self.AinvB @ beta if n else np.zeros(0)
        return np.concatenate([alpha, beta])


def solve_primal(space: TrialSpace, mu, eqp=None, U0=None, rtol=NEWTON_RTOL, max_iter=NEWTON_MAX_ITER) -> GeneralizedCoords:
    """Newton iteration on the (optionally hyperreduced) residual."""
    mu = as_parameter(mu)
    U = GeneralizedCoords.zeros(space) if U0 is None else _coords(space, U0)
    r = assemble_residual(space, U, mu, eqp).full
    r0 = np.max(np.abs(r)) if r.size else 0.0
    tol = rtol * (1.0 + r0)
    history = [r0]
    for it in range(max_iter):
        if history[-1] <= tol:
            return U
        J = assemble_jacobian_blocks(space, U, mu, eqp)
        dU = BlockSolver(J).solve(-r)
        U = GeneralizedCoords.from_vector(space, U.vector + dU)
        r = assemble_residual(space, U, mu, eqp).full
        history.append(np.max(np.abs(r)) if r.size else 0.0)
        log.debug("newton %d: |r|=%.3e", it + 1, history[-1])
        if space.problem.linear and history[-1] <= max(tol, 1e3 * np.finfo(float).eps * (1 + r0)):
            return U
    if history[-1] <= tol:
        return U
    raise SolverError(f"Newton did not converge in {max_iter} iterations: residual history {history}")


# --- reconstruction / QoI ----------------------------------------------------


def _local_nodal(space: TrialSpace, pid: int, alpha) -> np.ndarray:
    ops = _ops(space, pid)
    return (space.local_view.patch_maps[pid] @ alpha).reshape(ops.nnx, ops.nny)


def reconstruct(space: TrialSpace, U, x):
    """Value and gradient of the trial-space function at points ``x``."""
    U = _coords(space, U)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    value = np.zeros(len(pts))
    grad = np.zeros((len(pts), 2))
    pids = space.grid.locate_patch(pts)
    if space.k:
        v, g = evaluate_modes(space.basis, pts)
        value += U.beta @ v
        grad += np.einsum("m,mnd->nd", U.beta, g)
    if space.n_local:
        for pid in space.grid.local_patches:
            sel = np.flatnonzero(pids == pid)
            if sel.size == 0:
                continue
            pm = space.grid.patch(pid)
            cell, xi = pm.mesh.locate(pts[sel])
            ci, cj = cell % pm.ncx, cell // pm.ncx
            nodal = _local_nodal(space, pid, U.alpha)
            p = space.p
            lx, dx = lagrange_1d(p, xi[:, 0])
            ly, dy = lagrange_1d(p, xi[:, 1])
            I = ci[:, None] * p + np.arange(p + 1)
            J = cj[:, None] * p + np.arange(p + 1)
            loc = nodal[I[:, :, None], J[:, None, :]]
            value[sel] += np.einsum("ns,nt,nst->n", lx, ly, loc)
            grad[sel, 0] += np.einsum("ns,nt,nst->n", dx, ly, loc) * (2.0 / pm.mesh.hx)
            grad[sel, 1] += np.einsum("ns,nt,nst->n", lx, dy, loc) * (2.0 / pm.mesh.hy)
    if np.ndim(x) == 1:
        return value[0], grad[0]
    return value, grad


def evaluate_modes(basis, pts):
    """Mode values ``(k, n)`` and gradients ``(k, n, 2)`` at scattered points."""
    from .fem import fe_eval

    vals, grads = [], []
    for fn in basis.functions:
        v, g = fe_eval(fn, pts)
        vals.append(v)
        grads.append(g)
    return np.array(vals), np.array(grads)


def eval_qoi(space: TrialSpace, U, mu) -> float:
    """Volume QoI over every patch with the full (never hyperreduced) quadrature."""
    U = _coords(space, U)
    mu = as_parameter(mu)
    total = 0.0
    for pid in range(space.grid.n_patches):
        q = space.quadrature(pid)
        u, ux, uy = _state_at(space, pid, q, U)
        g = np.stack([ux, uy], axis=-1)
        total += float(np.sum(q.weight * space.problem.qoi_volume(q.points, u, g, mu)))
    return total


def eval_qoi_gradient(space: TrialSpace, U, mu) -> np.ndarray:
    U = _coords(space, U)
    mu = as_parameter(mu)
    gl = np.zeros(space.n_local)
    gg = np.zeros(space.k)
    for pid in range(space.grid.n_patches):
        q = space.quadrature(pid)
        u, ux, uy = _state_at(space, pid, q, U)
        g = np.stack([ux, uy], axis=-1)
        qu, qg = space.problem.qoi_volume_linearization(q.points, u, g, mu)
        if space.n_local and not space.grid.is_global(pid):
            ops = _ops(space, pid)
            cells = -_project_tests(q, qg[..., 0], qg[..., 1], qu)
            gl += space.local_view.patch_maps[pid].T @ ops.scatter(cells)
        if space.k:
            gg += -_project_modes(q, qg[..., 0], qg[..., 1], qu).sum(axis=(1, 2))
    return np.concatenate([gl, gg])


# --- prolongation -------------------------------------------------------------


def _check_nested(coarse: TrialSpace, fine: TrialSpace):
    cg, fg = coarse.grid, fine.grid
    same_layout = (cg.domain, cg.px, cg.py, cg.base_res) == (fg.domain, fg.px, fg.py, fg.base_res)
    if not same_layout or coarse.p != fine.p or coarse.basis is not fine.basis:
        raise InvalidArgumentError("spaces differ in patch layout, degree or global basis")
    if not fg.global_set <= cg.global_set:
        raise InvalidArgumentError("fine local region must contain the coarse local region")
    for pid in cg.local_patches:
        if fg.levels[pid] < cg.levels[pid]:
            raise InvalidArgumentError(f"patch {pid} is coarser in the fine space")


def build_prolongation(coarse: TrialSpace, fine: TrialSpace) -> sp.csr_matrix:
    """Coefficient map ``I`` with ``U_fine(I @ U) == U_coarse(U)`` pointwise.

    Fine local coefficients are nodal values of the coarse local part (exact
    because the fine meshes nest the coarse ones); mode coefficients pass
    through unchanged.
    """
    _check_nested(coarse, fine)
    nf, nc, k = fine.n_local, coarse.n_local, coarse.k
    blocks = sp.lil_matrix((nf, nc))
    if nf and nc:
        xy = fine.local_view.dof_coordinates()
        owner = np.full(nf, -1)
        for pid in coarse.grid.local_patches:
            b = coarse.grid.patch_bounds(pid)
            tol = 1e-12 * max(coarse.grid.domain.width)
            inside = (
                (owner < 0)
                & (xy[:, 0] >= b.lo[0] - tol) & (xy[:, 0] <= b.hi[0] + tol)
                & (xy[:, 1] >= b.lo[1] - tol) & (xy[:, 1] <= b.hi[1] + tol)
            )
            sel = np.flatnonzero(inside)
            if sel.size == 0:
                continue
            owner[sel] = pid
            pm = coarse.grid.patch(pid)
            pts = np.clip(xy[sel], b.lo, b.hi)
            cell, xi = pm.mesh.locate(pts)
            ci, cj = cell % pm.ncx, cell // pm.ncx
            p = coarse.p
            lx, _ = lagrange_1d(p, xi[:, 0])
            ly, _ = lagrange_1d(p, xi[:, 1])
            nny = p * pm.ncy + 1
            I = ci[:, None] * p + np.arange(p + 1)
            J = cj[:, None] * p + np.arange(p + 1)
            flat = I[:, :, None] * nny + J[:, None, :]
            w = lx[:, :, None] * ly[:, None, :]
            rows = np.repeat(sel, (p + 1) ** 2)
            E = sp.csr_matrix((w.ravel(), (rows, flat.ravel())), shape=(nf, pm.mesh.n_cells and (p * pm.ncx + 1) * nny))
            blocks = blocks + E @ coarse.local_view.patch_maps[pid]
    P = sp.bmat([[sp.csr_matrix(blocks), None], [None, sp.identity(k, format="csr")]], format="csr") if k else sp.csr_matrix(blocks)
    P.eliminate_zeros()
    return P


def prolong(P: sp.csr_matrix, coarse: TrialSpace, fine: TrialSpace, U) -> GeneralizedCoords:
    return GeneralizedCoords.from_vector(fine, P @ _coords(coarse, U).vector)
