"""Goal-oriented error estimation and patchwise adaptive refinement.

The estimate is a dual-weighted residual: the adjoint is solved in a fine
space in which every patch is local and one level finer, and the coarse
solution's fine residual is weighted by it. Cell contributions are summed per
patch to decide where to refine next.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cggl import (
    BlockSolver,
    GeneralizedCoords,
    TrialSpace,
    _ops,
    assemble_jacobian_blocks,
    assemble_residual,
    build_prolongation,
    eval_qoi,
    eval_qoi_gradient,
    patch_residual,
    prolong,
    solve_primal,
)
from .errors import InvalidArgumentError, NearDependenceError
from .mesh import localize_patch, refine_patch
from .problem import as_parameter

log = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 12
DEFAULT_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class FineSpacePair:
    coarse: TrialSpace
    fine: TrialSpace
    prolongation: object

    def prolong(self, U) -> GeneralizedCoords:
        return prolong(self.prolongation, self.coarse, self.fine, U)


def fine_grid(grid):
    """Every patch local and one level finer."""
    out = grid
    for pid in sorted(grid.global_set):
        out = localize_patch(out, pid)
    for pid in range(grid.n_patches):
        out = refine_patch(out, pid)
    return out


def build_fine_pair(coarse: TrialSpace) -> FineSpacePair:
    fine = coarse.with_grid(fine_grid(coarse.grid))
    return FineSpacePair(coarse, fine, build_prolongation(coarse, fine))


@dataclass(frozen=True, eq=False)
class ErrorBreakdown:
    """Estimate ``E`` with its cell and patch localizations.

    ``eta_cell[pid]`` lists the fine cells of patch ``pid`` in linear order;
    the cell indicators sum to ``-E``.
    """

    E: float
    eta_cell: dict[int, np.ndarray]
    eta_patch: np.ndarray
    psi: GeneralizedCoords


def _adjoint_blocks(pair: FineSpacePair, U_h, mu):
    return assemble_jacobian_blocks(pair.fine, U_h, mu).transpose()


def solve_adjoint(pair: FineSpacePair, U_H, mu) -> GeneralizedCoords:
    """Fine-space adjoint at the prolonged coarse state (exact assembly).

    When the fine local space nearly spans the global modes the Schur
    complement is rank deficient; the solve then falls back to a minimum-norm
    least-squares solution and warns.
    """
    mu = as_parameter(mu)
    fine = pair.fine
    U_h = pair.prolong(U_H)
    blocks = _adjoint_blocks(pair, U_h, mu)
    g = eval_qoi_gradient(fine, U_h, mu)
    try:
        solver = BlockSolver(blocks)
    except NearDependenceError as exc:
        warnings.warn(f"adjoint: {exc}", RuntimeWarning, stacklevel=2)
        solver = _lstsq_solver(blocks)
    psi = solver.solve(-g)
    return GeneralizedCoords.from_vector(fine, psi)


def _lstsq_solver(blocks):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return BlockSolver(blocks, rank_deficient="lstsq")


def estimate_error(pair: FineSpacePair, U_H, mu, psi: GeneralizedCoords | None = None) -> ErrorBreakdown:
    mu = as_parameter(mu)
    fine = pair.fine
    U_h = pair.prolong(U_H)
    if psi is None:
        psi = solve_adjoint(pair, U_H, mu)
    eta_cell = {}
    eta_patch = np.zeros(fine.grid.n_patches)
    for pid in range(fine.grid.n_patches):
        pr = patch_residual(fine, U_h, mu, pid)
        ops = _ops(fine, pid)
        psi_cells = ops.gather(fine.local_view.patch_maps[pid] @ psi.alpha)  # (ncx, ncy, p+1, p+1)
        eta = np.einsum("ijst,ijst->ij", psi_cells, pr.tests)
        if fine.k:
            eta = eta + np.einsum("m,mij->ij", psi.beta, pr.modes)
        eta_cell[pid] = eta.T.ravel()
        eta_patch[pid] = eta.sum()
    r = assemble_residual(fine, U_h, mu).full
    E = -float(psi.vector @ r)
    return ErrorBreakdown(E, eta_cell, eta_patch, psi)


def select_patch(eta_patch) -> int:
    eta = np.abs(np.asarray(eta_patch, dtype=float))
    if eta.size == 0:
        raise InvalidArgumentError("no patches to select from")
    return int(np.argmax(eta))  # first maximum, i.e. lowest index on ties


def resolution_cap(space: TrialSpace) -> int | None:
    """Deepest patch level whose cells are no finer than the global basis mesh.

    Refining past the mesh the modes (and the truth) live on cannot improve
    the approximation, and unbounded refinement of one patch exhausts memory.
    """
    if space.basis is None:
        return None
    bm = space.basis.mesh
    w, h = space.grid.patch_size
    ratio = min(w / space.grid.base_res[0] / bm.hx, h / space.grid.base_res[1] / bm.hy)
    return max(0, int(np.floor(np.log2(ratio) + 1e-9)))


def select_refinable(eta_patch, space: TrialSpace, max_level: int | None) -> int | None:
    """Largest ``|eta|`` patch that may still be localized or refined; ``None`` if none is left."""
    eta = np.abs(np.asarray(eta_patch, dtype=float))
    for pid in np.argsort(-eta, kind="stable"):
        pid = int(pid)
        if space.grid.is_global(pid) or max_level is None or space.grid.levels[pid] < max_level:
            return pid
    return None


def refine_step(space: TrialSpace, pid: int) -> TrialSpace:
    """Localize ``pid`` if it is global, otherwise refine it one level."""
    grid = space.grid
    grid = localize_patch(grid, pid) if grid.is_global(pid) else refine_patch(grid, pid)
    return space.with_grid(grid)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    action: str
    patch: int | None
    n_local: int
    E: float
    J: float
    e_sln: float = np.nan
    e_qoi: float = np.nan
    e_est: float = np.nan
    wall_time: float = 0.0
    flag: str = ""


@dataclass
class AdaptHistory:
    records: list[IterationRecord] = field(default_factory=list)
    spaces: list[TrialSpace] = field(default_factory=list)
    estimates: list[ErrorBreakdown] = field(default_factory=list)

    def append(self, rec: IterationRecord):
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise InvalidArgumentError("iterations must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


def adaptive_solve(space: TrialSpace, mu, eqp=None, max_iter: int = DEFAULT_MAX_ITER, tol: float | None = None,
                   truth=None, keep_spaces: bool = False, max_level="auto"):
    """Solve, estimate, refine the worst patch; repeat.

    ``tol`` defaults to ``1e-8 |J_H|`` of the current iterate. ``truth``, when
    given, is a :class:`~cgglrom.metrics.Truth` used to fill the error columns.
    Local patches already at ``max_level`` are passed over in favour of the
    next largest indicator; ``"auto"`` uses :func:`resolution_cap` and
    ``None`` refines without bound.
    Returns the final coordinates, the final space and the history.
    """
    if max_iter < 0:
        raise InvalidArgumentError("max_iter must be nonnegative")
    if tol is not None and not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    mu = as_parameter(mu)
    if max_level == "auto":
        max_level = resolution_cap(space)
    history = AdaptHistory()
    start = time.perf_counter()
    U = None
    for it in range(max_iter + 1):
        eqp_here = {pid: eqp[pid] for pid in space.grid.global_set} if eqp is not None and space.k else None
        U = solve_primal(space, mu, eqp=eqp_here)
        J = eval_qoi(space, U, mu)
        pair = build_fine_pair(space)
        est = estimate_error(pair, U, mu)
        stop_tol = DEFAULT_RTOL * abs(J) if tol is None else tol
        target = None
        if abs(est.E) <= stop_tol or it == max_iter:
            action = "stop"
        else:
            target = select_refinable(est.eta_patch, space, max_level)
            if target is None:
                action = "saturated"
            else:
                action = "localize" if space.grid.is_global(target) else "refine"
        done = target is None
        elapsed = time.perf_counter() - start
        metrics = {}
        if truth is not None:
            from .metrics import compute_metrics

            t0 = time.perf_counter()
            metrics = compute_metrics(space, U, truth, J, est.E)
            start += time.perf_counter() - t0  # metrics are not part of the method's cost
        history.append(IterationRecord(it, action, target, space.n_local, est.E, J, wall_time=elapsed, **metrics))
        history.estimates.append(est)
        if keep_spaces:
            history.spaces.append(space)
        log.info("iter %d: N_l=%d E=%.3e J=%.6e %s %s", it, space.n_local, est.E, J, action, target)
        if done:
            break
        space = refine_step(space, target)
    return U, space, history
