"""Two-phase revised simplex with Bland's anti-cycling rule.

Small and deterministic; it returns a basic (vertex)
solution, which is what gives empirical quadrature weights their sparsity.
The basis matrix is refactorized at every pivot instead of updating a
tableau, which keeps the vertex accurate on the nearly redundant constraint
sets produced by quadrature training.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InfeasibleError, SolverError


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    objective: float
    basis: tuple[int, ...]
    iterations: int


def _phase(M, b, c, basis, allowed, tol, max_iter):
    """Minimize ``c @ z`` over ``M z = b, z >= 0`` from a feasible ``basis`` (updated in place)."""
    nonbasic = np.empty(M.shape[1], dtype=bool)
    for it in range(max_iter):
        nonbasic[:] = allowed
        nonbasic[basis] = False
        lu = sla.lu_factor(M[:, basis])
        xB = sla.lu_solve(lu, b)
        y = sla.lu_solve(lu, c[basis], trans=1)
        d = c - y @ M
        enter = np.flatnonzero(nonbasic & (d < -tol))
        if enter.size == 0:
            return it, xB
        col = int(enter[0])
        w = sla.lu_solve(lu, M[:, col])
        pos = np.flatnonzero(w > tol)
        if pos.size == 0:
            raise SolverError("linear program is unbounded")
        ratios = np.clip(xB[pos], 0.0, None) / w[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-14 * max(1.0, best)]
        row = int(min(ties, key=lambda r: basis[r]))
        basis[row] = col
    raise SolverError(f"simplex exceeded {max_iter} pivots")


def linprog_bland(c, A_ub, b_ub, tol: float = 1e-9, max_iter: int = 20_000) -> LPResult:
    """Minimize ``c @ x`` subject to ``A_ub @ x <= b_ub`` and ``x >= 0``."""
    c = np.asarray(c, dtype=float)
    A = np.asarray(A_ub, dtype=float)
    b = np.asarray(b_ub, dtype=float)
    m, n = A.shape
    scale = np.maximum(np.abs(A).max(axis=1), np.abs(b))
    scale[scale == 0] = 1.0
    A = A / scale[:, None]
    b = b / scale
    sign = np.where(b < 0, -1.0, 1.0)
    art_rows = np.flatnonzero(sign < 0)
    n_art = art_rows.size
    # columns: x (n) | slacks (m) | artificials (n_art)
    M = np.zeros((m, n + m + n_art))
    M[:, :n] = A * sign[:, None]
    M[:, n : n + m] = np.diag(sign)
    M[art_rows, n + m + np.arange(n_art)] = 1.0
    rhs = b * sign
    basis = list(range(n, n + m))
    for a, r in enumerate(art_rows):
        basis[r] = n + m + a
    total = n + m + n_art
    iters = 0
    if n_art:
        cost = np.zeros(total)
        cost[n + m :] = 1.0
        it, xB = _phase(M, rhs, cost, basis, np.ones(total, dtype=bool), tol, max_iter)
        iters += it
        infeas = sum(v for v, j in zip(xB, basis) if j >= n + m)
        if infeas > 1e-9:
            raise InfeasibleError(f"phase one ended with infeasibility {infeas:.3e}")
        # pivot zero-level artificials out of the basis where possible
        for r in range(m):
            if basis[r] < n + m:
                continue
            er = np.zeros(m)
            er[r] = 1.0
            row = sla.solve(M[:, basis].T, er) @ M[:, : n + m]
            row[[j for j in basis if j < n + m]] = 0.0
            cand = np.flatnonzero(np.abs(row) > 1e-9)
            if cand.size:
                basis[r] = int(cand[0])
    allowed = np.zeros(total, dtype=bool)
    allowed[: n + m] = True
    cost = np.zeros(total)
    cost[:n] = c
    it, xB = _phase(M, rhs, cost, basis, allowed, tol, max_iter)
    iters += it
    z = np.zeros(total)
    z[basis] = xB
    x = np.clip(z[:n], 0.0, None)
    return LPResult(x, float(c @ x), tuple(int(v) for v in basis), iters)
