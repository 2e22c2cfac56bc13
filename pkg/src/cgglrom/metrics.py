"""Error metrics of a reduced solution against a reference ("truth") solve."""
from __future__ import annotations

import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .cggl import eval_qoi, reconstruct, solve_primal
from .fem import FeFunction, evaluate_tensor
from .problem import Parameter, as_parameter
from .quadrature import composite_rule_1d
from .rom import ReferenceDiscretization


@dataclass(frozen=True, eq=False)
class Truth:
    mu: Parameter
    solution: FeFunction
    J: float
    wall_time: float


def solve_truth(mu, ref: ReferenceDiscretization) -> Truth:
    mu = as_parameter(mu)
    t0 = time.perf_counter()
    U = solve_primal(ref.space, mu)
    elapsed = time.perf_counter() - t0
    fn = FeFunction(ref.mesh, ref.p, ref.nodal_grid(U.alpha))
    return Truth(mu, fn, eval_qoi(ref.space, U, mu), elapsed)


@lru_cache(maxsize=8)
def _reference_rule(mesh, n):
    X, WX, _ = composite_rule_1d(mesh.domain.lo[0], mesh.hx, mesh.nx, n)
    Y, WY, _ = composite_rule_1d(mesh.domain.lo[1], mesh.hy, mesh.ny, n)
    return X.ravel(), Y.ravel(), np.outer(WX.ravel(), WY.ravel())


def l2_error(space, U, truth: Truth) -> tuple[float, float]:
    """``(||u - u_t||, ||u_t||)`` in L2, integrated with Gauss points of the reference mesh."""
    fn = truth.solution
    xs, ys, W = _reference_rule(fn.mesh, fn.p + 2)
    ut = evaluate_tensor(fn, xs, ys)[0]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    u = reconstruct(space, U, np.column_stack([X.ravel(), Y.ravel()]))[0].reshape(X.shape)
    return float(np.sqrt(np.sum(W * (u - ut) ** 2))), float(np.sqrt(np.sum(W * ut**2)))


def relative_errors(err_sln, norm_t, J, J_t, E):
    """``e_sln``, ``e_qoi``, ``e_est`` and a flag; absolute QoI errors when ``J_t == 0``."""
    q_err = abs(J - J_t)
    est_err = abs(abs(E) - q_err)
    flag = ""
    if J_t == 0:
        flag = "absolute_qoi"
        e_qoi, e_est = q_err, est_err
    else:
        e_qoi, e_est = q_err / abs(J_t), est_err / abs(J_t)
    e_sln = err_sln / norm_t if norm_t > 0 else err_sln
    return {"e_sln": e_sln, "e_qoi": e_qoi, "e_est": e_est, "flag": flag}


def compute_metrics(space, U, truth: Truth, J: float, E: float) -> dict:
    err, norm = l2_error(space, U, truth)
    return relative_errors(err, norm, J, truth.J, E)
