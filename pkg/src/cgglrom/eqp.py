"""Patchwise empirical quadrature for the global-global residual.

For every patch we look for nonnegative cell weights ``rho`` that integrate
the patch volume and the per-cell global residual rows of a training set to
within prescribed tolerances while using as few cells as possible. The
weights depend only on the patch, the global basis and the training set, so
they survive any later change of which patches are local.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cggl import GeneralizedCoords, build_trial_space, cell_gg_contributions, hyperreduced_patch_gg, solve_primal
from .errors import InfeasibleError, InvalidArgumentError
from .mesh import PatchGrid, build_patch_grid
from .problem import Parameter, as_parameter
from .simplex import linprog_bland

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
POSTCHECK_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class EqpTrainingData:
    """Rows of the quadrature constraints for one patch.

    ``residuals`` has shape ``(n_train, n_cells, k)``: the unit-weight cell
    contributions to the global residual at the reduced solution of each
    training parameter.
    """

    patch_id: int
    params: tuple[Parameter, ...]
    volumes: np.ndarray
    residuals: np.ndarray

    @property
    def n_cells(self) -> int:
        return self.volumes.size


@dataclass(frozen=True, eq=False)
class EqpWeights:
    patch_id: int
    rho: np.ndarray

    @property
    def nonzero(self) -> np.ndarray:
        return np.flatnonzero(self.rho)

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.rho))


def pure_rom_space(grid: PatchGrid, p: int, basis):
    """All-global trial space on the layout of ``grid``."""
    layout = build_patch_grid(grid.domain, grid.px, grid.py, grid.base_res)
    return build_trial_space(layout, p, basis)


def rom_coordinates(space, params) -> list[np.ndarray]:
    """Reduced-basis coefficients at each parameter, solved without hyperreduction."""
    if space.n_local:
        raise InvalidArgumentError("training requires an all-global trial space")
    return [solve_primal(space, mu).beta for mu in params]


def build_training_data(space, patch_id: int, params, betas=None) -> EqpTrainingData:
    """Constraint rows for ``patch_id``. ``space`` must be all-global."""
    params = tuple(as_parameter(mu) for mu in params)
    if not params:
        raise InvalidArgumentError("empty training set")
    if betas is None:
        betas = rom_coordinates(space, params)
    rows = np.array([cell_gg_contributions(space, b, mu, patch_id) for b, mu in zip(betas, params)])
    vol = space.grid.patch(patch_id).cell_volumes()
    return EqpTrainingData(patch_id, params, np.asarray(vol, dtype=float), rows)


def constraint_violation(data: EqpTrainingData, rho, tol_volume=DEFAULT_TOL, tol_residual=DEFAULT_TOL) -> float:
    """Largest amount by which ``rho`` breaks a constraint (``<= 0`` means feasible)."""
    rho = np.asarray(rho, dtype=float)
    d = rho - 1.0
    worst = max(-rho.min(), abs(d @ data.volumes) - tol_volume)
    if data.residuals.size:
        err = np.einsum("e,qem->qm", d, data.residuals)
        worst = max(worst, np.abs(err).max() - tol_residual)
    return float(worst)


def _lp(data: EqpTrainingData, tol_volume, tol_residual):
    G = [data.volumes[None, :]]
    h = [np.array([data.volumes.sum()])]
    if data.residuals.size:
        R = data.residuals.transpose(0, 2, 1).reshape(-1, data.n_cells)  # (n_train*k, n_cells)
        G.append(R)
        h.append(R.sum(axis=1))
    G = np.vstack(G)
    h = np.concatenate(h)
    tol = np.concatenate([[tol_volume], np.full(G.shape[0] - 1, tol_residual)])
    A = np.vstack([G, -G])
    b = np.concatenate([h + tol, -h + tol])
    return np.ones(data.n_cells), A, b


def train_patch_weights(data: EqpTrainingData, tol_volume=DEFAULT_TOL, tol_residual=DEFAULT_TOL) -> EqpWeights:
    """Sparse weights minimizing ``sum(rho)`` under the accuracy constraints.

    The uniform rule ``rho = 1`` is always feasible, so failure to find a
    vertex indicates a numerical problem and raises :class:`InfeasibleError`.
    """
    if tol_volume < 0 or tol_residual < 0:
        raise InvalidArgumentError("tolerances must be nonnegative")
    if not (np.all(np.isfinite(data.volumes)) and np.all(np.isfinite(data.residuals))):
        raise InvalidArgumentError(f"training data of patch {data.patch_id} is not finite")
    if constraint_violation(data, np.ones(data.n_cells), tol_volume, tol_residual) > POSTCHECK_SLACK:
        raise InfeasibleError(f"unit weights violate the constraints of patch {data.patch_id}")
    c, A, b = _lp(data, tol_volume, tol_residual)
    res = linprog_bland(c, A, b)
    rho = res.x
    rho[rho < 1e-14] = 0.0
    viol = constraint_violation(data, rho, tol_volume, tol_residual)
    if viol > POSTCHECK_SLACK:
        raise InfeasibleError(f"patch {data.patch_id}: LP vertex violates constraints by {viol:.3e}")
    log.info("patch %d: %d/%d nonzero weights", data.patch_id, np.count_nonzero(rho), rho.size)
    return EqpWeights(data.patch_id, rho)


def train_eqp(grid: PatchGrid, p: int, basis, params, tol_volume=DEFAULT_TOL, tol_residual=DEFAULT_TOL) -> dict[int, EqpWeights]:
    """Weights for every patch of the layout, from one set of reduced solves."""
    space = pure_rom_space(grid, p, basis)
    params = tuple(as_parameter(mu) for mu in params)
    betas = rom_coordinates(space, params)
    return {
        pid: train_patch_weights(build_training_data(space, pid, params, betas), tol_volume, tol_residual)
        for pid in range(space.grid.n_patches)
    }


def hyperreduced_gg(space, U, mu, weights: dict[int, EqpWeights]) -> np.ndarray:
    """Hyperreduced global residual summed over the global patches of ``space``."""
    beta = U.beta if isinstance(U, GeneralizedCoords) else np.asarray(U, dtype=float)
    out = np.zeros(space.k)
    for pid in sorted(space.grid.global_set):
        out += hyperreduced_patch_gg(space, beta, mu, pid, weights[pid].rho)
    return out
