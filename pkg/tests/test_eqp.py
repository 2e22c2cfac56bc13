import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgglrom.cggl import assemble_jacobian_blocks, assemble_residual, build_trial_space, cell_gg_contributions
from cgglrom.dwr_adapt import refine_step
from cgglrom.eqp import (
    EqpTrainingData,
    EqpWeights,
    _lp,
    build_training_data,
    constraint_violation,
    hyperreduced_gg,
    pure_rom_space,
    rom_coordinates,
    train_eqp,
    train_patch_weights,
)
from cgglrom.errors import ConfigurationError, InfeasibleError, InvalidArgumentError
from cgglrom.rom import pod

from conftest import TRAIN3

DELTA = 1e-8


@pytest.fixture(scope="module")
def rom_space(small_grid, small_basis):
    return pure_rom_space(small_grid, 2, small_basis)


@pytest.fixture(scope="module")
def weights(small_grid, small_basis):
    return train_eqp(small_grid, 2, small_basis, TRAIN3)


def test_training_rows_sum_to_patch_residual(rom_space):
    betas = rom_coordinates(rom_space, TRAIN3)
    for pid in range(rom_space.grid.n_patches):
        data = build_training_data(rom_space, pid, TRAIN3, betas)
        assert data.residuals.shape == (3, 9, 3)
        for q, mu in enumerate(TRAIN3):
            exact = assemble_residual(rom_space.with_grid(rom_space.grid), (betas[q]), mu).r_gg
            total = sum(build_training_data(rom_space, j, [mu], [betas[q]]).residuals[0].sum(0) for j in range(4))
            assert np.max(np.abs(total - exact)) < 1e-13 * max(1, np.max(np.abs(exact)))


def test_one_mode_one_parameter_shape(small_snapshots, small_grid):
    basis = pod(small_snapshots[:1], 1)
    space = pure_rom_space(small_grid, 2, basis)
    data = build_training_data(space, 0, TRAIN3[:1])
    assert data.residuals.shape == (1, 9, 1)


def test_empty_training_set(rom_space):
    with pytest.raises(InvalidArgumentError):
        build_training_data(rom_space, 0, [])


def test_unit_weights_feasible_and_objective_bound(rom_space):
    for pid in range(4):
        data = build_training_data(rom_space, pid, TRAIN3)
        assert constraint_violation(data, np.ones(data.n_cells), 0.0, 0.0) <= 1e-15
        w = train_patch_weights(data)
        assert w.rho.sum() <= data.n_cells + 1e-12


def test_constraints_hold_and_vertex_bound(rom_space, weights):
    for pid, w in weights.items():
        data = build_training_data(rom_space, pid, TRAIN3)
        assert np.all(w.rho >= 0)
        assert constraint_violation(data, w.rho, DELTA, DELTA) <= 1e-12
        _, A, _ = _lp(data, DELTA, DELTA)
        # one slack of each two-sided pair stays basic, so a vertex uses at most one cell per pair
        assert w.n_nonzero <= A.shape[0] // 2


def test_vertex_support_single_mode(small_snapshots):
    from cgglrom.mesh import Domain, build_patch_grid

    grid = build_patch_grid(Domain((0, 0), (8, 8)), 4, 4, (6, 6))
    basis = pod(small_snapshots[:1], 1)
    space = pure_rom_space(grid, 2, basis)
    data = build_training_data(space, 5, TRAIN3[:1])
    w = train_patch_weights(data)
    assert data.n_cells == 36
    assert w.n_nonzero <= 2  # one volume pair and one residual pair


def test_deterministic(rom_space):
    data = build_training_data(rom_space, 2, TRAIN3)
    assert np.array_equal(train_patch_weights(data).rho, train_patch_weights(data).rho)


def test_negative_tolerance(rom_space):
    with pytest.raises(InvalidArgumentError):
        train_patch_weights(build_training_data(rom_space, 0, TRAIN3), -1.0)


def test_volume_only_data():
    data = EqpTrainingData(0, (), np.ones(4), np.zeros((0, 4, 0)))
    w = train_patch_weights(data)
    assert w.rho.sum() == pytest.approx(4) and w.n_nonzero == 1


def test_non_finite_data_rejected():
    with pytest.raises(InvalidArgumentError):
        train_patch_weights(EqpTrainingData(0, (), np.ones(4), np.full((1, 4, 1), np.nan)))


def test_postcheck_catches_bad_vertex(rom_space, monkeypatch):
    import cgglrom.eqp as eqp_mod
    from cgglrom.simplex import LPResult

    monkeypatch.setattr(eqp_mod, "linprog_bland", lambda c, A, b: LPResult(np.full(c.size, 2.0), 0.0, (), 0))
    with pytest.raises(InfeasibleError):
        train_patch_weights(build_training_data(rom_space, 0, TRAIN3))


def test_hyperreduced_matches_exact_on_training_set(rom_space, weights):
    betas = rom_coordinates(rom_space, TRAIN3)
    for b, mu in zip(betas, TRAIN3):
        exact = assemble_residual(rom_space, b, mu).r_gg
        hyper = hyperreduced_gg(rom_space, b, mu, weights)
        assert np.max(np.abs(hyper - exact)) <= 4 * DELTA  # one delta per patch


def test_uniform_weights_equal_exact(rom_space):
    ones = {pid: EqpWeights(pid, np.ones(9)) for pid in range(4)}
    b = np.array([0.3, -1.0, 2.0])
    mu = TRAIN3[0]
    exact = assemble_residual(rom_space, b, mu).r_gg
    assert np.max(np.abs(hyperreduced_gg(rom_space, b, mu, ones) - exact)) <= 1e-14 * np.max(np.abs(exact))


def test_missing_weights_is_configuration_error(rom_space, weights):
    partial = {pid: w for pid, w in weights.items() if pid != 1}
    with pytest.raises(ConfigurationError):
        assemble_residual(rom_space, np.zeros(3), TRAIN3[0], partial)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=5))
def test_no_retraining_invariance(seq):
    space, weights = _invariance_setup()
    b = np.array([0.2, -0.4, 1.1])
    mu = TRAIN3[1]
    before = {pid: hyperreduced_gg_patch(space, b, mu, pid, weights) for pid in space.grid.global_set}
    snapshot = {pid: weights[pid].rho.copy() for pid in weights}
    for pid in seq:
        space = refine_step(space, pid)
    for pid in space.grid.global_set:
        assert np.array_equal(weights[pid].rho, snapshot[pid])
        assert np.array_equal(hyperreduced_gg_patch(space, b, mu, pid, weights), before[pid])


def hyperreduced_gg_patch(space, b, mu, pid, weights):
    from cgglrom.cggl import hyperreduced_patch_gg

    return hyperreduced_patch_gg(space, b, mu, pid, weights[pid].rho)


_SETUP = {}


def _invariance_setup():
    if not _SETUP:
        from cgglrom.mesh import Domain, build_patch_grid
        from cgglrom.rom import ReferenceDiscretization, compute_snapshot

        ref = ReferenceDiscretization.uniform(Domain((0, 0), (8, 8)), 24, 2)
        basis = pod([compute_snapshot(mu, ref) for mu in TRAIN3], 3)
        grid = build_patch_grid(Domain((0, 0), (8, 8)), 2, 2, (3, 3))
        _SETUP["v"] = (build_trial_space(grid, 2, basis), train_eqp(grid, 2, basis, TRAIN3))
    return _SETUP["v"]


def test_eqp_jacobian_consistent_with_cells(rom_space, weights):
    b = np.array([1.0, 0.5, -0.2])
    D = assemble_jacobian_blocks(rom_space, np.r_[b], TRAIN3[0], weights).D
    eps = 1e-6
    cols = []
    for m in range(3):
        e = np.eye(3)[m] * eps
        cols.append((assemble_residual(rom_space, b + e, TRAIN3[0], weights).full
                     - assemble_residual(rom_space, b - e, TRAIN3[0], weights).full) / (2 * eps))
    np.testing.assert_allclose(D, np.array(cols).T, rtol=1e-6, atol=1e-10)


def test_cell_rows_linear_order(rom_space):
    from cgglrom.cggl import GeneralizedCoords, patch_residual

    b = np.array([1.0, 0.2, 0.0])
    rows = cell_gg_contributions(rom_space, b, TRAIN3[0], 1)
    modes = patch_residual(rom_space, GeneralizedCoords(np.zeros(0), b), TRAIN3[0], 1).modes
    assert rows.shape == (9, 3)
    for c in range(9):
        np.testing.assert_array_equal(rows[c], modes[:, c % 3, c // 3])
