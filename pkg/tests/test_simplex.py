import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from cgglrom.errors import InfeasibleError, SolverError
from cgglrom.simplex import linprog_bland


def test_textbook_lp():
    # max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), value 36
    res = linprog_bland([-3, -5], [[1, 0], [0, 2], [3, 2]], [4, 12, 18])
    np.testing.assert_allclose(res.x, [2, 6], atol=1e-12)
    assert res.objective == pytest.approx(-36)


def test_equality_band_needs_phase_one():
    # 1 <= x + y <= 1 + 1e-8, minimize x + 2y
    res = linprog_bland([1, 2], [[1, 1], [-1, -1]], [1 + 1e-8, -1 + 1e-8])
    assert res.x[1] == 0 and res.x[0] == pytest.approx(1 - 1e-8, abs=1e-15)


def test_infeasible():
    with pytest.raises(InfeasibleError):
        linprog_bland([1, 1], [[1, 1], [-1, -1]], [1, -2])


def test_unbounded():
    with pytest.raises(SolverError):
        linprog_bland([-1, 0], [[0, 1]], [1])


@given(st.integers(0, 100_000), st.integers(2, 12), st.integers(1, 8))
def test_matches_highs_objective(seed, n, m):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, n))
    x0 = rng.uniform(0, 2, n)  # feasible point
    b = A @ x0 + rng.uniform(0, 1, m)
    A = np.vstack([A, np.ones((1, n))])
    b = np.append(b, x0.sum() + 1)  # bounded feasible set
    c = rng.standard_normal(n)
    ours = linprog_bland(c, A, b)
    ref = linprog(c, A_ub=A, b_ub=b, bounds=(0, None), method="highs")
    assert ref.status == 0
    assert ours.objective == pytest.approx(ref.fun, abs=1e-8 * (1 + abs(ref.fun)))
    assert np.all(A @ ours.x <= b + 1e-9) and np.all(ours.x >= 0)
    # a vertex has at most m+1 nonzeros
    assert np.count_nonzero(ours.x > 1e-12) <= A.shape[0]


def test_deterministic():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((6, 20))
    b = A @ np.ones(20) + 0.1
    r1 = linprog_bland(np.ones(20), np.vstack([A, -A]), np.concatenate([b, -b + 0.2]))
    r2 = linprog_bland(np.ones(20), np.vstack([A, -A]), np.concatenate([b, -b + 0.2]))
    assert np.array_equal(r1.x, r2.x) and r1.basis == r2.basis
