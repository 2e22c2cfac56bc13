import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgglrom.cggl import assemble_residual, build_trial_space
from cgglrom.errors import InvalidArgumentError
from cgglrom.fem import interpolate
from cgglrom.mesh import Domain, build_patch_grid, localize_patch
from cgglrom.problem import Parameter, poisson_source, poisson_weak_kernel, qoi_integrand

from conftest import manufactured_problem

OMEGA = Domain((0.0, 0.0), (8.0, 8.0))


def test_source_peak_and_decay():
    mu = (1, 1, 4, 4)
    assert poisson_source(np.array([4.0, 4.0]), mu) == pytest.approx(1.0)
    assert poisson_source(np.array([5.0, 4.0]), (2, 1, 4, 4)) == pytest.approx(2 * np.exp(-1))
    assert poisson_source(np.array([5.0, 4.0]), (1, 0.1, 4, 4)) == pytest.approx(np.exp(-100))


def test_kernel_examples():
    x = np.zeros(2)
    assert poisson_weak_kernel(1.0, [1.0, 2.0], 0.0, [0.0, 0.0], x, (1, 1, 100, 100)) == pytest.approx(0, abs=1e-300)
    g = np.array([0.3, -1.2])
    assert poisson_weak_kernel(1.0, g, 1.0, g, np.array([50.0, 50.0]), (1, 1, 0, 0)) == pytest.approx(-g @ g)


def test_qoi_integrand():
    x = np.array([[4.0, 4.0], [1.0, 2.0]])
    mu = (3, 1, 4, 4)
    np.testing.assert_array_equal(qoi_integrand(x, 0.0, mu), 0.0)
    np.testing.assert_allclose(qoi_integrand(x, 2.0, mu), 2 * qoi_integrand(x, 1.0, mu))


def test_gaussian_mass_oracle():
    # int exp(-|x-c|^2/s^2) over R^2 = pi s^2; a fine midpoint sum is the oracle
    s = 0.3
    t = (np.arange(4000) + 0.5) * 8 / 4000
    X, Y = np.meshgrid(t, t, indexing="ij")
    total = qoi_integrand(np.stack([X, Y], -1), 1.0, (1, s, 4, 4)).sum() * (8 / 4000) ** 2
    assert total == pytest.approx(np.pi * s**2, rel=1e-8)


def test_parameter_validation():
    with pytest.raises(InvalidArgumentError):
        Parameter(1, 0, 4, 4).validate()
    with pytest.raises(InvalidArgumentError):
        Parameter(11, 1, 4, 4).validate()
    with pytest.raises(InvalidArgumentError):
        Parameter(1, 1, 9, 4).validate(OMEGA)
    Parameter(1, 1, 8, 0).validate(OMEGA)


def _fem_space(n, problem=None):
    g = localize_patch(build_patch_grid(OMEGA, 1, 1, (n, n)), 0)
    return build_trial_space(g, 2, problem=problem)


def test_manufactured_residual_consistency():
    prob, exact = manufactured_problem()
    res = []
    for n in (4, 8, 16):
        space = _fem_space(n, prob)
        fn = interpolate(space.grid.patch(0).mesh, 2, lambda x, y: exact(np.stack([x, y], -1)))
        alpha = fn.coefficients[1:-1, 1:-1].T.ravel()  # free nodes, x fastest
        r = assemble_residual(space, alpha, (1, 1, 4, 4)).r_ll
        res.append(np.max(np.abs(r)))
    # interpolation consistency: residual of the interpolant decays at least like h^3
    assert res[1] < res[0] / 6 and res[2] < res[1] / 6


@given(st.integers(0, 1000))
def test_residual_affine_in_state(seed):
    space = _fem_space(3)
    rng = np.random.default_rng(seed)
    u1, u2 = rng.standard_normal((2, space.dim))
    mu = (2, 0.7, 3, 5)

    def r(u):
        return assemble_residual(space, u, mu).full

    r0 = r(np.zeros(space.dim))
    lhs = r(u1 + u2) - r0
    rhs = (r(u1) - r0) + (r(u2) - r0)
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * (1 + np.max(np.abs(lhs)))
