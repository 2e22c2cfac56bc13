import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cgglrom.mesh import Domain, build_patch_grid
from cgglrom.problem import poisson_problem
from cgglrom.rom import ReferenceDiscretization, compute_snapshot, pod

settings.register_profile("ci", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

OMEGA = Domain((0.0, 0.0), (8.0, 8.0))
TRAIN3 = [(1.0, 1.0, 2.0, 6.0), (1.0, 1.0, 6.0, 2.0), (1.0, 1.0, 6.0, 6.0)]


def manufactured_problem():
    """``u = sin(pi x/8) sin(pi y/8)``, so the source is ``-2 (pi/8)^2 u``."""
    w = np.pi / 8.0

    def exact(x):
        return np.sin(w * x[..., 0]) * np.sin(w * x[..., 1])

    def source(x, u, g, mu):
        return -2.0 * w**2 * exact(x)

    return dataclasses.replace(poisson_problem(), name="manufactured", source=source), exact


@pytest.fixture(scope="session")
def omega():
    return OMEGA


@pytest.fixture(scope="session")
def small_ref():
    return ReferenceDiscretization.uniform(OMEGA, 24, 2)


@pytest.fixture(scope="session")
def small_snapshots(small_ref):
    return [compute_snapshot(mu, small_ref) for mu in TRAIN3]


@pytest.fixture(scope="session")
def small_basis(small_snapshots):
    return pod(small_snapshots, 3)


@pytest.fixture(scope="session")
def small_grid():
    return build_patch_grid(OMEGA, 2, 2, (3, 3))


# one line per acceptance criterion, appended by test_acceptance and echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0])):
            terminalreporter.write_line(line)
