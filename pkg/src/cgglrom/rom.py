"""Offline stage: reference finite-element snapshots and POD compression."""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .errors import InvalidArgumentError, RankDeficiencyError
from .fem import FeFunction, mass_matrix
from .mesh import Domain, StructuredMesh, build_patch_grid, localize_patch
from .problem import ProblemDef, as_parameter, poisson_problem


@dataclass(frozen=True)
class ReferenceDiscretization:
    """Uniform degree-``p`` mesh on which snapshots and truth solutions live."""

    mesh: StructuredMesh
    p: int = 2

    @classmethod
    def uniform(cls, domain: Domain, n: int, p: int = 2) -> "ReferenceDiscretization":
        return cls(StructuredMesh(domain, n, n), p)

    @cached_property
    def space(self):
        """The pure-FEM limit trial space: one local patch covering the mesh, no modes."""
        from .cggl import build_trial_space

        grid = build_patch_grid(self.mesh.domain, 1, 1, (self.mesh.nx, self.mesh.ny))
        grid = localize_patch(grid, 0)
        return build_trial_space(grid, self.p)

    def nodal_grid(self, alpha: np.ndarray) -> np.ndarray:
        """Full nodal array (boundary zeros included) from free coefficients."""
        sp_ = self.space
        return (sp_.local_view.patch_maps[0] @ alpha).reshape(self.p * self.mesh.nx + 1, self.p * self.mesh.ny + 1)


@dataclass(frozen=True, eq=False)
class GlobalBasis:
    """``k`` globally supported modes stored as nodal arrays on a reference mesh."""

    mesh: StructuredMesh
    p: int
    modes: np.ndarray  # (k, p*nx+1, p*ny+1)
    singular_values: np.ndarray

    def __post_init__(self):
        self.modes.setflags(write=False)

    @property
    def k(self) -> int:
        return self.modes.shape[0]

    @property
    def functions(self) -> list[FeFunction]:
        return [FeFunction(self.mesh, self.p, m) for m in self.modes]

    def truncate(self, k: int) -> "GlobalBasis":
        if not 0 <= k <= self.k:
            raise InvalidArgumentError(f"cannot truncate a {self.k}-mode basis to {k}")
        return GlobalBasis(self.mesh, self.p, self.modes[:k].copy(), self.singular_values[:k].copy())


def compute_snapshot(mu, ref: ReferenceDiscretization, problem: ProblemDef | None = None) -> FeFunction:
    """Solve the full finite-element problem on the reference mesh."""
    from .cggl import solve_primal

    mu = as_parameter(mu)
    space = ref.space if problem is None else replace(ref.space, problem=problem)
    U = solve_primal(space, mu)
    return FeFunction(ref.mesh, ref.p, ref.nodal_grid(U.alpha))


def pod(snapshots, k: int, rank_tol: float = 1e-10) -> GlobalBasis:
    """Leading ``k`` L2-orthonormal POD modes of ``snapshots`` (method of snapshots).

    The correlation matrix uses the consistent mass matrix, so modes are
    orthonormal in L2 of the domain. Each mode is signed so that its entry of
    largest magnitude is positive.
    """
    snapshots = list(snapshots)
    if not snapshots:
        raise InvalidArgumentError("no snapshots")
    if not 1 <= k <= len(snapshots):
        raise InvalidArgumentError(f"k={k} must lie in [1, {len(snapshots)}]")
    first = snapshots[0]
    if any(not s.same_space(first) for s in snapshots):
        raise InvalidArgumentError("snapshots live on different meshes")
    S = np.array([s.coefficients.ravel() for s in snapshots]).T  # (N, n)
    M = mass_matrix(first.mesh, first.p)
    MS = M @ S
    corr = S.T @ MS
    lam, V = sla.eigh(corr)
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    lam = np.clip(lam, 0.0, None)
    sv = np.sqrt(lam)
    rank = int(np.sum(sv > rank_tol * sv[0])) if sv[0] > 0 else 0
    if k > rank:
        raise RankDeficiencyError(f"requested {k} modes but snapshot set has numerical rank {rank}", rank)
    modes = S @ V[:, :k] / sv[:k]
    # re-orthonormalize in the mass inner product to clean up round-off
    G = modes.T @ (M @ modes)
    L = np.linalg.cholesky(G)
    modes = np.linalg.solve(L, modes.T).T
    for j in range(k):
        if modes[np.argmax(np.abs(modes[:, j])), j] < 0:
            modes[:, j] *= -1
    shape = first.coefficients.shape
    return GlobalBasis(first.mesh, first.p, modes.T.reshape((k,) + shape).copy(), sv[:k].copy())
