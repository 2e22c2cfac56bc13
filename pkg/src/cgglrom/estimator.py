"""scikit-learn style front end: a POD transformer and a parameter-to-QoI regressor."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cggl import build_trial_space, reconstruct
from .dwr_adapt import adaptive_solve
from .eqp import DEFAULT_TOL, train_eqp
from .errors import InvalidArgumentError
from .fem import FeFunction, mass_matrix
from .mesh import Domain, build_patch_grid
from .problem import Parameter
from .rom import ReferenceDiscretization, compute_snapshot, pod


def check_parameters(X, domain: Domain | None = None, strict: bool = True) -> list[Parameter]:
    """Validate an ``(n, 4)`` array of ``(a, sigma, c1, c2)`` rows."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != 4:
        raise InvalidArgumentError(f"parameters must have shape (n, 4), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("parameters must be finite")
    return [Parameter(*row).validate(domain, strict) for row in X.tolist()]


def check_snapshots(X) -> list[FeFunction]:
    X = list(X)
    if not X or not all(isinstance(s, FeFunction) for s in X):
        raise InvalidArgumentError("expected a nonempty sequence of FeFunction snapshots")
    return X


class PODTransformer(TransformerMixin, BaseEstimator):
    """L2-orthonormal POD of finite-element snapshots.

    ``transform`` maps snapshots to their modal coefficients (L2 projection);
    ``inverse_transform`` maps coefficients back to nodal arrays.
    """

    def __init__(self, n_modes: int = 3, rank_tol: float = 1e-10):
        self.n_modes = n_modes
        self.rank_tol = rank_tol

    def fit(self, X, y=None):
        X = check_snapshots(X)
        self.basis_ = pod(X, self.n_modes, self.rank_tol)
        self.singular_values_ = self.basis_.singular_values
        self._mass = mass_matrix(self.basis_.mesh, self.basis_.p)
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_snapshots(X)
        M = self.basis_.modes.reshape(self.basis_.k, -1)
        return np.array([M @ (self._mass @ s.coefficients.ravel()) for s in X])

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.basis_.k:
            raise InvalidArgumentError(f"expected {self.basis_.k} coefficients per row, got {X.shape[1]}")
        return np.tensordot(X, self.basis_.modes, axes=1)


class CgglRegressor(RegressorMixin, BaseEstimator):
    """Adaptive CG-GL surrogate mapping source parameters to the QoI.

    ``fit`` computes reference snapshots at the training parameters, their POD
    basis and the patchwise quadrature weights; ``predict`` runs the
    estimate-and-refine loop for each row. ``y`` is accepted for API
    compatibility and ignored.
    """

    def __init__(
        self,
        domain=((0.0, 0.0), (8.0, 8.0)),
        reference_resolution: int = 72,
        patches=(4, 4),
        base_res=(6, 6),
        p: int = 2,
        n_modes: int = 3,
        eqp: bool = True,
        tol_volume: float = DEFAULT_TOL,
        tol_residual: float = DEFAULT_TOL,
        max_iter: int = 12,
        tol: float | None = None,
    ):
        self.domain = domain
        self.reference_resolution = reference_resolution
        self.patches = patches
        self.base_res = base_res
        self.p = p
        self.n_modes = n_modes
        self.eqp = eqp
        self.tol_volume = tol_volume
        self.tol_residual = tol_residual
        self.max_iter = max_iter
        self.tol = tol

    def _domain(self) -> Domain:
        lo, hi = self.domain
        return Domain(tuple(lo), tuple(hi))

    def fit(self, X, y=None):
        dom = self._domain()
        params = check_parameters(X, dom)
        self.reference_ = ReferenceDiscretization.uniform(dom, self.reference_resolution, self.p)
        snaps = [compute_snapshot(mu, self.reference_) for mu in params]
        self.basis_ = pod(snaps, self.n_modes)
        self.grid_ = build_patch_grid(dom, self.patches[0], self.patches[1], self.base_res)
        self.weights_ = (
            train_eqp(self.grid_, self.p, self.basis_, params, self.tol_volume, self.tol_residual) if self.eqp else None
        )
        self.n_features_in_ = 4
        return self

    def solve(self, mu):
        """Full adaptive solve at one parameter: ``(coords, space, history)``."""
        check_is_fitted(self, "basis_")
        (mu,) = check_parameters(mu, self._domain())
        space = build_trial_space(self.grid_, self.p, self.basis_)
        return adaptive_solve(space, mu, self.weights_, self.max_iter, self.tol)

    def predict(self, X):
        check_is_fitted(self, "basis_")
        return np.array([self.solve(mu)[2].records[-1].J for mu in check_parameters(X, self._domain())])

    def predict_field(self, mu, points):
        """Adapted solution at ``points`` for a single parameter."""
        U, space, _ = self.solve(mu)
        return reconstruct(space, U, np.asarray(points, dtype=float))[0]
