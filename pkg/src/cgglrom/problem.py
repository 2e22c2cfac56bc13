"""Parametrized scalar conservation laws and their quantities of interest.

A problem supplies pointwise flux and source callbacks together with their
linearizations so that the assembler can build exact Jacobians. Every
callback receives the physical coordinates explicitly because the Poisson
source depends on ``x``.

Residual convention for a test function ``w``::

    r(u, w) = -int grad(w) . F(u, grad u) dV - int w s(x, u, grad u) dV

The boundary flux term is dropped: all test functions vanish on the
(purely essential) boundary.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidArgumentError
from .mesh import Domain

PARAMETER_BOUNDS = ((1.0, 10.0), (0.1, 10.0))


class Parameter(NamedTuple):
    """Source magnitude, width and centre of the Poisson benchmark."""

    a: float
    sigma: float
    c1: float
    c2: float

    def validate(self, domain: Domain | None = None, strict: bool = True) -> "Parameter":
        if self.sigma <= 0:
            raise InvalidArgumentError(f"sigma must be positive, got {self.sigma}")
        if strict:
            (alo, ahi), (slo, shi) = PARAMETER_BOUNDS
            if not (alo <= self.a <= ahi and slo <= self.sigma <= shi):
                raise InvalidArgumentError(f"parameter {tuple(self)} outside [1,10]x[0.1,10]")
        if domain is not None and not domain.contains(np.array([self.c1, self.c2]))[0]:
            raise InvalidArgumentError(f"source centre ({self.c1}, {self.c2}) outside {domain}")
        return self


def as_parameter(mu) -> Parameter:
    return mu if isinstance(mu, Parameter) else Parameter(*(float(v) for v in mu))


def poisson_source(x, mu) -> np.ndarray:
    """Gaussian bump ``a*exp(-|x-c|^2/sigma^2)``; ``x`` has trailing dimension 2."""
    mu = as_parameter(mu)
    x = np.asarray(x, dtype=float)
    r2 = (x[..., 0] - mu.c1) ** 2 + (x[..., 1] - mu.c2) ** 2
    return mu.a * np.exp(-r2 / mu.sigma**2)


def poisson_weak_kernel(u, grad_u, w, grad_w, x, mu):
    """Pointwise residual integrand ``-grad w . grad u - w s(x; mu)``."""
    grad_u = np.asarray(grad_u, dtype=float)
    grad_w = np.asarray(grad_w, dtype=float)
    return -np.sum(grad_w * grad_u, axis=-1) - np.asarray(w) * poisson_source(x, mu)


def qoi_integrand(x, u, mu):
    """Solution weighted by the source kernel."""
    return np.asarray(u) * poisson_source(x, mu)


class Linearization(NamedTuple):
    """Pointwise partial derivatives; arrays broadcast against the point grid."""

    dflux_du: np.ndarray  # (..., 2)
    dflux_dgrad: np.ndarray  # (..., 2, 2)
    dsource_du: np.ndarray  # (...)
    dsource_dgrad: np.ndarray  # (..., 2)


@dataclass(frozen=True)
class ProblemDef:
    """Scalar second-order problem ``div F(u, grad u) = s(x, u, grad u)``.

    ``flux(x, u, g, mu)`` returns ``(..., 2)``; ``source`` returns ``(...)``.
    ``qoi_volume`` returns the QoI integrand and ``qoi_volume_linearization``
    its partials with respect to ``u`` and ``grad u``.
    """

    name: str
    flux: Callable
    source: Callable
    linearize: Callable
    qoi_volume: Callable
    qoi_volume_linearization: Callable
    linear: bool = False
    qoi_boundary: Callable | None = None
    lift: Callable | None = None


def _poisson_flux(x, u, g, mu):
    return g


def _poisson_source(x, u, g, mu):
    return poisson_source(x, mu)


def _poisson_linearize(x, u, g, mu):
    shape = np.shape(u)
    eye = np.broadcast_to(np.eye(2), shape + (2, 2))
    return Linearization(np.zeros(shape + (2,)), eye, np.zeros(shape), np.zeros(shape + (2,)))


def _poisson_qoi(x, u, g, mu):
    return qoi_integrand(x, u, mu)


def _poisson_qoi_lin(x, u, g, mu):
    return poisson_source(x, mu) * np.ones(np.shape(u)), np.zeros(np.shape(u) + (2,))


def poisson_problem() -> ProblemDef:
    """Laplace(u) = f on the domain with u = 0 on its boundary; QoI = int u f."""
    return ProblemDef(
        name="poisson",
        flux=_poisson_flux,
        source=_poisson_source,
        linearize=_poisson_linearize,
        qoi_volume=_poisson_qoi,
        qoi_volume_linearization=_poisson_qoi_lin,
        linear=True,
    )
