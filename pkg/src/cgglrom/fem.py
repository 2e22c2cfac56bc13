"""Reference-element machinery: tensor Lagrange bases, Gauss rules, FE functions.

Nodal values of a degree-``p`` function on a structured ``nx`` by ``ny`` mesh are
kept as a 2-D array of shape ``(p*nx + 1, p*ny + 1)`` indexed ``[ix, iy]``;
flattening uses C order so that ``kron(Ax, Ay)`` acts on the flattened array.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError
from .mesh import StructuredMesh, locate_1d


@lru_cache(maxsize=None)
def lagrange_nodes(p: int) -> np.ndarray:
    return np.linspace(-1.0, 1.0, p + 1)


def lagrange_1d(p: int, xi):
    """Values and derivatives of the equispaced 1-D Lagrange basis on [-1, 1].

    Returns two arrays of shape ``xi.shape + (p+1,)``.
    """
    xi = np.asarray(xi, dtype=float)
    nodes = lagrange_nodes(p)
    vals = np.ones(xi.shape + (p + 1,))
    ders = np.zeros(xi.shape + (p + 1,))
    for i in range(p + 1):
        others = [j for j in range(p + 1) if j != i]
        denom = np.prod([nodes[i] - nodes[j] for j in others])
        factors = [xi - nodes[j] for j in others]
        vals[..., i] = np.prod(factors, axis=0) / denom if others else 1.0
        for skip in range(len(others)):
            term = np.ones_like(xi)
            for m, f in enumerate(factors):
                if m != skip:
                    term = term * f
            ders[..., i] += term / denom
    return vals, ders


@dataclass(frozen=True)
class ReferenceElement:
    p: int

    @property
    def nodes(self) -> np.ndarray:
        """Tensor nodes, x index fastest: node ``s + (p+1)*t`` sits at (xi_s, xi_t)."""
        n = lagrange_nodes(self.p)
        xx, yy = np.meshgrid(n, n, indexing="xy")
        return np.column_stack([xx.ravel(), yy.ravel()])


def shape_eval(p: int, xi):
    """Tensor Lagrange shape values ``((p+1)**2,)`` and gradients ``((p+1)**2, 2)`` at ``xi``."""
    if p < 1:
        raise InvalidArgumentError("degree must be >= 1")
    lx, dx = lagrange_1d(p, xi[0])
    ly, dy = lagrange_1d(p, xi[1])
    values = np.outer(ly, lx).ravel()
    grads = np.column_stack([np.outer(ly, dx).ravel(), np.outer(dy, lx).ravel()])
    return values, grads


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray


@lru_cache(maxsize=None)
def gauss_1d(n: int):
    if not 1 <= n <= 20:
        raise InvalidArgumentError(f"Gauss rule with {n} points not supported")
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_rule(n: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule on [-1, 1]^2 with ``n`` points per direction."""
    if not 1 <= n <= 10:
        raise InvalidArgumentError(f"points per direction must lie in [1, 10], got {n}")
    x, w = gauss_1d(n)
    xx, yy = np.meshgrid(x, x, indexing="xy")
    return QuadratureRule(np.column_stack([xx.ravel(), yy.ravel()]), np.outer(w, w).ravel())


@dataclass(frozen=True, eq=False)
class FeFunction:
    """Continuous degree-``p`` function on a structured mesh, stored by nodal values."""

    mesh: StructuredMesh
    p: int
    coefficients: np.ndarray

    def __post_init__(self):
        shape = (self.p * self.mesh.nx + 1, self.p * self.mesh.ny + 1)
        if self.coefficients.shape != shape:
            raise InvalidArgumentError(f"coefficients must have shape {shape}, got {self.coefficients.shape}")

    def same_space(self, other: "FeFunction") -> bool:
        return self.p == other.p and self.mesh == other.mesh

    def __call__(self, x):
        return fe_eval(self, x)[0]


def node_coordinates(mesh: StructuredMesh, p: int):
    """1-D nodal coordinates in x and y for a degree-``p`` space."""
    xs = np.linspace(mesh.domain.lo[0], mesh.domain.hi[0], p * mesh.nx + 1)
    ys = np.linspace(mesh.domain.lo[1], mesh.domain.hi[1], p * mesh.ny + 1)
    return xs, ys


def interpolate(mesh: StructuredMesh, p: int, g) -> FeFunction:
    """Nodal interpolant of ``g(x1, x2)`` (vectorized callable)."""
    xs, ys = node_coordinates(mesh, p)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return FeFunction(mesh, p, np.asarray(g(X, Y), dtype=float) * np.ones_like(X))


def interpolation_matrix_1d(lo: float, h: float, n_cells: int, p: int, x, derivative: bool = False):
    """Sparse matrix mapping 1-D nodal values to values (or d/dx) at points ``x``."""
    x = np.asarray(x, dtype=float).ravel()
    cell, xi = locate_1d(x, lo, h, n_cells)
    vals, ders = lagrange_1d(p, xi)
    data = ders * (2.0 / h) if derivative else vals
    rows = np.repeat(np.arange(x.size), p + 1)
    cols = (cell[:, None] * p + np.arange(p + 1)[None, :]).ravel()
    return sp.csr_matrix((data.ravel(), (rows, cols)), shape=(x.size, p * n_cells + 1))


def evaluate_tensor(fn: FeFunction, xs, ys):
    """Values and gradients of ``fn`` on the tensor grid ``xs`` x ``ys``.

    Returns ``(value, d/dx1, d/dx2)`` each of shape ``(len(xs), len(ys))``.
    """
    m = fn.mesh
    Ex = interpolation_matrix_1d(m.domain.lo[0], m.hx, m.nx, fn.p, xs)
    Ey = interpolation_matrix_1d(m.domain.lo[1], m.hy, m.ny, fn.p, ys)
    Dx = interpolation_matrix_1d(m.domain.lo[0], m.hx, m.nx, fn.p, xs, derivative=True)
    Dy = interpolation_matrix_1d(m.domain.lo[1], m.hy, m.ny, fn.p, ys, derivative=True)
    C = fn.coefficients
    return (Ex @ (Ey @ C.T).T, Dx @ (Ey @ C.T).T, Ex @ (Dy @ C.T).T)


def fe_eval(fn: FeFunction, x):
    """Value and gradient of ``fn`` at one point or an ``(n, 2)`` array of points."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    cell, xi = fn.mesh.locate(pts)
    ix, iy = cell % fn.mesh.nx, cell // fn.mesh.nx
    p = fn.p
    lx, dx = lagrange_1d(p, xi[:, 0])
    ly, dy = lagrange_1d(p, xi[:, 1])
    si = ix[:, None] * p + np.arange(p + 1)[None, :]
    ti = iy[:, None] * p + np.arange(p + 1)[None, :]
    local = fn.coefficients[si[:, :, None], ti[:, None, :]]
    value = np.einsum("ns,nt,nst->n", lx, ly, local)
    gx = np.einsum("ns,nt,nst->n", dx, ly, local) * (2.0 / fn.mesh.hx)
    gy = np.einsum("ns,nt,nst->n", lx, dy, local) * (2.0 / fn.mesh.hy)
    grad = np.column_stack([gx, gy])
    if np.ndim(x) == 1:
        return value[0], grad[0]
    return value, grad


def mass_matrix_1d(n_cells: int, h: float, p: int) -> sp.csr_matrix:
    xg, wg = gauss_1d(p + 1)
    vals, _ = lagrange_1d(p, xg)
    local = (vals.T * wg) @ vals * (h / 2.0)
    size = p * n_cells + 1
    M = sp.lil_matrix((size, size))
    for c in range(n_cells):
        idx = slice(c * p, c * p + p + 1)
        M[idx, idx] = M[idx, idx].toarray() + local
    return M.tocsr()


def mass_matrix(mesh: StructuredMesh, p: int) -> sp.csr_matrix:
    """Consistent L2 mass matrix for the C-order flattened nodal grid."""
    return sp.kron(mass_matrix_1d(mesh.nx, mesh.hx, p), mass_matrix_1d(mesh.ny, mesh.hy, p), format="csr")


def l2_inner(a: FeFunction, b: FeFunction) -> float:
    """Integral of ``a*b`` over the mesh, exact for the degree-2p integrand."""
    if not a.same_space(b):
        raise InvalidArgumentError("l2_inner requires functions on the same mesh and degree")
    Mx = mass_matrix_1d(a.mesh.nx, a.mesh.hx, a.p)
    My = mass_matrix_1d(a.mesh.ny, a.mesh.hy, a.p)
    return float(np.sum(a.coefficients * (Mx @ (My @ b.coefficients.T).T)))
