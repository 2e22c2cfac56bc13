"""Composite tensor quadrature on patch cells.

Integrands containing a global mode are only piecewise polynomial on a patch
cell (the modes live on a separate reference mesh), so each cell is split at
the reference grid lines and every piece gets its own Gauss rule. The split
is done per axis, which keeps the 2-D rule a tensor product. Cells in one
patch are padded to a common number of points per axis with zero-weight
points so the whole patch is a regular ``(ncx, mx, ncy, my)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fem import gauss_1d, interpolation_matrix_1d, lagrange_1d
from .mesh import Domain

_SNAP = 1e-9


def composite_rule_1d(x0: float, h: float, n_cells: int, n: int, ref=None):
    """Per-cell Gauss points split at reference grid lines.

    ``ref`` is ``(lo, H)`` of the reference grid or ``None``. Returns
    physical points, weights and local cell coordinates, each ``(n_cells, m)``.
    """
    xg, wg = gauss_1d(n)
    pieces = []
    for c in range(n_cells):
        a, b = x0 + c * h, x0 + (c + 1) * h
        cuts = [a]
        if ref is not None:
            lo, H = ref
            k0 = int(np.floor((a - lo) / H + _SNAP)) + 1
            k1 = int(np.ceil((b - lo) / H - _SNAP)) - 1
            cuts.extend(lo + k * H for k in range(k0, k1 + 1))
        cuts.append(b)
        pts, wts = [], []
        for s, e in zip(cuts[:-1], cuts[1:]):
            pts.append(0.5 * (s + e) + 0.5 * (e - s) * xg)
            wts.append(0.5 * (e - s) * wg)
        pieces.append((np.concatenate(pts), np.concatenate(wts)))
    m = max(p.size for p, _ in pieces)
    X = np.empty((n_cells, m))
    W = np.zeros((n_cells, m))
    for c, (p, w) in enumerate(pieces):
        X[c, : p.size] = p
        X[c, p.size :] = x0 + (c + 0.5) * h
        W[c, : p.size] = w
    XI = 2.0 * (X - (x0 + np.arange(n_cells)[:, None] * h)) / h - 1.0
    return X, W, XI


@dataclass(frozen=True, eq=False)
class AxisRule:
    x: np.ndarray  # (nc, m) physical points
    w: np.ndarray  # (nc, m) weights
    val: np.ndarray  # (nc, m, p+1) shape values
    der: np.ndarray  # (nc, m, p+1) physical derivatives


@dataclass(frozen=True, eq=False)
class PatchQuadrature:
    """Points, weights, shape tables and global-mode values over one patch."""

    ax: AxisRule
    ay: AxisRule
    weight: np.ndarray  # (ncx, mx, ncy, my)
    points: np.ndarray  # (ncx, mx, ncy, my, 2)
    psi: np.ndarray  # (k, ncx, mx, ncy, my)
    psi_x: np.ndarray
    psi_y: np.ndarray

    @property
    def shape(self):
        return self.weight.shape


def _axis(x0, h, nc, p, n, ref):
    X, W, XI = composite_rule_1d(x0, h, nc, n, ref)
    val, der = lagrange_1d(p, XI)
    return AxisRule(X, W, val, der * (2.0 / h))


@lru_cache(maxsize=512)
def patch_quadrature(bounds: Domain, ncx: int, ncy: int, p: int, n: int, basis=None) -> PatchQuadrature:
    """Quadrature over a uniform ``ncx`` by ``ncy`` patch mesh.

    When ``basis`` is given the rule is split at its mesh lines and the mode
    values and gradients are tabulated at every point.
    """
    hx = (bounds.hi[0] - bounds.lo[0]) / ncx
    hy = (bounds.hi[1] - bounds.lo[1]) / ncy
    refx = refy = None
    if basis is not None and basis.k > 0:
        rm = basis.mesh
        refx, refy = (rm.domain.lo[0], rm.hx), (rm.domain.lo[1], rm.hy)
    ax = _axis(bounds.lo[0], hx, ncx, p, n, refx)
    ay = _axis(bounds.lo[1], hy, ncy, p, n, refy)
    weight = ax.w[:, :, None, None] * ay.w[None, None, :, :]
    shape = weight.shape
    points = np.empty(shape + (2,))
    points[..., 0] = ax.x[:, :, None, None]
    points[..., 1] = ay.x[None, None, :, :]
    if basis is not None and basis.k > 0:
        psi, psi_x, psi_y = tabulate_modes(basis, ax.x.ravel(), ay.x.ravel())
        psi = psi.reshape((-1,) + shape)
        psi_x = psi_x.reshape((-1,) + shape)
        psi_y = psi_y.reshape((-1,) + shape)
    else:
        psi = psi_x = psi_y = np.zeros((0,) + shape)
    for arr in (weight, points, psi, psi_x, psi_y):
        arr.setflags(write=False)
    return PatchQuadrature(ax, ay, weight, points, psi, psi_x, psi_y)


def tabulate_modes(basis, xs, ys):
    """Mode values and gradients on the tensor grid ``xs`` x ``ys``: ``(k, len(xs), len(ys))`` each."""
    rm = basis.mesh
    Ex = interpolation_matrix_1d(rm.domain.lo[0], rm.hx, rm.nx, basis.p, xs)
    Dx = interpolation_matrix_1d(rm.domain.lo[0], rm.hx, rm.nx, basis.p, xs, derivative=True)
    Ey = interpolation_matrix_1d(rm.domain.lo[1], rm.hy, rm.ny, basis.p, ys)
    Dy = interpolation_matrix_1d(rm.domain.lo[1], rm.hy, rm.ny, basis.p, ys, derivative=True)
    vals, gx, gy = [], [], []
    for C in basis.modes:
        CEy = (Ey @ C.T).T
        vals.append(Ex @ CEy)
        gx.append(Dx @ CEy)
        gy.append(Ex @ (Dy @ C.T).T)
    return np.array(vals), np.array(gx), np.array(gy)
