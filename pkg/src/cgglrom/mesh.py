"""Rectangular patch decomposition, per-patch quad meshes and local DOF numbering.

All objects here are immutable; refinement and localization return new grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import (
    InvalidArgumentError,
    OutOfDomainError,
    PreconditionError,
    UnsupportedConfigurationError,
)

_DOMAIN_TOL = 1e-10


@dataclass(frozen=True)
class Domain:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if not (self.hi[0] > self.lo[0] and self.hi[1] > self.lo[1]):
            raise InvalidArgumentError(f"degenerate domain {self.lo} -> {self.hi}")

    @property
    def width(self):
        return self.hi[0] - self.lo[0], self.hi[1] - self.lo[1]

    @property
    def area(self) -> float:
        w, h = self.width
        return w * h

    def contains(self, pts, tol: float = _DOMAIN_TOL) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.all((pts >= np.array(self.lo) - tol) & (pts <= np.array(self.hi) + tol), axis=1)


def locate_1d(x, lo: float, h: float, n: int):
    """Cell index and local coordinate in [-1, 1] along one axis.

    A point on an interior cell boundary belongs to the lower-index cell.
    """
    x = np.asarray(x, dtype=float)
    t = (x - lo) / h
    idx = np.clip(np.ceil(t).astype(np.int64) - 1, 0, n - 1)
    xi = 2.0 * (t - idx) - 1.0
    return idx, xi


@dataclass(frozen=True)
class StructuredMesh:
    """Uniform ``nx`` by ``ny`` grid of axis-aligned quadrilaterals over ``domain``.

    Cell ``(i, j)`` has linear index ``i + nx*j``.
    """

    domain: Domain
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise InvalidArgumentError("mesh resolution must be >= 1")

    @property
    def hx(self) -> float:
        return self.domain.width[0] / self.nx

    @property
    def hy(self) -> float:
        return self.domain.width[1] / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_bounds(self, cell: int):
        i, j = cell % self.nx, cell // self.nx
        x0 = self.domain.lo[0] + i * self.hx
        y0 = self.domain.lo[1] + j * self.hy
        return (x0, y0), (x0 + self.hx, y0 + self.hy)

    def cell_map(self, cell, xi):
        """Physical point of local coordinates ``xi`` in ``cell`` (vectorized)."""
        cell = np.asarray(cell)
        xi = np.atleast_2d(xi)
        i, j = cell % self.nx, cell // self.nx
        x = self.domain.lo[0] + (i + 0.5 * (xi[:, 0] + 1.0)) * self.hx
        y = self.domain.lo[1] + (j + 0.5 * (xi[:, 1] + 1.0)) * self.hy
        return np.column_stack([x, y])

    def locate(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        inside = self.domain.contains(pts)
        if not np.all(inside):
            bad = pts[~inside][0]
            raise OutOfDomainError(f"point {tuple(bad)} lies outside {self.domain}")
        ci, xi = locate_1d(pts[:, 0], self.domain.lo[0], self.hx, self.nx)
        cj, eta = locate_1d(pts[:, 1], self.domain.lo[1], self.hy, self.ny)
        return ci + self.nx * cj, np.column_stack([xi, eta])


@dataclass(frozen=True)
class PatchMesh:
    patch_id: int
    bounds: Domain
    base_res: tuple[int, int]
    level: int = 0

    @property
    def ncx(self) -> int:
        return self.base_res[0] * 2**self.level

    @property
    def ncy(self) -> int:
        return self.base_res[1] * 2**self.level

    @property
    def n_cells(self) -> int:
        return self.ncx * self.ncy

    @property
    def mesh(self) -> StructuredMesh:
        return StructuredMesh(self.bounds, self.ncx, self.ncy)

    @property
    def elements(self):
        """Cell bounds ``[(lo, hi), ...]`` in linear cell order."""
        m = self.mesh
        return [m.cell_bounds(c) for c in range(m.n_cells)]

    def cell_volumes(self) -> np.ndarray:
        m = self.mesh
        return np.full(m.n_cells, m.hx * m.hy)


@dataclass(frozen=True)
class PatchGrid:
    """``px`` by ``py`` patches tiling ``domain``; patch ``ix + px*iy``."""

    domain: Domain
    px: int
    py: int
    base_res: tuple[int, int]
    levels: tuple[int, ...]
    global_set: frozenset = field(default_factory=frozenset)

    @property
    def n_patches(self) -> int:
        return self.px * self.py

    @property
    def patch_size(self):
        w, h = self.domain.width
        return w / self.px, h / self.py

    def patch_index(self, pid: int):
        return pid % self.px, pid // self.px

    def patch_bounds(self, pid: int) -> Domain:
        ix, iy = self.patch_index(pid)
        w, h = self.patch_size
        lo = (self.domain.lo[0] + ix * w, self.domain.lo[1] + iy * h)
        hi = (lo[0] + w, lo[1] + h)
        if ix == self.px - 1:
            hi = (self.domain.hi[0], hi[1])
        if iy == self.py - 1:
            hi = (hi[0], self.domain.hi[1])
        return Domain(lo, hi)

    def patch(self, pid: int) -> PatchMesh:
        return PatchMesh(pid, self.patch_bounds(pid), self.base_res, self.levels[pid])

    @property
    def patches(self) -> list[PatchMesh]:
        return [self.patch(i) for i in range(self.n_patches)]

    @property
    def local_patches(self) -> list[int]:
        return [i for i in range(self.n_patches) if i not in self.global_set]

    def is_global(self, pid: int) -> bool:
        return pid in self.global_set

    def neighbors(self, pid: int):
        """Edge-adjacent patches as ``(neighbor id, side)`` with side in {W, E, S, N}."""
        ix, iy = self.patch_index(pid)
        out = []
        if ix > 0:
            out.append((pid - 1, "W"))
        if ix < self.px - 1:
            out.append((pid + 1, "E"))
        if iy > 0:
            out.append((pid - self.px, "S"))
        if iy < self.py - 1:
            out.append((pid + self.px, "N"))
        return out

    def locate_patch(self, pts):
        """Patch containing each point (lower index on shared boundaries)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        inside = self.domain.contains(pts)
        if not np.all(inside):
            bad = pts[~inside][0]
            raise OutOfDomainError(f"point {tuple(bad)} lies outside {self.domain}")
        w, h = self.patch_size
        ix, _ = locate_1d(pts[:, 0], self.domain.lo[0], w, self.px)
        iy, _ = locate_1d(pts[:, 1], self.domain.lo[1], h, self.py)
        return ix + self.px * iy


def build_patch_grid(domain: Domain, px: int, py: int, base_res) -> PatchGrid:
    """Uniform patch grid at level 0 with every patch in the global set."""
    base_res = tuple(int(v) for v in base_res)
    if px < 1 or py < 1 or min(base_res) < 1:
        raise InvalidArgumentError("patch counts and base resolution must be >= 1")
    n = px * py
    return PatchGrid(domain, px, py, base_res, (0,) * n, frozenset(range(n)))


def refine_patch(grid: PatchGrid, patch_id: int) -> PatchGrid:
    """Quadrisect every cell of one local patch."""
    if grid.is_global(patch_id):
        raise PreconditionError(f"patch {patch_id} is global; localize it instead of refining")
    levels = list(grid.levels)
    levels[patch_id] += 1
    return replace(grid, levels=tuple(levels))


def localize_patch(grid: PatchGrid, patch_id: int) -> PatchGrid:
    """Move one patch from the global set to the local region."""
    if not grid.is_global(patch_id):
        raise PreconditionError(f"patch {patch_id} is already local")
    return replace(grid, global_set=grid.global_set - {patch_id})


def locate_point(obj, x):
    """Containing element and local coordinates of a point.

    For a :class:`StructuredMesh` the element is a cell index; for a
    :class:`PatchGrid` it is ``(patch_id, cell index within patch)``.
    """
    x = np.asarray(x, dtype=float)
    if isinstance(obj, PatchGrid):
        pid = int(obj.locate_patch(x)[0])
        cell, xi = obj.patch(pid).mesh.locate(x)
        return (pid, int(cell[0])), xi[0]
    cell, xi = obj.locate(x)
    return int(cell[0]), xi[0]


# --- local DOF numbering -----------------------------------------------------

INTERIOR, ESSENTIAL, INTERFACE = "interior", "essential", "interface"


@dataclass(frozen=True)
class Constraint:
    node: tuple[int, int]
    masters: tuple[tuple[int, int], ...]
    coefficients: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class LocalMeshView:
    """Continuous degree-``p`` numbering over the local patches of ``grid``.

    Nodes are identified by integer keys on a lattice with ``resolution``
    points per base cell, so coincident nodes of different patches agree.
    ``patch_maps[pid]`` maps the C-order flattened nodal grid of local patch
    ``pid`` to the ``n_dofs`` free coefficients (hanging nodes resolved).
    """

    grid: PatchGrid
    p: int
    resolution: int
    dof_keys: tuple
    constraints: tuple
    boundary_class: dict
    patch_maps: dict

    @property
    def n_dofs(self) -> int:
        return len(self.dof_keys)

    @property
    def elements(self):
        return [(pid, c) for pid in self.grid.local_patches for c in range(self.grid.patch(pid).n_cells)]

    @cached_property
    def dof_map(self) -> dict:
        return {k: i for i, k in enumerate(self.dof_keys)}

    def key_coordinates(self, keys) -> np.ndarray:
        keys = np.asarray(keys, dtype=float).reshape(-1, 2)
        w, h = self.grid.patch_size
        sx = w / (self.grid.base_res[0] * self.resolution)
        sy = h / (self.grid.base_res[1] * self.resolution)
        return np.column_stack([self.grid.domain.lo[0] + keys[:, 0] * sx, self.grid.domain.lo[1] + keys[:, 1] * sy])

    def dof_coordinates(self) -> np.ndarray:
        return self.key_coordinates(list(self.dof_keys)) if self.dof_keys else np.zeros((0, 2))


def _patch_keys(grid: PatchGrid, pid: int, p: int, res: int):
    """Lattice keys (gx, gy) of every node of a patch, as two 1-D arrays."""
    ix, iy = grid.patch_index(pid)
    nx, ny = grid.base_res
    level = grid.levels[pid]
    step = res // (p * 2**level)
    gx = ix * nx * res + step * np.arange(p * nx * 2**level + 1)
    gy = iy * ny * res + step * np.arange(p * ny * 2**level + 1)
    return gx, gy, step


def assemble_local_view(grid: PatchGrid, p: int, max_level_jump: int | None = None) -> LocalMeshView:
    """Number the free nodes of the local region and build hanging-node constraints.

    Nodes on the domain boundary (essential) or touching the closure of a
    global patch (interface) are excluded. A node of a finer patch lying on an
    edge shared with a coarser local patch, and not itself a coarse node, is
    constrained to the coarse trace.
    """
    from .fem import lagrange_1d

    if p < 1:
        raise InvalidArgumentError("degree must be >= 1")
    local = grid.local_patches
    nx, ny = grid.base_res
    if max_level_jump is not None:
        for pid in local:
            for nb, _ in grid.neighbors(pid):
                if not grid.is_global(nb) and abs(grid.levels[pid] - grid.levels[nb]) > max_level_jump:
                    raise UnsupportedConfigurationError(
                        f"patches {pid} and {nb} differ by more than {max_level_jump} refinement level(s)"
                    )
    lmax = max((grid.levels[i] for i in local), default=0)
    res = p * 2**lmax
    GX, GY = grid.px * nx * res, grid.py * ny * res

    def in_global_closure(gx, gy):
        hit = np.zeros(gx.shape, dtype=bool)
        for g in grid.global_set:
            ix, iy = grid.patch_index(g)
            hit |= (gx >= ix * nx * res) & (gx <= (ix + 1) * nx * res) & (gy >= iy * ny * res) & (gy <= (iy + 1) * ny * res)
        return hit

    classes: dict = {}
    hanging: dict = {}
    per_patch = {}
    for pid in local:
        gx, gy, step = _patch_keys(grid, pid, p, res)
        KX, KY = np.meshgrid(gx, gy, indexing="ij")
        ess = (KX == 0) | (KX == GX) | (KY == 0) | (KY == GY)
        itf = in_global_closure(KX, KY) & ~ess
        per_patch[pid] = (KX, KY)
        for key, e, f in zip(zip(KX.ravel().tolist(), KY.ravel().tolist()), ess.ravel(), itf.ravel()):
            cls = ESSENTIAL if e else (INTERFACE if f else INTERIOR)
            classes.setdefault(key, cls)
        # hanging nodes towards coarser local neighbours
        for nb, side in grid.neighbors(pid):
            if grid.is_global(nb) or grid.levels[nb] >= grid.levels[pid]:
                continue
            ngx, ngy, nstep = _patch_keys(grid, nb, p, res)
            if side in ("W", "E"):
                edge_x = gx[0] if side == "W" else gx[-1]
                along, coarse_along = gy, ngy
            else:
                edge_x = gy[0] if side == "S" else gy[-1]
                along, coarse_along = gx, ngx
            coarse_cell = nstep * p
            base = coarse_along[0]
            for g in along[1:-1]:
                rel = g - base
                if rel % nstep == 0:
                    continue
                c = min(rel // coarse_cell, (len(coarse_along) - 1) // p - 1)
                t = 2.0 * (rel - c * coarse_cell) / coarse_cell - 1.0
                w, _ = lagrange_1d(p, np.array(t))
                master_along = [base + c * coarse_cell + s * nstep for s in range(p + 1)]
                if side in ("W", "E"):
                    key = (int(edge_x), int(g))
                    masters = tuple((int(edge_x), int(m)) for m in master_along)
                else:
                    key = (int(g), int(edge_x))
                    masters = tuple((int(m), int(edge_x)) for m in master_along)
                hanging[key] = Constraint(key, masters, tuple(float(v) for v in w))

    free = sorted((k for k, c in classes.items() if c == INTERIOR and k not in hanging), key=lambda k: (k[1], k[0]))
    index = {k: i for i, k in enumerate(free)}
    n = len(free)

    patch_maps = {}
    for pid in local:
        KX, KY = per_patch[pid]
        rows, cols, vals = [], [], []
        for r, key in enumerate(zip(KX.ravel().tolist(), KY.ravel().tolist())):
            if key in index:
                rows.append(r)
                cols.append(index[key])
                vals.append(1.0)
            elif key in hanging and classes[key] == INTERIOR:
                con = hanging[key]
                for m, w in zip(con.masters, con.coefficients):
                    if m in index:
                        rows.append(r)
                        cols.append(index[m])
                        vals.append(w)
        patch_maps[pid] = sp.csr_matrix((vals, (rows, cols)), shape=(KX.size, n))
    constraints = tuple(hanging[k] for k in sorted(hanging, key=lambda k: (k[1], k[0])) if classes[k] == INTERIOR)
    return LocalMeshView(grid, p, res, tuple(free), constraints, classes, patch_maps)
