import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cgglrom.errors import InvalidArgumentError, OutOfDomainError, PreconditionError, UnsupportedConfigurationError
from cgglrom.fem import lagrange_1d
from cgglrom.mesh import (
    ESSENTIAL,
    INTERFACE,
    Domain,
    StructuredMesh,
    assemble_local_view,
    build_patch_grid,
    localize_patch,
    locate_point,
    refine_patch,
)

OMEGA = Domain((0.0, 0.0), (8.0, 8.0))


def test_domain_rejects_degenerate():
    with pytest.raises(InvalidArgumentError):
        Domain((0, 0), (0, 1))


@pytest.mark.parametrize("res,cells", [((6, 6), 36), ((10, 10), 100)])
def test_build_grid_sixteen_patches(res, cells):
    g = build_patch_grid(OMEGA, 4, 4, res)
    assert g.n_patches == 16
    assert all(pm.n_cells == cells for pm in g.patches)
    assert g.global_set == frozenset(range(16))


def test_unit_grid_single_cell():
    g = build_patch_grid(Domain((0, 0), (1, 1)), 1, 1, (1, 1))
    assert g.n_patches == 1 and g.patch(0).n_cells == 1
    assert g.patch(0).bounds == Domain((0, 0), (1, 1))


@pytest.mark.parametrize("px,py,res", [(0, 1, (1, 1)), (1, 1, (0, 2))])
def test_build_grid_zero_counts(px, py, res):
    with pytest.raises(InvalidArgumentError):
        build_patch_grid(OMEGA, px, py, res)


def test_refine_quadrisects_only_target():
    g = build_patch_grid(OMEGA, 4, 4, (6, 6))
    g = localize_patch(g, 3)
    r = refine_patch(g, 3)
    assert (r.patch(3).ncx, r.patch(3).ncy) == (12, 12)
    assert all(r.patch(i).n_cells == 36 for i in range(16) if i != 3)
    assert refine_patch(r, 3).patch(3).ncx == 24


def test_refine_global_patch_is_precondition_error():
    g = build_patch_grid(OMEGA, 2, 2, (2, 2))
    with pytest.raises(PreconditionError):
        refine_patch(g, 0)


def test_localize():
    g = build_patch_grid(OMEGA, 4, 4, (6, 6))
    g5 = localize_patch(g, 5)
    assert g5.global_set == frozenset(range(16)) - {5}
    assert g5.patch(5).n_cells == 36
    with pytest.raises(PreconditionError):
        localize_patch(g5, 5)
    one = build_patch_grid(OMEGA, 1, 1, (2, 2))
    assert localize_patch(one, 0).global_set == frozenset()


@given(st.integers(1, 4), st.integers(1, 4), st.lists(st.integers(0, 2), min_size=16, max_size=16))
def test_tiling_and_nesting(px, py, lv):
    g = build_patch_grid(Domain((-1.0, 2.0), (3.0, 7.5)), px, py, (2, 3))
    for pid in range(g.n_patches):
        g = localize_patch(g, pid)
        for _ in range(lv[pid]):
            g = refine_patch(g, pid)
    total = sum(pm.cell_volumes().sum() for pm in g.patches)
    assert abs(total - g.domain.area) <= 1e-12 * g.domain.area
    for pm in g.patches:
        if pm.level == 0:
            continue
        coarse = type(pm)(pm.patch_id, pm.bounds, pm.base_res, pm.level - 1).mesh
        fine = pm.mesh
        for c in range(fine.n_cells):
            (lo, hi) = fine.cell_bounds(c)
            cc = coarse.locate(0.5 * (np.array(lo) + np.array(hi)))[0][0]
            clo, chi = coarse.cell_bounds(int(cc))
            assert np.all(np.array(lo) >= np.array(clo) - 1e-12) and np.all(np.array(hi) <= np.array(chi) + 1e-12)


def test_locate_cell_centre():
    m = StructuredMesh(OMEGA, 72, 72)
    cell, xi = locate_point(m, (1 / 18, 1 / 18))
    assert cell == 0
    np.testing.assert_allclose(xi, 0.0, atol=1e-12)


def test_locate_tie_goes_to_lower_cell():
    m = StructuredMesh(OMEGA, 4, 4)
    cell, xi = locate_point(m, (2.0, 1.0))
    assert cell == 0 and xi[0] == pytest.approx(1.0)


def test_locate_roundtrip():
    m = StructuredMesh(OMEGA, 7, 5)
    pts = np.random.default_rng(0).uniform(0, 8, (100, 2))
    cells, xi = m.locate(pts)
    back = np.array([m.cell_map(c, x) for c, x in zip(cells, xi)]).reshape(-1, 2)
    assert np.max(np.abs(back - pts)) < 1e-12


def test_locate_outside():
    with pytest.raises(OutOfDomainError):
        locate_point(StructuredMesh(OMEGA, 2, 2), (8.1, 1.0))
    locate_point(StructuredMesh(OMEGA, 2, 2), (8.0 + 1e-11, 1.0))


def test_locate_in_patch_grid():
    g = build_patch_grid(OMEGA, 4, 4, (6, 6))
    (pid, cell), _ = locate_point(g, (2.5, 0.1))
    assert pid == 1 and cell == 1


def test_all_global_view_is_empty():
    assert assemble_local_view(build_patch_grid(OMEGA, 3, 3, (2, 2)), 2).n_dofs == 0


def test_single_local_cell_has_one_interior_node():
    g = localize_patch(build_patch_grid(OMEGA, 3, 3, (1, 1)), 4)
    v = assemble_local_view(g, 2)
    assert v.n_dofs == 1
    classes = [v.boundary_class[k] for k in v.boundary_class if v.boundary_class[k] != "interior"]
    assert len(classes) == 8 and set(classes) == {INTERFACE}


def test_corner_patch_essential_and_interface():
    g = localize_patch(build_patch_grid(OMEGA, 2, 2, (2, 2)), 0)
    v = assemble_local_view(g, 2)
    assert v.n_dofs == 9
    assert ESSENTIAL in v.boundary_class.values() and INTERFACE in v.boundary_class.values()


def _two_level_view(p=2):
    g = build_patch_grid(OMEGA, 2, 1, (2, 2))
    g = localize_patch(localize_patch(g, 0), 1)
    return assemble_local_view(refine_patch(g, 1), p)


def test_hanging_constraints_sum_to_one():
    v = _two_level_view()
    assert v.constraints
    for con in v.constraints:
        assert sum(con.coefficients) == pytest.approx(1.0, abs=1e-14)


def _patch_value(view, pid, alpha, pts):
    g = view.grid
    pm = g.patch(pid)
    p = view.p
    nodal = (view.patch_maps[pid] @ alpha).reshape(p * pm.ncx + 1, p * pm.ncy + 1)
    cell, xi = pm.mesh.locate(pts)
    ci, cj = cell % pm.ncx, cell // pm.ncx
    lx, _ = lagrange_1d(p, xi[:, 0])
    ly, _ = lagrange_1d(p, xi[:, 1])
    I = ci[:, None] * p + np.arange(p + 1)
    J = cj[:, None] * p + np.arange(p + 1)
    return np.einsum("ns,nt,nst->n", lx, ly, nodal[I[:, :, None], J[:, None, :]])


@pytest.mark.parametrize("p", [1, 2, 3])
def test_hanging_trace_continuity(p):
    v = _two_level_view(p)
    rng = np.random.default_rng(p)
    alpha = rng.standard_normal(v.n_dofs)
    pts = np.column_stack([np.full(20, 4.0), rng.uniform(0, 8, 20)])
    left = _patch_value(v, 0, alpha, pts)
    right = _patch_value(v, 1, alpha, pts)
    assert np.max(np.abs(left - right)) < 1e-12


def test_level_jump_cap():
    g = build_patch_grid(OMEGA, 2, 1, (2, 2))
    g = localize_patch(localize_patch(g, 0), 1)
    g = refine_patch(refine_patch(g, 1), 1)
    with pytest.raises(UnsupportedConfigurationError):
        assemble_local_view(g, 2, max_level_jump=1)
    assemble_local_view(g, 2)  # uncapped by default


def test_local_functions_vanish_on_interface_and_boundary():
    g = localize_patch(localize_patch(build_patch_grid(OMEGA, 2, 2, (2, 2)), 0), 3)
    v = assemble_local_view(refine_patch(g, 3), 2)
    alpha = np.random.default_rng(1).standard_normal(v.n_dofs)
    t = np.linspace(0, 4, 13)
    edges0 = np.vstack([np.column_stack([t, np.full_like(t, 4.0)]), np.column_stack([np.full_like(t, 4.0), t]),
                        np.column_stack([t, np.zeros_like(t)]), np.column_stack([np.zeros_like(t), t])])
    assert np.max(np.abs(_patch_value(v, 0, alpha, edges0))) < 1e-14
    s = 4 + t
    edges3 = np.vstack([np.column_stack([s, np.full_like(s, 4.0)]), np.column_stack([np.full_like(s, 4.0), s])])
    assert np.max(np.abs(_patch_value(v, 3, alpha, edges3))) < 1e-14
