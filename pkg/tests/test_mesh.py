import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minresfem.mesh import (DIRICHLET, INTERIOR, NEUMANN, MeshError, bisect,
                            element_size, initial_square_mesh, parse_sides,
                            uniform_refine)


def assert_valid(m):
    m.check()
    assert np.all(m.signed_areas > 0)
    assert np.isclose(m.areas.sum(), 1.0, atol=1e-12)
    nb = len(m.boundary_facets)
    assert 3 * m.ntriangles == 2 * m.nfacets - nb
    # every interior facet has two neighbours, every boundary facet is tagged
    interior = m.facet_elements[:, 1] >= 0
    assert np.all(m.facet_tags[interior] == INTERIOR)
    assert set(m.facet_tags[~interior]) <= {DIRICHLET, NEUMANN}
    # no hanging vertices: every vertex that lies on a facet is one of its ends
    v = m.vertices
    for a, b in m.facets:
        pa, pb = v[a], v[b]
        t = pb - pa
        rel = v - pa
        cross = rel[:, 0] * t[1] - rel[:, 1] * t[0]
        s = rel @ t / (t @ t)
        inside = (np.abs(cross) < 1e-13) & (s > 1e-12) & (s < 1 - 1e-12)
        assert not inside.any()


def test_initial_mesh_counts(mesh0):
    assert (mesh0.ntriangles, mesh0.nvertices, mesh0.nfacets) == (4, 5, 8)
    tags = list(mesh0.facet_tags)
    assert tags.count(NEUMANN) == 1
    assert tags.count(DIRICHLET) == 3
    assert tags.count(INTERIOR) == 4
    assert 3 * 4 == 2 * 8 - 4
    # centre is the newest vertex of every triangle
    assert np.all(mesh0.triangles[:, 2] == 4)
    np.testing.assert_allclose(mesh0.vertices[4], [0.5, 0.5])
    assert_valid(mesh0)


def test_neumann_facet_is_left_side(mesh0):
    f = mesh0.facets_tagged(NEUMANN)
    np.testing.assert_allclose(mesh0.vertices[mesh0.facets[f]][..., 0], 0.0)


def test_all_dirichlet(mesh_dirichlet):
    assert list(mesh_dirichlet.facet_tags).count(DIRICHLET) == 4


def test_side_specifications():
    assert parse_sides(["left", "top"]) == {"left", "top"}
    assert parse_sides("left, bottom") == {"left", "bottom"}
    assert parse_sides([((0, 0), (0, 1))]) == {"left"}
    with pytest.raises(MeshError):
        parse_sides([((0, 0), (0, 0.5))])
    with pytest.raises(MeshError):
        initial_square_mesh(("diagonal",))


def test_bisect_empty_returns_same(mesh0):
    m = bisect(mesh0, [])
    assert m.dump() == mesh0.dump()


def test_bisect_single(mesh0):
    # the refinement edge of triangle 0 is a boundary facet, so closure
    # adds nothing
    m = bisect(mesh0, {0})
    assert m.ntriangles == 5
    assert_valid(m)


def test_bisect_closure_propagates(mesh0):
    m = bisect(mesh0, {0})
    # a child of triangle 0 has its refinement edge on an interior facet
    m2 = bisect(m, [0])
    assert m2.ntriangles > m.ntriangles + 1
    assert_valid(m2)


def test_bisect_all(mesh0):
    m = bisect(mesh0, range(4))
    assert m.ntriangles == 8
    np.testing.assert_allclose(m.areas, 1 / 8)
    assert_valid(m)


def test_tags_inherited(mesh0):
    m = uniform_refine(mesh0, 2)
    nf = m.facets_tagged(NEUMANN)
    assert len(nf) == 4
    assert np.allclose(m.vertices[m.facets[nf]][..., 0], 0.0)
    assert np.isclose(m.facet_lengths()[nf].sum(), 1.0)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_uniform_counts(mesh0, n):
    m = uniform_refine(mesh0, n)
    assert m.ntriangles == 4 * 4 ** n
    assert_valid(m)
    np.testing.assert_allclose(element_size(m), 0.5 / 2 ** n)


def test_uniform_equals_two_sweeps(mesh0):
    m = mesh0
    for _ in range(2):
        m = bisect(m, range(m.ntriangles))
    assert m.dump() == uniform_refine(mesh0).dump()


def test_element_size(mesh0):
    np.testing.assert_allclose(element_size(mesh0), 0.5)
    np.testing.assert_allclose(element_size(uniform_refine(mesh0)), 0.25)


def test_facet_normals(mesh0):
    m = uniform_refine(mesh0)
    n = m.facet_normals()
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0)
    # boundary normals point out of the square
    mid = m.vertices[m.facets].mean(axis=1)
    b = m.boundary_facets
    assert np.all(np.einsum("ij,ij->i", n[b], mid[b] - 0.5) > 0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 10 ** 6), min_size=1, max_size=8),
       st.integers(0, 2 ** 31))
def test_random_adaptive_sequences_stay_valid(picks, seed):
    rng = np.random.default_rng(seed)
    m = initial_square_mesh(("left",))
    for k in picks:
        parent_h = element_size(m).max()
        nmark = 1 + k % max(1, m.ntriangles // 3)
        marked = rng.choice(m.ntriangles, size=nmark, replace=False)
        m = bisect(m, marked)
        assert_valid(m)
        assert element_size(m).max() <= parent_h + 1e-15
        # NVB keeps the similarity classes of the initial mesh
        assert m.min_angle() >= 45 - 1e-9


def test_marked_triangles_are_refined(mesh0):
    m = uniform_refine(mesh0)
    marked = [3, 7]
    before = m.areas[marked]
    c = m.vertices[m.triangles[marked]].mean(axis=1)
    m2 = bisect(m, marked)
    # the old centroids now lie in triangles of at most half the area
    for ci, a in zip(c, before):
        x = m2.vertices[m2.triangles]
        d = np.array([_bary_inside(t, ci) for t in x])
        assert np.all(m2.areas[d] <= a / 2 + 1e-15)


def _bary_inside(tri, p):
    T = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    lam = np.linalg.solve(T, p - tri[0])
    return lam.min() >= -1e-12 and lam.sum() <= 1 + 1e-12


def test_out_of_range_mark(mesh0):
    with pytest.raises(IndexError):
        bisect(mesh0, [4])


def test_dump_format(mesh0):
    lines = mesh0.dump().splitlines()
    assert lines[0] == "4 5 8"
    assert len(lines) == 1 + 5 + 4 + 8
    assert {ln.split()[-1] for ln in lines[-8:]} == {"I", "D", "N"}


def test_immutable(mesh0):
    with pytest.raises(ValueError):
        mesh0.vertices[0, 0] = 3.0
