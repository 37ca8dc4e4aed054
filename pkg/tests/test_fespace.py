import numpy as np
import pytest

from minresfem.fespace import (CR, DG, LAGRANGE, RT, DiscreteFunction, SpaceError,
                               edge_points, evaluate, l2_project, make_space)
from minresfem.mesh import DIRICHLET, NEUMANN, initial_square_mesh, uniform_refine
from minresfem.quadrature import edge_rule


def ref_coords(mesh, e, X):
    """Reference coordinates of physical points ``X`` in element ``e``."""
    J = mesh.jacobians[e]
    v0 = mesh.vertices[mesh.triangles[e, 0]]
    return np.linalg.solve(J, (X - v0).T).T


def facet_samples(mesh, f, t):
    """Reference points of parameters ``t`` on facet ``f`` seen from each
    neighbour, plus the physical points."""
    e0, k0 = mesh.facet_elements[f, 0], mesh.facet_local[f, 0]
    X = edge_points(k0, t)
    phys = mesh.vertices[mesh.triangles[e0, 0]] + X @ mesh.jacobians[e0].T
    out = [(e0, X)]
    e1 = mesh.facet_elements[f, 1]
    if e1 >= 0:
        out.append((e1, ref_coords(mesh, e1, phys)))
    return out, phys


def field(space, c, e, pts, what="val"):
    return evaluate(DiscreteFunction(space, c), [e], pts, what)[0]


MESHES = {
    "initial": lambda: initial_square_mesh(("left",)),
    "uniform": lambda: uniform_refine(initial_square_mesh(("left",)), 2),
}


@pytest.fixture(params=["initial", "uniform", "graded"])
def any_mesh(request, mesh_graded):
    return mesh_graded if request.param == "graded" else MESHES[request.param]()


def test_initial_dims(mesh0, mesh_dirichlet):
    assert make_space(mesh0, DG, 0).dim == 4
    assert make_space(mesh0, RT, 0).dim == 8
    assert make_space(mesh_dirichlet, CR, 1, DIRICHLET).dim == 4


@pytest.mark.parametrize("p", range(5))
def test_dg_dim(any_mesh, p):
    assert make_space(any_mesh, DG, p).dim == any_mesh.ntriangles * (p + 1) * (p + 2) // 2


@pytest.mark.parametrize("p", range(1, 9))
def test_lagrange_dim(any_mesh, p):
    m = any_mesh
    expect = m.nvertices + m.nfacets * (p - 1) + m.ntriangles * (p - 1) * (p - 2) // 2
    assert make_space(m, LAGRANGE, p).dim == expect


@pytest.mark.parametrize("p", range(6))
def test_rt_dim(any_mesh, p):
    m = any_mesh
    # local dim of P_p^2 + x P~_p is (p+1)(p+3); 3(p+1) of it lives on edges
    n_int = (p + 1) * (p + 3) - 3 * (p + 1)
    assert n_int == 2 * (p * (p + 1) // 2)          # moments against P_{p-1}^2
    assert make_space(m, RT, p).dim == m.nfacets * (p + 1) + m.ntriangles * n_int
    nn = len(m.facets_tagged(NEUMANN))
    assert make_space(m, RT, p, NEUMANN).dim == (m.nfacets - nn) * (p + 1) + m.ntriangles * n_int
    assert make_space(m, RT, p).ref.ndof == (p + 1) * (p + 3)


def test_cr_dim(any_mesh):
    m = any_mesh
    assert make_space(m, CR, 1, DIRICHLET).dim == m.nfacets - len(m.facets_tagged(DIRICHLET))


def test_lagrange_p1_nodal(mesh0):
    V = make_space(mesh0, LAGRANGE, 1)
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    vals = V.eval_basis([0], verts)["val"][0]
    np.testing.assert_allclose(vals, np.eye(3), atol=1e-14)


@pytest.mark.parametrize("p", range(1, 9))
def test_lagrange_partition_of_unity(mesh0, rng, p):
    V = make_space(mesh0, LAGRANGE, p)
    pts = rng.dirichlet(np.ones(3), size=20)[:, 1:]
    d = V.eval_basis(np.arange(4), pts)
    np.testing.assert_allclose(d["val"].sum(-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(d["grad"].sum(-2), 0.0, atol=1e-10)


def test_dg0_constant(mesh0):
    d = make_space(mesh0, DG, 0).eval_basis(np.arange(4), [[0.2, 0.3], [0.6, 0.1]])
    np.testing.assert_allclose(d["val"], 1.0)
    np.testing.assert_allclose(d["grad"], 0.0)


def test_rt0_normal_trace(mesh0):
    m = uniform_refine(mesh0)
    V = make_space(m, RT, 0)
    n = m.facet_normals()
    L = m.facet_lengths()
    t = edge_rule(4).points
    for f in range(m.nfacets):
        basis = np.zeros(V.dim)
        basis[f] = 1.0
        for g in range(m.nfacets):
            for e, X in facet_samples(m, g, t)[0]:
                vn = field(V, basis, e, X) @ n[g]
                target = 1.0 / L[g] if g == f else 0.0
                np.testing.assert_allclose(vn, target, atol=1e-12)


@pytest.mark.parametrize("p", range(6))
def test_rt_normal_continuity(mesh_graded, rng, p):
    m = mesh_graded
    V = make_space(m, RT, p, NEUMANN)
    c = rng.standard_normal(V.dim)
    t = edge_rule(2 * p + 2).points
    n = m.facet_normals()
    for f in np.nonzero(m.facet_elements[:, 1] >= 0)[0]:
        (a, b), _ = facet_samples(m, f, t)
        np.testing.assert_allclose(field(V, c, *a) @ n[f], field(V, c, *b) @ n[f],
                                   atol=1e-11 * max(1, np.abs(c).max() / m.facet_lengths()[f]))
    # zero normal trace on the Neumann part
    for f in m.facets_tagged(NEUMANN):
        (a,), _ = facet_samples(m, f, t)
        assert np.abs(field(V, c, *a) @ n[f]).max() < 1e-9


@pytest.mark.parametrize("p", [1, 3, 8])
def test_lagrange_continuity_and_constraint(mesh_graded, rng, p):
    m = mesh_graded
    V = make_space(m, LAGRANGE, p, DIRICHLET)
    c = rng.standard_normal(V.dim)
    t = edge_rule(2 * p).points
    for f in range(m.nfacets):
        sides, _ = facet_samples(m, f, t)
        vals = [field(V, c, *s) for s in sides]
        if len(vals) == 2:
            np.testing.assert_allclose(vals[0], vals[1], atol=1e-11)
        elif m.facet_tags[f] == DIRICHLET:
            assert np.abs(vals[0]).max() < 1e-12


def test_cr_jump_means_vanish(mesh_graded, rng):
    m = mesh_graded
    V = make_space(m, CR, 1, DIRICHLET)
    c = rng.standard_normal(V.dim)
    r = edge_rule(2)
    L = m.facet_lengths()
    for f in range(m.nfacets):
        if m.facet_tags[f] == NEUMANN:
            continue
        sides, _ = facet_samples(m, f, r.points)
        means = [L[f] * (r.weights @ field(V, c, *s)) for s in sides]
        jump = means[0] - (means[1] if len(means) == 2 else 0.0)
        assert abs(jump) < 1e-11


def test_evaluate_zero(mesh0):
    V = make_space(mesh0, RT, 2)
    out = evaluate(DiscreteFunction(V, np.zeros(V.dim)), [0, 1], [[0.1, 0.2]], "div")
    assert np.all(out == 0)


@pytest.mark.parametrize("family,p,con", [(DG, 3, None), (LAGRANGE, 4, DIRICHLET),
                                          (RT, 2, NEUMANN), (CR, 1, DIRICHLET)])
def test_projection_reproduces_members(mesh_graded, rng, family, p, con):
    V = make_space(mesh_graded, family, p, con)
    c = rng.standard_normal(V.dim)
    fn = DiscreteFunction(V, c)
    m = mesh_graded

    def target(x, y):
        # evaluate the member at physical points by locating each point
        pts = np.stack([x, y], -1).reshape(-1, 2)
        owner = np.repeat(np.arange(m.ntriangles), x.shape[1])
        ref = np.array([ref_coords(m, e, X) for e, X in zip(owner, pts)])
        vals = np.stack([evaluate(fn, [e], [r])[0, 0] for e, r in zip(owner, ref)])
        if family == RT:
            return vals[:, 0].reshape(x.shape), vals[:, 1].reshape(x.shape)
        return vals.reshape(x.shape)

    proj = l2_project(V, target)
    np.testing.assert_allclose(proj.coefficients, c, atol=1e-10)
    pts = rng.dirichlet(np.ones(3), size=5)[:, 1:]
    np.testing.assert_allclose(evaluate(proj, np.arange(m.ntriangles), pts),
                               evaluate(fn, np.arange(m.ntriangles), pts), atol=1e-10)


def test_projection_of_sine_gives_means(mesh0):
    V = make_space(mesh0, DG, 0)
    proj = l2_project(V, lambda x, y: np.sin(np.pi * x), quad_degree=30)
    pi = np.pi
    # bottom/top: int_0^1 sin(pi x) min(x, 1-x) dx = 2/pi^2
    # right/left: int_0^(1/2) sin(pi s) (1 - 2s) ds = 1/pi - 2/pi^2
    ib = 2 / pi ** 2
    il = 1 / pi - 2 / pi ** 2
    expect = np.array([ib, il, ib, il]) / 0.25        # triangle order b, r, t, l
    np.testing.assert_allclose(proj.coefficients, expect, rtol=1e-12)


def test_projection_error_decreases(mesh0):
    f = lambda x, y: np.exp(x) * np.cos(2 * y)
    errs = []
    m = mesh0
    from minresfem.assembly import _weights
    from minresfem.quadrature import triangle_rule
    rule = triangle_rule(10)
    for _ in range(4):
        V = make_space(m, DG, 1)
        pr = l2_project(V, f)
        el = np.arange(m.ntriangles)
        x = V.physical_points(el, rule.points)
        diff = evaluate(pr, el, rule.points) - f(x[..., 0], x[..., 1])
        errs.append(np.sqrt(np.sum(diff ** 2 * _weights(V, el, rule))))
        m = uniform_refine(m)
    assert all(b < a for a, b in zip(errs, errs[1:]))


@pytest.mark.parametrize("args", [(DG, 5, None), (LAGRANGE, 0, None), (LAGRANGE, 9, None),
                                  (RT, 6, None), (CR, 2, DIRICHLET), (DG, 1, DIRICHLET),
                                  (RT, 1, DIRICHLET), ("Nedelec", 1, None)])
def test_unsupported(mesh0, args):
    with pytest.raises(SpaceError):
        make_space(mesh0, *args)


def test_element_out_of_range(mesh0):
    with pytest.raises(IndexError):
        make_space(mesh0, DG, 1).eval_basis([4], [[0.1, 0.1]])


def test_coefficient_length_checked(mesh0):
    with pytest.raises(ValueError):
        DiscreteFunction(make_space(mesh0, DG, 1), np.zeros(3))
