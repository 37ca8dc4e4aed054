"""Conforming triangulations of the unit square refined by newest vertex
bisection.

Each triangle is stored as ``(a, b, c)`` in counter-clockwise order with
``c`` its newest vertex, so ``(a, b)`` is the refinement edge.  Bisecting
``(a, b, c)`` at the midpoint ``m`` of ``(a, b)`` yields ``(c, a, m)`` and
``(b, c, m)``; both are again counter-clockwise with newest vertex ``m``.
"""
from collections import defaultdict

import numpy as np

INTERIOR, DIRICHLET, NEUMANN = "I", "D", "N"

# local edge k is opposite local vertex k
LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))

_SQUARE_SIDES = {
    "bottom": ((0.0, 0.0), (1.0, 0.0)),
    "right": ((1.0, 0.0), (1.0, 1.0)),
    "top": ((1.0, 1.0), (0.0, 1.0)),
    "left": ((0.0, 1.0), (0.0, 0.0)),
}


class MeshError(ValueError):
    """Invalid mesh configuration."""


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


class Triangulation:
    """Immutable conforming triangulation with facet tags.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    triangles : array_like, shape (nt, 3)
        Vertex triples, counter-clockwise, newest vertex last.
    boundary : dict
        Maps sorted vertex pairs of boundary facets to ``"D"`` or ``"N"``.
    generation : array_like, optional
        Bisection generation of each triangle.
    """

    def __init__(self, vertices, triangles, boundary, generation=None):
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        self.triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        nt = len(self.triangles)
        if generation is None:
            generation = np.zeros(nt, dtype=np.int64)
        self.generation = np.array(generation, dtype=np.int64)
        self.boundary = dict(boundary)
        self._build_facets()
        for a in (self.vertices, self.triangles, self.generation,
                  self.facets, self.facet_elements, self.facet_local,
                  self.elem_facets, self.facet_tags):
            a.setflags(write=False)

    def _build_facets(self):
        t = self.triangles
        nt = len(t)
        loc = np.array(LOCAL_EDGES)
        pairs = t[:, loc]                       # (nt, 3, 2)
        lo = pairs.min(axis=2).ravel()
        hi = pairs.max(axis=2).ravel()
        keys = np.column_stack([lo, hi])
        facets, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        nf = len(facets)
        self.facets = facets
        self.elem_facets = inverse.reshape(nt, 3)
        fe = -np.ones((nf, 2), dtype=np.int64)
        fl = -np.ones((nf, 2), dtype=np.int64)
        count = np.zeros(nf, dtype=np.int64)
        for idx, f in enumerate(inverse):
            slot = count[f]
            if slot > 1:
                raise MeshError(f"facet {facets[f]} shared by > 2 triangles")
            fe[f, slot] = idx // 3
            fl[f, slot] = idx % 3
            count[f] += 1
        self.facet_elements = fe
        self.facet_local = fl
        tags = np.full(nf, INTERIOR, dtype="<U1")
        for f in np.nonzero(count == 1)[0]:
            key = (int(facets[f, 0]), int(facets[f, 1]))
            if key not in self.boundary:
                raise MeshError(f"boundary facet {key} carries no tag")
            tags[f] = self.boundary[key]
        self.facet_tags = tags

    # -- sizes ------------------------------------------------------------
    @property
    def nvertices(self):
        return len(self.vertices)

    @property
    def ntriangles(self):
        return len(self.triangles)

    @property
    def nfacets(self):
        return len(self.facets)

    @property
    def boundary_facets(self):
        return np.nonzero(self.facet_elements[:, 1] < 0)[0]

    def facets_tagged(self, tag):
        return np.nonzero(self.facet_tags == tag)[0]

    # -- geometry ---------------------------------------------------------
    @property
    def jacobians(self):
        """Affine map Jacobians ``(nt, 2, 2)``, columns ``v1-v0``, ``v2-v0``."""
        v = self.vertices[self.triangles]
        return np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)

    @property
    def signed_areas(self):
        J = self.jacobians
        return 0.5 * (J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])

    @property
    def areas(self):
        return np.abs(self.signed_areas)

    def facet_lengths(self):
        v = self.vertices[self.facets]
        return np.linalg.norm(v[:, 1] - v[:, 0], axis=1)

    def facet_normals(self):
        """Unit normals of the global facet orientation.

        Interior facets: the tangent from lower to higher vertex index
        rotated clockwise.  Boundary facets: the outward normal.
        """
        v = self.vertices[self.facets]
        tang = v[:, 1] - v[:, 0]
        n = np.column_stack([tang[:, 1], -tang[:, 0]])
        n /= np.linalg.norm(n, axis=1)[:, None]
        for f in self.boundary_facets:
            e, k = self.facet_elements[f, 0], self.facet_local[f, 0]
            a, b = LOCAL_EDGES[k]
            if self.triangles[e, a] > self.triangles[e, b]:
                n[f] = -n[f]
        return n

    def min_angle(self):
        """Smallest interior angle of the mesh in degrees."""
        v = self.vertices[self.triangles]
        out = np.inf
        for i in range(3):
            p, q, r = v[:, i], v[:, (i + 1) % 3], v[:, (i + 2) % 3]
            u, w = q - p, r - p
            c = np.einsum("ij,ij->i", u, w) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
            out = min(out, np.degrees(np.arccos(np.clip(c, -1, 1))).min())
        return float(out)

    def check(self):
        """Raise :class:`MeshError` if an invariant is violated."""
        if np.any(self.signed_areas <= 0):
            raise MeshError("non-positive triangle orientation")
        nb = len(self.boundary_facets)
        if 3 * self.ntriangles != 2 * self.nfacets - nb:
            raise MeshError("facet count identity violated")
        # hanging vertices: no vertex may lie in the interior of a facet
        used = np.zeros(self.nvertices, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise MeshError("unused vertex")
        for f in self.boundary_facets:
            if self.facet_tags[f] not in (DIRICHLET, NEUMANN):
                raise MeshError("untagged boundary facet")
        return True

    def __repr__(self):
        return (f"Triangulation(ntri={self.ntriangles}, "
                f"nvert={self.nvertices}, nfacet={self.nfacets})")

    def dump(self):
        """Plain-text dump used for debugging and golden tests."""
        lines = [f"{self.ntriangles} {self.nvertices} {self.nfacets}"]
        lines += [f"{x!r} {y!r}" for x, y in self.vertices]
        lines += [f"{a} {b} {c} 2" for a, b, c in self.triangles]
        lines += [f"{a} {b} {t}" for (a, b), t in
                  zip(self.facets, self.facet_tags)]
        return "\n".join(lines) + "\n"


def _side_name(segment):
    (p0, p1) = np.asarray(segment, dtype=float)
    for name, (q0, q1) in _SQUARE_SIDES.items():
        q0, q1 = np.asarray(q0), np.asarray(q1)
        if ((np.allclose(p0, q0) and np.allclose(p1, q1))
                or (np.allclose(p0, q1) and np.allclose(p1, q0))):
            return name
    raise MeshError(f"segment {segment!r} is not a whole side of the unit square")


def parse_sides(spec):
    """Normalize a boundary-part description to a set of side names.

    Accepts an iterable of side names (``"left"``, ``"right"``,
    ``"bottom"``, ``"top"``) or of segment endpoint pairs.
    """
    if spec is None:
        return set()
    if isinstance(spec, str):
        spec = [s for s in spec.replace(",", " ").split() if s]
    sides = set()
    for item in spec:
        if isinstance(item, str):
            if item not in _SQUARE_SIDES:
                raise MeshError(f"unknown square side {item!r}")
            sides.add(item)
        else:
            sides.add(_side_name(item))
    return sides


def initial_square_mesh(gamma_n=("left",)):
    """Unit square cut along its diagonals into 4 triangles.

    The centre vertex is the newest vertex of every triangle, so all
    refinement edges lie on the boundary.  Sides in ``gamma_n`` are tagged
    Neumann, the remaining ones Dirichlet.
    """
    sides = parse_sides(gamma_n)
    vertices = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 0.5)]
    triangles = [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]
    names = {(0, 1): "bottom", (1, 2): "right", (2, 3): "top", (0, 3): "left"}
    boundary = {k: (NEUMANN if v in sides else DIRICHLET)
                for k, v in names.items()}
    mesh = Triangulation(vertices, triangles, boundary)
    mesh.check()
    return mesh


def bisect(mesh, marked):
    """Newest vertex bisection of the ``marked`` triangles with closure.

    Every marked triangle is bisected at least once; further bisections
    restore conformity.  Returns a new :class:`Triangulation`.
    """
    marked = np.unique(np.asarray(list(marked), dtype=np.int64))
    if len(marked) == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.ntriangles:
        raise IndexError("marked triangle index out of range")
    tris = [tuple(int(v) for v in t) for t in mesh.triangles]

    edge_tris = defaultdict(list)
    for i, (a, b, c) in enumerate(tris):
        for e in ((a, b), (b, c), (c, a)):
            edge_tris[_edge_key(*e)].append(i)

    marked_edges = set()
    stack = []
    for i in marked:
        a, b, _ = tris[i]
        e = _edge_key(a, b)
        if e not in marked_edges:
            marked_edges.add(e)
            stack.append(e)
    # closure: a triangle with any marked edge must have its refinement
    # edge marked
    while stack:
        e = stack.pop()
        for i in edge_tris[e]:
            a, b, _ = tris[i]
            r = _edge_key(a, b)
            if r not in marked_edges:
                marked_edges.add(r)
                stack.append(r)

    vertices = [tuple(v) for v in mesh.vertices]
    midpoint = {}
    for e in sorted(marked_edges):
        a, b = e
        midpoint[e] = len(vertices)
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        vertices.append(((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2))

    boundary = {}
    for e, tag in mesh.boundary.items():
        if e in midpoint:
            m = midpoint[e]
            boundary[_edge_key(e[0], m)] = tag
            boundary[_edge_key(m, e[1])] = tag
        else:
            boundary[e] = tag

    new_tris, new_gen = [], []

    def split(tri, gen):
        a, b, c = tri
        e = _edge_key(a, b)
        if e not in marked_edges:
            new_tris.append(tri)
            new_gen.append(gen)
            return
        m = midpoint[e]
        split((c, a, m), gen + 1)
        split((b, c, m), gen + 1)

    for i, t in enumerate(tris):
        split(t, int(mesh.generation[i]))
    return Triangulation(vertices, new_tris, boundary, new_gen)


def uniform_refine(mesh, times=1):
    """Two full bisection sweeps per step; halves every element diameter."""
    for _ in range(times):
        for _ in range(2):
            mesh = bisect(mesh, range(mesh.ntriangles))
    return mesh


def element_size(mesh):
    """Local mesh size ``|K|**(1/2)`` per triangle."""
    return np.sqrt(mesh.areas)
