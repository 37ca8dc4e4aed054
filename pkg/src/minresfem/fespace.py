"""Finite element spaces on triangulations.

Four families are provided: discontinuous polynomials (``DG``),
continuous Lagrange elements (``Lagrange``), Raviart-Thomas elements
(``RT``, per element ``P_p^2 + x P~_p``) and lowest-order Crouzeix-Raviart
elements (``CR``).  Reference shape functions are dual to their degrees of
freedom; physical functions come from the affine map, with the
contravariant Piola transform for ``RT``.

Shared degrees of freedom carry orientation signs so that continuity
(trace, normal trace, facet mean) holds for every coefficient vector.
Facets are oriented from lower to higher vertex index; boundary facets
use the outward normal.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi

from .mesh import DIRICHLET, LOCAL_EDGES, NEUMANN
from .quadrature import edge_rule, triangle_rule

DG, LAGRANGE, RT, CR = "DG", "Lagrange", "RT", "CR"
FAMILIES = (DG, LAGRANGE, RT, CR)
MAX_DEGREE = {DG: 4, LAGRANGE: 8, RT: 5, CR: 1}
MIN_DEGREE = {DG: 0, LAGRANGE: 1, RT: 0, CR: 1}
CONSTRAINTS = {DG: (None,), LAGRANGE: (None, DIRICHLET),
               RT: (None, NEUMANN), CR: (DIRICHLET,)}

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class SpaceError(ValueError):
    """Unsupported family, degree or constraint."""


# ---------------------------------------------------------------------------
# modal polynomial bases on the reference triangle

def _legendre(n, z):
    """Legendre polynomials ``P_k(2z - 1)`` and d/dz for k <= n."""
    xi = 2.0 * z - 1.0
    P = np.zeros((n + 1,) + z.shape)
    D = np.zeros_like(P)
    P[0] = 1.0
    if n >= 1:
        P[1] = xi
        D[1] = 1.0
    for k in range(1, n):
        P[k + 1] = ((2 * k + 1) * xi * P[k] - k * P[k - 1]) / (k + 1)
        D[k + 1] = D[k - 1] + (2 * k + 1) * P[k]
    return P, 2.0 * D


def _collapsed_legendre(n, x, y):
    """``Q_i = P_i(a) (1 - y)^i`` with ``a = (2x + y - 1) / (1 - y)``.

    Evaluated by the Legendre recurrence multiplied through by powers of
    ``1 - y``, which keeps everything polynomial (no collapsed-vertex
    singularity).  Returns values and the two partial derivatives.
    """
    s = 1.0 - y
    r = 2.0 * x + y - 1.0
    Q = np.zeros((n + 1,) + x.shape)
    Qx, Qy = np.zeros_like(Q), np.zeros_like(Q)
    Q[0] = 1.0
    if n >= 1:
        Q[1], Qx[1], Qy[1] = r, 2.0, 1.0
    for i in range(1, n):
        Q[i + 1] = ((2 * i + 1) * r * Q[i] - i * s * s * Q[i - 1]) / (i + 1)
        Qx[i + 1] = ((2 * i + 1) * (2.0 * Q[i] + r * Qx[i])
                     - i * s * s * Qx[i - 1]) / (i + 1)
        Qy[i + 1] = ((2 * i + 1) * (Q[i] + r * Qy[i])
                     - i * (-2.0 * s * Q[i - 1] + s * s * Qy[i - 1])) / (i + 1)
    return Q, Qx, Qy


def _dubiner_indices(p):
    return [(i, d - i) for d in range(p + 1) for i in range(d, -1, -1)]


def modal_scalar(p, pts):
    """Values ``(nq, n)`` and gradients ``(nq, n, 2)`` of an orthonormal
    (Dubiner) basis of P_p, ordered by total degree."""
    x, y = pts[:, 0], pts[:, 1]
    Q, Qx, Qy = _collapsed_legendre(p, x, y)
    b = 2.0 * y - 1.0
    vals, grads = [], []
    for i, j in _dubiner_indices(p):
        J = eval_jacobi(j, 2 * i + 1, 0, b)
        dJ = ((j + 2 * i + 2) * eval_jacobi(j - 1, 2 * i + 2, 1, b)
              if j > 0 else np.zeros_like(b))
        c = np.sqrt(2.0 * (2 * i + 1) * (i + j + 1))
        vals.append(c * Q[i] * J)
        grads.append(c * np.stack([Qx[i] * J, Qy[i] * J + Q[i] * dJ], axis=-1))
    return np.stack(vals, axis=1), np.stack(grads, axis=1)


def modal_rt(p, pts):
    """Values ``(nq, n, 2)`` and divergences ``(nq, n)`` spanning RT_p.

    ``P_p^2`` plus ``x q`` for the degree-p orthonormal polynomials ``q``
    (which complement ``P_{p-1}`` in ``P_p``).
    """
    s, g = modal_scalar(p, pts)
    zero = np.zeros_like(s)
    vals = [np.stack([s, zero], axis=-1), np.stack([zero, s], axis=-1)]
    divs = [g[..., 0], g[..., 1]]
    top = slice(p * (p + 1) // 2, None)
    h, hg = s[:, top], g[:, top]
    x, y = pts[:, 0], pts[:, 1]
    vals.append(np.stack([x[:, None] * h, y[:, None] * h], axis=-1))
    divs.append(2.0 * h + x[:, None] * hg[..., 0] + y[:, None] * hg[..., 1])
    return np.concatenate(vals, axis=1), np.concatenate(divs, axis=1)


def edge_points(k, t):
    """Reference coordinates of parameters ``t`` on local edge ``k``."""
    a, b = LOCAL_EDGES[k]
    return (1.0 - t)[:, None] * REF_VERTICES[a] + t[:, None] * REF_VERTICES[b]


def _ref_edge_normal(k):
    a, b = LOCAL_EDGES[k]
    t = REF_VERTICES[b] - REF_VERTICES[a]
    return np.array([t[1], -t[0]]) / np.linalg.norm(t), np.linalg.norm(t)


# ---------------------------------------------------------------------------
# reference elements

class ReferenceElement:
    """Shape functions on the reference triangle.

    ``entities`` lists one tuple per local DOF: ``("v", k)`` for vertex k,
    ``("e", k, j)`` for the j-th DOF on local edge k, ``("i", j)`` for the
    j-th interior DOF.
    """

    family = None
    vector = False

    def __init__(self, degree):
        self.degree = degree
        self._coef = None

    @property
    def ndof(self):
        return len(self.entities)

    def values(self, pts):
        raise NotImplementedError

    def grads(self, pts):
        raise NotImplementedError


class LagrangeElement(ReferenceElement):
    family = LAGRANGE

    def __init__(self, degree):
        super().__init__(degree)
        p = degree
        nodes, ents = [], []
        # vertices, then edges (ordered from local a to b), then interior
        for k in range(3):
            nodes.append(REF_VERTICES[k])
            ents.append(("v", k))
        for k in range(3):
            a, b = LOCAL_EDGES[k]
            for j in range(1, p):
                t = j / p
                nodes.append((1 - t) * REF_VERTICES[a] + t * REF_VERTICES[b])
                ents.append(("e", k, j))
        n_int = 0
        for j in range(1, p):
            for i in range(1, p - j):
                nodes.append(np.array([i / p, j / p]))
                ents.append(("i", n_int))
                n_int += 1
        self.nodes = np.array(nodes)
        self.entities = ents
        V, _ = modal_scalar(p, self.nodes)
        self._coef = np.linalg.inv(V)

    def values(self, pts):
        v, _ = modal_scalar(self.degree, pts)
        return v @ self._coef

    def grads(self, pts):
        _, g = modal_scalar(self.degree, pts)
        return np.einsum("qmd,mi->qid", g, self._coef)


class DGElement(ReferenceElement):
    """Modal Dubiner basis scaled to unit mean-square on the element, so the
    first function is the constant 1 and the element mass matrix is
    ``|K| * I``; all DOFs interior."""

    family = DG
    _SCALE = np.sqrt(0.5)

    def __init__(self, degree):
        super().__init__(degree)
        n = (degree + 1) * (degree + 2) // 2
        self.entities = [("i", j) for j in range(n)]

    def values(self, pts):
        return self._SCALE * modal_scalar(self.degree, pts)[0]

    def grads(self, pts):
        return self._SCALE * modal_scalar(self.degree, pts)[1]


class CRElement(ReferenceElement):
    """P1 with facet-mean DOFs: ``phi_k = 1 - 2 lambda_k``."""

    family = CR

    def __init__(self, degree=1):
        super().__init__(1)
        self.entities = [("e", k, 0) for k in range(3)]

    def values(self, pts):
        x, y = pts[:, 0], pts[:, 1]
        lam = np.column_stack([1 - x - y, x, y])
        return 1.0 - 2.0 * lam

    def grads(self, pts):
        g = np.array([[2.0, 2.0], [-2.0, 0.0], [0.0, -2.0]])
        return np.broadcast_to(g, (len(pts), 3, 2)).copy()


class RTElement(ReferenceElement):
    """Raviart-Thomas ``P_p^2 + x P~_p``.

    DOFs: normal moments against Legendre polynomials ``L_j`` (j <= p) on
    each edge, parametrized from local vertex a to b, then interior moments
    against ``P_{p-1}^2``.
    """

    family = RT
    vector = True

    def __init__(self, degree):
        super().__init__(degree)
        p = degree
        ents = [("e", k, j) for k in range(3) for j in range(p + 1)]
        n_int = p * (p + 1)
        ents += [("i", j) for j in range(n_int)]
        self.entities = ents
        ndof = len(ents)
        D = np.zeros((ndof, ndof))
        row = 0
        er = edge_rule(2 * p + 2)
        for k in range(3):
            n_hat, length = _ref_edge_normal(k)
            pts = edge_points(k, er.points)
            vals, _ = modal_rt(p, pts)
            vn = vals @ n_hat                                 # (nq, m)
            L, _ = _legendre(p, er.points)                    # (p+1, nq)
            D[row:row + p + 1] = (L * er.weights * length) @ vn
            row += p + 1
        if p > 0:
            tr = triangle_rule(2 * p + 1)
            vals, _ = modal_rt(p, tr.points)
            q, _ = modal_scalar(p - 1, tr.points)             # (nq, mq)
            for c in range(2):
                D[row:row + q.shape[1]] = (q * tr.weights[:, None]).T @ vals[..., c]
                row += q.shape[1]
        assert row == ndof
        self._coef = np.linalg.inv(D)

    def values(self, pts):
        v, _ = modal_rt(self.degree, pts)
        return np.einsum("qmd,mi->qid", v, self._coef)

    def divs(self, pts):
        _, d = modal_rt(self.degree, pts)
        return d @ self._coef


@lru_cache(maxsize=None)
def reference_element(family, degree):
    cls = {DG: DGElement, LAGRANGE: LagrangeElement, RT: RTElement,
           CR: CRElement}[family]
    return cls(degree)


# ---------------------------------------------------------------------------
# global spaces

class FESpace:
    """Finite element space with its DOF map.

    Attributes
    ----------
    mesh : Triangulation
    family, degree, constraint
        ``constraint`` is ``None``, ``"D"`` (zero trace on the Dirichlet
        part, Lagrange/CR) or ``"N"`` (zero normal trace on the Neumann
        part, RT).
    dofs : ndarray, shape (nt, nloc)
        Global index of each local DOF, ``-1`` where constrained.
    signs : ndarray, shape (nt, nloc)
        Orientation signs; global basis = sign * mapped local basis.
    dim : int
    """

    def __init__(self, mesh, family, degree, constraint=None):
        if family not in FAMILIES:
            raise SpaceError(f"unknown family {family!r}")
        if not MIN_DEGREE[family] <= degree <= MAX_DEGREE[family]:
            raise SpaceError(f"{family} degree {degree} not supported")
        if constraint not in CONSTRAINTS[family]:
            raise SpaceError(f"constraint {constraint!r} invalid for {family}")
        self.mesh = mesh
        self.family = family
        self.degree = degree
        self.constraint = constraint
        self.ref = reference_element(family, degree)
        self._build_dofmap()
        self.dofs.setflags(write=False)
        self.signs.setflags(write=False)

    def __repr__(self):
        c = f", {self.constraint}" if self.constraint else ""
        return f"FESpace({self.family}{self.degree}{c}, dim={self.dim})"

    def _build_dofmap(self):
        mesh, ref, p = self.mesh, self.ref, self.degree
        T = mesh.triangles
        nt, nv, nf = mesh.ntriangles, mesh.nvertices, mesh.nfacets
        nloc = ref.ndof
        gid = np.zeros((nt, nloc), dtype=np.int64)
        sgn = np.ones((nt, nloc))
        edge_ndof = {LAGRANGE: p - 1, RT: p + 1, CR: 1, DG: 0}[self.family]
        n_int = sum(1 for e in ref.entities if e[0] == "i")
        edge_base = nv if self.family == LAGRANGE else 0
        int_base = edge_base + nf * edge_ndof
        for l, ent in enumerate(ref.entities):
            if ent[0] == "v":
                gid[:, l] = T[:, ent[1]]
            elif ent[0] == "e":
                k, j = ent[1], ent[2]
                a, b = LOCAL_EDGES[k]
                f = mesh.elem_facets[:, k]
                rev = T[:, a] > T[:, b]
                if self.family == LAGRANGE:
                    pos = np.where(rev, p - j, j)
                    gid[:, l] = edge_base + f * edge_ndof + pos - 1
                elif self.family == RT:
                    gid[:, l] = f * edge_ndof + j
                    interior = mesh.facet_elements[f, 1] >= 0
                    nsign = np.where(interior & rev, -1.0, 1.0)
                    psign = np.where(rev, (-1.0) ** j, 1.0)
                    sgn[:, l] = nsign * psign
                else:
                    gid[:, l] = f
            else:
                gid[:, l] = int_base + np.arange(nt) * n_int + ent[1]
        nglob = int_base + nt * n_int
        constrained = np.zeros(nglob, dtype=bool)
        if self.constraint is not None:
            facets = mesh.facets_tagged(self.constraint)
            if self.family == LAGRANGE:
                constrained[mesh.facets[facets].ravel()] = True
                for f in facets:
                    constrained[edge_base + f * edge_ndof:
                                edge_base + (f + 1) * edge_ndof] = True
            elif self.family == RT:
                for f in facets:
                    constrained[f * edge_ndof:(f + 1) * edge_ndof] = True
            else:
                constrained[facets] = True
        # Lagrange DOFs that no element touches do not exist (cannot happen
        # on a valid mesh, but keep numbering contiguous regardless)
        used = np.zeros(nglob, dtype=bool)
        used[gid.ravel()] = True
        keep = used & ~constrained
        renum = -np.ones(nglob, dtype=np.int64)
        renum[keep] = np.arange(keep.sum())
        self.dofs = renum[gid]
        self.signs = sgn
        self.dim = int(keep.sum())

    # -- evaluation -------------------------------------------------------
    def local_coefficients(self, coeffs, elements=None):
        """Local coefficients ``(ne, nloc)``; constrained DOFs 0.

        Orientation signs are not applied here; :meth:`eval_basis` carries
        them, so ``sum_i c[e, i] * phi[e, :, i]`` is the global field.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} coefficients, got {coeffs.shape}")
        d = self.dofs if elements is None else self.dofs[elements]
        return np.where(d >= 0, coeffs[np.maximum(d, 0)], 0.0)

    def eval_basis(self, elements, pts):
        """Physical basis data on ``elements`` at reference points ``pts``.

        Returns a dict with ``"val"`` ``(ne, nq, nloc)`` (``(ne, nq, nloc,
        2)`` for RT), and ``"grad"`` ``(ne, nq, nloc, 2)`` for scalar
        families or ``"div"`` ``(ne, nq, nloc)`` for RT.  Orientation signs
        are applied.
        """
        elements = np.atleast_1d(np.asarray(elements, dtype=np.int64))
        if elements.size and (elements.min() < 0
                              or elements.max() >= self.mesh.ntriangles):
            raise IndexError("element index out of range")
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        J = self.mesh.jacobians[elements]
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        s = self.signs[elements][:, None, :]
        out = {}
        if self.family == RT:
            v = self.ref.values(pts)
            out["val"] = (np.einsum("eab,qib->eqia", J, v)
                          / det[:, None, None, None] * s[..., None])
            out["div"] = self.ref.divs(pts)[None] / det[:, None, None] * s
        else:
            invJ = np.linalg.inv(J)
            out["val"] = self.ref.values(pts)[None] * s
            g = self.ref.grads(pts)
            out["grad"] = np.einsum("eba,qib->eqia", invJ, g) * s[..., None]
        return out

    def physical_points(self, elements, pts):
        """Physical coordinates ``(ne, nq, 2)`` of reference points."""
        elements = np.atleast_1d(np.asarray(elements, dtype=np.int64))
        J = self.mesh.jacobians[elements]
        v0 = self.mesh.vertices[self.mesh.triangles[elements, 0]]
        return v0[:, None, :] + np.einsum("eab,qb->eqa", J, np.asarray(pts))


def make_space(mesh, family, degree, constraint=None):
    """Build an :class:`FESpace`."""
    return FESpace(mesh, family, degree, constraint)


@dataclass
class DiscreteFunction:
    space: FESpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dim,):
            raise ValueError("coefficient length does not match space dim")


def evaluate(fn, elements, pts, what="val"):
    """Evaluate a discrete function (or its ``grad``/``div``)."""
    elements = np.atleast_1d(np.asarray(elements, dtype=np.int64))
    data = fn.space.eval_basis(elements, pts)[what]
    c = fn.space.local_coefficients(fn.coefficients, elements)
    if data.ndim == 4:
        return np.einsum("eqid,ei->eqd", data, c)
    return np.einsum("eqi,ei->eq", data, c)


def l2_project(space, target, quad_degree=None):
    """L2-orthogonal projection of a callable onto ``space``.

    ``target(x, y)`` takes coordinate arrays and returns values of the
    same shape (scalar spaces) or a tuple of two such arrays (RT).
    """
    from scipy.sparse.linalg import spsolve
    from .assembly import gram_l2, element_loads

    if quad_degree is None:
        quad_degree = 2 * space.degree + 4
    M = gram_l2(space)
    b = element_loads(space, target, quad_degree)
    c = spsolve(M.tocsc(), b)
    res = np.linalg.norm(M @ c - b)
    if res > 1e-10 * max(np.linalg.norm(b), 1e-300):
        raise RuntimeError(f"projection Gram system residual {res:.3e}")
    return DiscreteFunction(space, c)
